#include "planfill/io.hpp"

#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace planfill {

// ---------------------------------------------------------------------------
// Raw bytes
// ---------------------------------------------------------------------------

std::vector<std::uint8_t> read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (in.bad()) throw std::runtime_error("read failed: " + path);
    return bytes;
}

void write_bytes_atomic(const std::string& path,
                        const std::vector<std::uint8_t>& bytes) {
    const fs::path target(path);
    if (!target.parent_path().empty()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.parent_path().empty()
                             ? fs::path(target.string() + ".tmp")
                             : target.parent_path() /
                                   (target.filename().string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open for writing: " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("write failed: " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec)
        throw std::runtime_error("rename failed: " + tmp.string() + " -> " + path +
                                 " (" + ec.message() + ")");
}

void write_text_atomic(const std::string& path, const std::string& text) {
    write_bytes_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string read_text(const std::string& path) {
    const auto bytes = read_bytes(path);
    return std::string(bytes.begin(), bytes.end());
}

// ---------------------------------------------------------------------------
// Little-endian scalar helpers
// ---------------------------------------------------------------------------

namespace {

std::uint32_t le_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) |
           (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t le_u16(const std::uint8_t* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_f32(std::vector<std::uint8_t>& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}

float le_f32(const std::uint8_t* p) {
    const std::uint32_t bits = le_u32(p);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

std::vector<double> resample_audio(const std::vector<double>& in,
                                   std::uint32_t src_rate, std::uint32_t dst_rate) {
    if (src_rate == dst_rate || in.empty()) return in;
    const auto n_out = static_cast<std::size_t>(std::llround(
        static_cast<double>(in.size()) * dst_rate / static_cast<double>(src_rate)));
    std::vector<double> out(std::max<std::size_t>(n_out, 1));
    const double step = static_cast<double>(src_rate) / dst_rate;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double pos = static_cast<double>(i) * step;
        const auto lo = static_cast<std::size_t>(pos);
        if (lo + 1 >= in.size()) {
            out[i] = in.back();
        } else {
            const double frac = pos - static_cast<double>(lo);
            out[i] = in[lo] * (1.0 - frac) + in[lo + 1] * frac;
        }
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// WAV
// ---------------------------------------------------------------------------

AudioClip read_wav(const std::string& path, std::uint32_t target_rate) {
    const std::vector<std::uint8_t> b = read_bytes(path);
    auto fail = [&](const std::string& what, std::size_t offset) {
        throw std::runtime_error("WAV error in " + path + " at byte " +
                                 std::to_string(offset) + ": " + what);
    };
    if (b.size() < 12) fail("file shorter than RIFF header", b.size());
    if (std::memcmp(b.data(), "RIFF", 4) != 0) fail("missing RIFF magic", 0);
    if (std::memcmp(b.data() + 8, "WAVE", 4) != 0) fail("missing WAVE tag", 8);

    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    bool have_fmt = false;
    const std::uint8_t* data = nullptr;
    std::size_t data_len = 0, data_off = 0;

    std::size_t pos = 12;
    while (pos + 8 <= b.size()) {
        const char* tag = reinterpret_cast<const char*>(b.data() + pos);
        const std::uint32_t len = le_u32(b.data() + pos + 4);
        const std::size_t body = pos + 8;
        if (body + len > b.size()) fail("chunk overruns file", pos);
        if (std::memcmp(tag, "fmt ", 4) == 0) {
            if (len < 16) fail("fmt chunk too short", pos);
            format = le_u16(b.data() + body);
            channels = le_u16(b.data() + body + 2);
            rate = le_u32(b.data() + body + 4);
            bits = le_u16(b.data() + body + 14);
            have_fmt = true;
        } else if (std::memcmp(tag, "data", 4) == 0) {
            data = b.data() + body;
            data_len = len;
            data_off = body;
        }
        pos = body + len + (len & 1);  // chunks are word-aligned
    }
    if (!have_fmt) fail("missing fmt chunk", b.size());
    if (!data) fail("missing data chunk", b.size());
    if (channels != 1 && channels != 2) fail("unsupported channel count", data_off);
    const bool pcm16 = format == 1 && bits == 16;
    const bool f32 = format == 3 && bits == 32;
    if (!pcm16 && !f32) fail("unsupported codec (need PCM16 or float32)", data_off);

    const std::size_t bytes_per = (pcm16 ? 2u : 4u) * channels;
    if (data_len % bytes_per != 0) fail("data chunk not frame-aligned", data_off);
    const std::size_t n = data_len / bytes_per;
    std::vector<double> mono(n);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
            const std::uint8_t* p = data + i * bytes_per + c * (pcm16 ? 2 : 4);
            if (pcm16) {
                const auto v = static_cast<std::int16_t>(le_u16(p));
                acc += static_cast<double>(v) / 32768.0;
            } else {
                acc += static_cast<double>(le_f32(p));
            }
        }
        mono[i] = acc / channels;
    }
    return AudioClip(target_rate, resample_audio(mono, rate, target_rate));
}

void write_wav(const std::string& path, const AudioClip& clip) {
    const std::size_t n = clip.samples.size();
    std::vector<std::uint8_t> out;
    out.reserve(44 + 2 * n);
    out.insert(out.end(), {'R', 'I', 'F', 'F'});
    put_u32(out, static_cast<std::uint32_t>(36 + 2 * n));
    out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
    put_u32(out, 16);
    put_u16(out, 1);  // PCM
    put_u16(out, 1);  // mono
    put_u32(out, clip.sample_rate);
    put_u32(out, clip.sample_rate * 2);
    put_u16(out, 2);
    put_u16(out, 16);
    out.insert(out.end(), {'d', 'a', 't', 'a'});
    put_u32(out, static_cast<std::uint32_t>(2 * n));
    for (double s : clip.samples) {
        double v = std::max(-1.0, std::min(1.0, s)) * 32768.0;
        const auto q = static_cast<std::int16_t>(
            std::max(-32768.0, std::min(32767.0, std::round(v))));
        put_u16(out, static_cast<std::uint16_t>(q));
    }
    write_bytes_atomic(path, out);
}

// ---------------------------------------------------------------------------
// Motion container
// ---------------------------------------------------------------------------

namespace {

std::vector<std::uint8_t> pack_motion(double fps, const FrameMatrix& frames) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), {'S', 'A', 'M', 'O'});
    put_u32(out, 1);
    put_f32(out, static_cast<float>(fps));
    put_u32(out, static_cast<std::uint32_t>(frames.frames()));
    put_u32(out, static_cast<std::uint32_t>(frames.dims()));
    for (double v : frames.data()) put_f32(out, static_cast<float>(v));
    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, out.data(), static_cast<uInt>(out.size())));
    put_u32(out, crc);
    return out;
}

std::pair<double, FrameMatrix> unpack_motion(const std::string& path) {
    const std::vector<std::uint8_t> b = read_bytes(path);
    if (b.size() < 4 || std::memcmp(b.data(), "SAMO", 4) != 0)
        throw std::runtime_error("motion file bad magic: " + path);
    if (b.size() < 24)
        throw std::runtime_error("motion file truncation: " + path);
    const std::uint32_t version = le_u32(b.data() + 4);
    if (version != 1)
        throw std::runtime_error("motion file unsupported version: " + path);
    const float fps = le_f32(b.data() + 8);
    const std::uint32_t frames = le_u32(b.data() + 12);
    const std::uint32_t dims = le_u32(b.data() + 16);
    const std::size_t expect = 20 + 4ull * frames * dims + 4;
    if (b.size() < expect)
        throw std::runtime_error("motion file truncation: " + path);
    if (b.size() > expect)
        throw std::runtime_error("motion file trailing bytes: " + path);
    const auto crc_stored = le_u32(b.data() + expect - 4);
    const auto crc_actual = static_cast<std::uint32_t>(
        crc32(0L, b.data(), static_cast<uInt>(expect - 4)));
    if (crc_stored != crc_actual)
        throw std::runtime_error("motion file CRC mismatch: " + path);
    FrameMatrix m(frames, dims);
    for (std::size_t i = 0; i < m.data().size(); ++i)
        m.data()[i] = static_cast<double>(le_f32(b.data() + 20 + 4 * i));
    return {static_cast<double>(fps), std::move(m)};
}

}  // namespace

void write_motion(const std::string& path, const MotionSequence& motion) {
    write_bytes_atomic(path, pack_motion(motion.fps, motion.frames));
}

MotionSequence read_motion(const std::string& path) {
    auto [fps, frames] = unpack_motion(path);
    return MotionSequence(fps, std::move(frames));
}

void write_face(const std::string& path, const BlendshapeSequence& face) {
    write_bytes_atomic(path, pack_motion(face.fps, face.frames));
}

BlendshapeSequence read_face(const std::string& path) {
    auto [fps, frames] = unpack_motion(path);
    return BlendshapeSequence(fps, std::move(frames));
}

// ---------------------------------------------------------------------------
// Token JSON
// ---------------------------------------------------------------------------

void write_tokens(const std::string& path, const TokenizedMotion& tokens) {
    ordered_json j;
    j["codec_id"] = tokens.codec_id;
    j["source_fps"] = tokens.source_fps;
    j["source_frames"] = tokens.source_frames;
    j["groups"] = ordered_json::array();
    for (const TokenGroup& g : tokens.groups) j["groups"].push_back(g.residuals);
    write_text_atomic(path, j.dump(2) + "\n");
}

TokenizedMotion read_tokens(const std::string& path) {
    ordered_json j;
    try {
        j = ordered_json::parse(read_text(path));
    } catch (const ordered_json::parse_error& e) {
        throw std::runtime_error("token file parse error: " + path + ": " + e.what());
    }
    TokenizedMotion tokens;
    try {
        tokens.codec_id = j.at("codec_id").get<std::string>();
        tokens.source_fps = j.at("source_fps").get<double>();
        tokens.source_frames = j.at("source_frames").get<std::size_t>();
        for (const auto& row : j.at("groups")) {
            TokenGroup g;
            g.residuals = row.get<std::vector<std::uint32_t>>();
            tokens.groups.push_back(std::move(g));
        }
    } catch (const ordered_json::exception& e) {
        throw std::runtime_error("token file schema error: " + path + ": " + e.what());
    }
    return tokens;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

Manifest read_manifest(const std::string& path, bool check_files) {
    ordered_json j;
    try {
        j = ordered_json::parse(read_text(path));
    } catch (const ordered_json::parse_error& e) {
        throw std::runtime_error("manifest parse error: " + path + ": " + e.what());
    }
    Manifest m;
    const fs::path base = fs::path(path).parent_path();
    std::set<std::string> ids;
    try {
        for (const auto& row : j.at("rows")) {
            ManifestRow r;
            r.id = row.at("id").get<std::string>();
            r.expression_label = row.at("expression_label").get<std::string>();
            r.action_label = row.at("action_label").get<std::string>();
            r.utterance = row.at("utterance").get<std::string>();
            r.audio_path = row.at("audio_path").get<std::string>();
            r.motion_path = row.at("motion_path").get<std::string>();
            if (row.contains("face_path") && !row.at("face_path").is_null())
                r.face_path = row.at("face_path").get<std::string>();
            if (!ids.insert(r.id).second)
                throw std::runtime_error("manifest duplicate id '" + r.id + "': " + path);
            if (check_files) {
                for (const std::string* p :
                     {&r.audio_path, &r.motion_path,
                      r.face_path ? &*r.face_path : &r.audio_path}) {
                    const fs::path resolved =
                        fs::path(*p).is_absolute() ? fs::path(*p) : base / *p;
                    if (!fs::exists(resolved))
                        throw std::runtime_error("manifest references missing file: " +
                                                 resolved.string());
                }
            }
            m.rows.push_back(std::move(r));
        }
    } catch (const ordered_json::exception& e) {
        throw std::runtime_error("manifest schema error: " + path + ": " + e.what());
    }
    return m;
}

void write_manifest(const std::string& path, const Manifest& manifest) {
    ordered_json j;
    j["rows"] = ordered_json::array();
    for (const ManifestRow& r : manifest.rows) {
        ordered_json row;
        row["id"] = r.id;
        row["expression_label"] = r.expression_label;
        row["action_label"] = r.action_label;
        row["utterance"] = r.utterance;
        row["audio_path"] = r.audio_path;
        row["motion_path"] = r.motion_path;
        if (r.face_path) row["face_path"] = *r.face_path;
        j["rows"].push_back(std::move(row));
    }
    write_text_atomic(path, j.dump(2) + "\n");
}

}  // namespace planfill
