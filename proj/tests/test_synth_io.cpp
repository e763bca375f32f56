#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "planfill/io.hpp"
#include "planfill/metrics.hpp"
#include "planfill/synth.hpp"

using namespace planfill;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    const fs::path dir = fs::temp_directory_path() / "planfill-tests";
    fs::create_directories(dir);
    return dir;
}

void push_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(v & 0xff);
    out.push_back((v >> 8) & 0xff);
}

void push_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xff);
}

void push_tag(std::vector<std::uint8_t>& out, const char* tag) {
    out.insert(out.end(), tag, tag + 4);
}

// Minimal RIFF/WAVE writer for fixtures (independent of the code under test).
std::vector<std::uint8_t> wav_fixture(std::uint16_t channels, std::uint32_t rate,
                                      std::uint16_t bits,
                                      const std::vector<std::uint8_t>& payload) {
    std::vector<std::uint8_t> out;
    push_tag(out, "RIFF");
    push_u32(out, 36 + static_cast<std::uint32_t>(payload.size()));
    push_tag(out, "WAVE");
    push_tag(out, "fmt ");
    push_u32(out, 16);
    push_u16(out, bits == 32 ? 3 : 1);  // 3 = IEEE float
    push_u16(out, channels);
    push_u32(out, rate);
    push_u32(out, rate * channels * bits / 8);
    push_u16(out, channels * bits / 8);
    push_u16(out, bits);
    push_tag(out, "data");
    push_u32(out, static_cast<std::uint32_t>(payload.size()));
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

}  // namespace

TEST_CASE("read_wav: PCM16 scaling is exact, including -32768 -> -1.0") {
    std::vector<std::uint8_t> payload;
    const std::vector<std::int16_t> samples = {-32768, 0, 16384, 32767, -16384};
    for (std::int16_t s : samples)
        push_u16(payload, static_cast<std::uint16_t>(s));
    const fs::path path = temp_dir() / "pcm16.wav";
    write_bytes_atomic(path.string(), wav_fixture(1, 16000, 16, payload));
    const AudioClip clip = read_wav(path.string(), 16000);
    REQUIRE(clip.samples.size() == samples.size());
    CHECK(clip.sample_rate == 16000);
    CHECK(clip.samples[0] == -1.0);
    CHECK(clip.samples[1] == 0.0);
    CHECK(clip.samples[2] == 0.5);
    CHECK(clip.samples[3] == doctest::Approx(32767.0 / 32768.0).epsilon(1e-12));
    CHECK(clip.samples[4] == -0.5);
}

TEST_CASE("read_wav: stereo is averaged to mono") {
    std::vector<std::uint8_t> payload;
    // interleaved L,R pairs
    const std::vector<std::int16_t> inter = {16384, -16384, 32767, 32767, 0, 8192};
    for (std::int16_t s : inter) push_u16(payload, static_cast<std::uint16_t>(s));
    const fs::path path = temp_dir() / "stereo.wav";
    write_bytes_atomic(path.string(), wav_fixture(2, 16000, 16, payload));
    const AudioClip clip = read_wav(path.string(), 16000);
    REQUIRE(clip.samples.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        const double expect = 0.5 * (inter[2 * i] / 32768.0 + inter[2 * i + 1] / 32768.0);
        CHECK(clip.samples[i] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("read_wav: float32 payloads pass through") {
    std::vector<std::uint8_t> payload;
    const std::vector<float> samples = {0.0f, 0.25f, -0.75f, 1.0f};
    for (float f : samples) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        push_u32(payload, bits);
    }
    const fs::path path = temp_dir() / "float32.wav";
    write_bytes_atomic(path.string(), wav_fixture(1, 16000, 32, payload));
    const AudioClip clip = read_wav(path.string(), 16000);
    REQUIRE(clip.samples.size() == 4);
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(clip.samples[i] == doctest::Approx(samples[i]).epsilon(1e-7));
}

TEST_CASE("read_wav: resamples to the target rate") {
    std::vector<std::uint8_t> payload;
    for (int i = 0; i < 8001; ++i)
        push_u16(payload, static_cast<std::uint16_t>(std::int16_t(i % 100)));
    const fs::path path = temp_dir() / "rate8k.wav";
    write_bytes_atomic(path.string(), wav_fixture(1, 8000, 16, payload));
    const AudioClip clip = read_wav(path.string(), 16000);
    CHECK(clip.sample_rate == 16000);
    CHECK(clip.duration() == doctest::Approx(8000.0 / 8000.0).epsilon(1e-3));
}

TEST_CASE("read_wav: malformed header names a byte offset") {
    const fs::path path = temp_dir() / "bad.wav";
    write_bytes_atomic(path.string(), {'R', 'I', 'F', 'X', 0, 0, 0, 0});
    try {
        read_wav(path.string());
        FAIL("expected error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("at byte") != std::string::npos);
    }
}

TEST_CASE("write_wav / read_wav round trip") {
    std::vector<double> samples;
    for (int i = 0; i < 1600; ++i)
        samples.push_back(0.5 * std::sin(2.0 * M_PI * 440.0 * i / 16000.0));
    const AudioClip clip(16000, std::move(samples));
    const fs::path path = temp_dir() / "roundtrip.wav";
    write_wav(path.string(), clip);
    const AudioClip back = read_wav(path.string(), 16000);
    REQUIRE(back.samples.size() == clip.samples.size());
    for (std::size_t i = 0; i < clip.samples.size(); ++i)
        CHECK(std::abs(back.samples[i] - clip.samples[i]) <= 1.0 / 32768.0);
}

TEST_CASE("motion container: bitwise round trip") {
    FrameMatrix m(7, 5);
    for (std::size_t i = 0; i < m.data().size(); ++i)
        m.data()[i] = static_cast<float>(0.125 * static_cast<double>(i) - 2.0);
    const MotionSequence motion(20.0, m);
    const fs::path path = temp_dir() / "motion.bin";
    write_motion(path.string(), motion);
    const MotionSequence back = read_motion(path.string());
    CHECK(back.fps == motion.fps);
    REQUIRE(back.frames.frames() == 7);
    REQUIRE(back.frames.dims() == 5);
    for (std::size_t i = 0; i < m.data().size(); ++i)
        CHECK(back.frames.data()[i] == m.data()[i]);  // f32-exact values

    const auto bytes = read_bytes(path.string());
    write_motion((temp_dir() / "motion2.bin").string(), back);
    CHECK(read_bytes((temp_dir() / "motion2.bin").string()) == bytes);
}

TEST_CASE("motion container: distinct errors for magic, truncation, and CRC") {
    const fs::path good = temp_dir() / "motion-good.bin";
    write_motion(good.string(), MotionSequence(20.0, FrameMatrix(3, 2)));
    const auto bytes = read_bytes(good.string());

    auto write_variant = [&](const std::vector<std::uint8_t>& b, const char* name) {
        const fs::path p = temp_dir() / name;
        write_bytes_atomic(p.string(), b);
        return p.string();
    };

    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_WITH_AS(read_motion(write_variant(bad_magic, "m-magic.bin")),
                         doctest::Contains("magic"), std::runtime_error);

    auto truncated = bytes;
    truncated.resize(bytes.size() - 5);
    CHECK_THROWS_WITH_AS(read_motion(write_variant(truncated, "m-trunc.bin")),
                         doctest::Contains("truncat"), std::runtime_error);

    auto corrupt = bytes;
    corrupt[bytes.size() - 10] ^= 0x40;  // payload byte, CRC now stale
    CHECK_THROWS_WITH_AS(read_motion(write_variant(corrupt, "m-crc.bin")),
                         doctest::Contains("CRC"), std::runtime_error);
}

TEST_CASE("face container round trip") {
    FrameMatrix m(4, kFaceDims);
    for (std::size_t i = 0; i < m.data().size(); ++i)
        m.data()[i] = static_cast<float>(std::sin(0.1 * static_cast<double>(i)));
    const fs::path path = temp_dir() / "face.bin";
    write_face(path.string(), BlendshapeSequence(20.0, m));
    const BlendshapeSequence back = read_face(path.string());
    REQUIRE(back.frames.dims() == kFaceDims);
    for (std::size_t i = 0; i < m.data().size(); ++i)
        CHECK(back.frames.data()[i] ==
              static_cast<double>(static_cast<float>(m.data()[i])));
}

TEST_CASE("token JSON round trip") {
    TokenizedMotion tokens;
    tokens.codec_id = "abc123";
    tokens.source_fps = 20.0;
    tokens.source_frames = 9;
    for (std::uint32_t i = 0; i < 5; ++i) {
        TokenGroup g;
        g.residuals = {i, i + 1, i + 2, i + 3};
        tokens.groups.push_back(g);
    }
    const fs::path path = temp_dir() / "tokens.json";
    write_tokens(path.string(), tokens);
    const TokenizedMotion back = read_tokens(path.string());
    CHECK(back.codec_id == tokens.codec_id);
    CHECK(back.source_fps == tokens.source_fps);
    CHECK(back.source_frames == tokens.source_frames);
    CHECK(back.groups == tokens.groups);
}

TEST_CASE("manifest: round trip and duplicate-id rejection") {
    Manifest manifest;
    manifest.rows.push_back({"t0", "happy", "wave", "hi there", "a0.wav",
                             "m0.bin", std::nullopt});
    manifest.rows.push_back({"t1", "calm", "nod", "sure", "a1.wav", "m1.bin",
                             std::string("f1.bin")});
    const fs::path path = temp_dir() / "manifest.json";
    write_manifest(path.string(), manifest);
    const Manifest back = read_manifest(path.string(), false);
    REQUIRE(back.rows.size() == 2);
    CHECK(back.rows[0].id == "t0");
    CHECK(back.rows[1].face_path.has_value());
    CHECK(*back.rows[1].face_path == "f1.bin");
    CHECK(back.rows[0].utterance == "hi there");

    Manifest dup = manifest;
    dup.rows.push_back(manifest.rows[0]);
    const fs::path dpath = temp_dir() / "manifest-dup.json";
    write_manifest(dpath.string(), dup);
    CHECK_THROWS_WITH_AS(read_manifest(dpath.string(), false),
                         doctest::Contains("duplicate"), std::runtime_error);
}

TEST_CASE("manifest: check_files flags missing referenced files") {
    Manifest manifest;
    manifest.rows.push_back({"t0", "happy", "wave", "hi", "missing.wav",
                             "missing.bin", std::nullopt});
    const fs::path path = temp_dir() / "manifest-missing.json";
    write_manifest(path.string(), manifest);
    CHECK_THROWS_AS(read_manifest(path.string(), true), std::runtime_error);
    CHECK_NOTHROW(read_manifest(path.string(), false));
}

TEST_CASE("synth_turn: deterministic for a fixed spec") {
    SynthSpec spec;
    spec.duration = 2.0;
    spec.seed = 17;
    spec.noise_level = 0.05;
    const DialogueTurn a = synth_turn(spec);
    const DialogueTurn b = synth_turn(spec);
    CHECK(a.audio.samples == b.audio.samples);
    CHECK(a.motion.frames.data() == b.motion.frames.data());
    REQUIRE(a.face.has_value());
    CHECK(a.face->frames.data() == b.face->frames.data());
}

TEST_CASE("synth_turn: output shapes and validation") {
    SynthSpec spec;
    spec.duration = 3.0;
    const DialogueTurn turn = synth_turn(spec);
    CHECK(turn.audio.samples.size() == 48000);
    CHECK(turn.motion.frames.frames() == 60);
    CHECK(turn.motion.frames.dims() == kBodyDims);
    REQUIRE(turn.face.has_value());
    CHECK(turn.face->frames.dims() == kFaceDims);
    CHECK_NOTHROW(turn.validate());

    SynthSpec bad = spec;
    bad.duration = 0.5;
    CHECK_THROWS_AS(synth_turn(bad), std::invalid_argument);
    bad = spec;
    bad.label_class = "unknown";
    CHECK_THROWS_AS(synth_turn(bad), std::invalid_argument);
}

TEST_CASE("synth_turn: motion events land on the planted beats") {
    SynthSpec spec;
    spec.duration = 6.0;
    spec.seed = 5;
    const DialogueTurn turn = synth_turn(spec);
    const EventTimes events = extract_motion_events(turn.motion);
    const std::vector<double> beats = spec.beat_times();
    REQUIRE(beats.size() == 6);  // 0.5, 1.5, ..., 5.5
    REQUIRE(events.times.size() >= beats.size());
    for (double b : beats) {
        double best = 1e9;
        for (double e : events.times) best = std::min(best, std::abs(e - b));
        CHECK(best <= 1.0 / spec.fps + 1e-9);  // within one motion frame
    }
}

TEST_CASE("synth_turn: motion_offset shifts events by the planted delta") {
    SynthSpec spec;
    spec.duration = 6.0;
    spec.seed = 9;
    spec.motion_offset = 0.3;
    const DialogueTurn turn = synth_turn(spec);
    const EventTimes events = extract_motion_events(turn.motion);
    for (double b : spec.beat_times()) {
        double best = 1e9;
        for (double e : events.times)
            best = std::min(best, std::abs(e - (b + spec.motion_offset)));
        CHECK(best <= 1.0 / spec.fps + 1e-9);
    }
}

TEST_CASE("synth_corpus: labels cycle and per-turn seeds differ") {
    SynthSpec base;
    base.duration = 1.5;
    const auto specs = synth_corpus_specs(10, base, 3);
    REQUIRE(specs.size() == 10);
    for (std::size_t i = 0; i < specs.size(); ++i)
        CHECK(specs[i].label_class == kActionClasses[i % kActionClasses.size()]);
    CHECK(specs[0].seed != specs[1].seed);
    const auto turns = synth_corpus(3, base, 3);
    REQUIRE(turns.size() == 3);
    CHECK(turns[0].action_label == kActionClasses[0]);
    CHECK(turns[0].audio.samples != turns[1].audio.samples);
}

TEST_CASE("markov_corpus: shape and group structure") {
    const std::vector<std::vector<double>> transition = {{0.9, 0.1}, {0.4, 0.6}};
    const auto examples = markov_corpus(transition, {0.5, 0.5}, 20, 8, 2, 11);
    REQUIRE(examples.size() == 20);
    for (const PlannerExample& ex : examples) {
        CHECK(ex.keyframes.size() == 8);
        CHECK(ex.audio_ids == std::vector<std::uint32_t>(8, 0));
        for (const TokenGroup& g : ex.keyframes) {
            REQUIRE(g.residuals.size() == 2);
            CHECK(g.residuals[0] == g.residuals[1]);  // group j = all-j residuals
            CHECK(g.residuals[0] < 2);
        }
    }
    // determinism
    const auto again = markov_corpus(transition, {0.5, 0.5}, 20, 8, 2, 11);
    for (std::size_t i = 0; i < 20; ++i)
        CHECK(again[i].keyframes == examples[i].keyframes);
}
