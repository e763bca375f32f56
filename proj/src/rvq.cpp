#include "planfill/rvq.hpp"

#include <openssl/sha.h>

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace planfill {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 24));
}

void put_f32(std::vector<std::uint8_t>& out, float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(out, v);
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t& pos) {
    if (pos + 4 > in.size()) throw std::runtime_error("RvqCodec: truncated file");
    std::uint32_t v = in[pos] | (in[pos + 1] << 8) | (in[pos + 2] << 16) |
                      (static_cast<std::uint32_t>(in[pos + 3]) << 24);
    pos += 4;
    return v;
}

float get_f32(const std::vector<std::uint8_t>& in, std::size_t& pos) {
    const std::uint32_t v = get_u32(in, pos);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
}

// 2x temporal downsample by averaging adjacent frame pairs; an odd tail
// frame stands alone.
FrameMatrix downsample2(const FrameMatrix& frames) {
    const std::size_t T = frames.frames(), D = frames.dims();
    const std::size_t out_t = (T + 1) / 2;
    FrameMatrix out(out_t, D);
    for (std::size_t i = 0; i < out_t; ++i) {
        const std::size_t a = 2 * i;
        const std::size_t b = std::min(a + 1, T - 1);
        for (std::size_t d = 0; d < D; ++d)
            out.at(i, d) = 0.5 * (frames.at(a, d) + frames.at(b, d));
        if (b == a)  // odd tail, single frame
            for (std::size_t d = 0; d < D; ++d) out.at(i, d) = frames.at(a, d);
    }
    return out;
}

void round_to_f32(std::vector<double>& v) {
    for (double& x : v) x = static_cast<double>(static_cast<float>(x));
}

}  // namespace

std::string sha256_hex(const std::uint8_t* data, std::size_t len) {
    unsigned char digest[SHA256_DIGEST_LENGTH];
    SHA256(data, len, digest);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(SHA256_DIGEST_LENGTH * 2);
    for (unsigned char c : digest) {
        out.push_back(hex[c >> 4]);
        out.push_back(hex[c & 0xf]);
    }
    return out;
}

std::vector<std::uint8_t> RvqCodec::serialize() const {
    std::vector<std::uint8_t> out;
    out.push_back('S'); out.push_back('A'); out.push_back('V'); out.push_back('Q');
    put_u32(out, 1);  // version
    put_u32(out, static_cast<std::uint32_t>(n_layers()));
    put_u32(out, static_cast<std::uint32_t>(k));
    put_u32(out, static_cast<std::uint32_t>(feature_dim));
    put_u32(out, static_cast<std::uint32_t>(temporal_factor));
    for (double v : feature_mean) put_f32(out, static_cast<float>(v));
    for (double v : feature_scale) put_f32(out, static_cast<float>(v));
    for (const Codebook& cb : layers)
        for (double v : cb.vectors) put_f32(out, static_cast<float>(v));
    unsigned char digest[SHA256_DIGEST_LENGTH];
    SHA256(out.data(), out.size(), digest);
    out.insert(out.end(), digest, digest + SHA256_DIGEST_LENGTH);
    return out;
}

RvqCodec RvqCodec::deserialize(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 4 + 5 * 4 + SHA256_DIGEST_LENGTH)
        throw std::runtime_error("RvqCodec: truncated file");
    if (std::memcmp(bytes.data(), "SAVQ", 4) != 0)
        throw std::runtime_error("RvqCodec: bad magic");
    const std::size_t body_len = bytes.size() - SHA256_DIGEST_LENGTH;
    unsigned char digest[SHA256_DIGEST_LENGTH];
    SHA256(bytes.data(), body_len, digest);
    if (std::memcmp(digest, bytes.data() + body_len, SHA256_DIGEST_LENGTH) != 0)
        throw std::runtime_error("RvqCodec: content hash mismatch");

    std::size_t pos = 4;
    const std::uint32_t version = get_u32(bytes, pos);
    if (version != 1) throw std::runtime_error("RvqCodec: unsupported version");
    RvqCodec codec;
    const std::uint32_t n_layers = get_u32(bytes, pos);
    codec.k = get_u32(bytes, pos);
    codec.feature_dim = get_u32(bytes, pos);
    codec.temporal_factor = get_u32(bytes, pos);
    codec.feature_mean.resize(codec.feature_dim);
    codec.feature_scale.resize(codec.feature_dim);
    for (double& v : codec.feature_mean) v = get_f32(bytes, pos);
    for (double& v : codec.feature_scale) v = get_f32(bytes, pos);
    codec.layers.resize(n_layers);
    for (Codebook& cb : codec.layers) {
        cb.k = codec.k;
        cb.dim = codec.feature_dim;
        cb.vectors.resize(cb.k * cb.dim);
        for (double& v : cb.vectors) v = get_f32(bytes, pos);
    }
    if (pos != body_len) throw std::runtime_error("RvqCodec: trailing bytes");
    return codec;
}

std::string RvqCodec::content_id() const {
    const std::vector<std::uint8_t> bytes = serialize();
    // id = the trailing hash, which covers everything before it
    return sha256_hex(bytes.data(), bytes.size() - SHA256_DIGEST_LENGTH);
}

std::uint32_t to_unified_id(const RvqCodec& codec, std::size_t layer_1based,
                            std::uint32_t raw_index) {
    if (layer_1based < 1 || layer_1based > codec.n_layers())
        throw std::out_of_range("to_unified_id: layer out of range");
    if (raw_index >= codec.k)
        throw std::out_of_range("to_unified_id: raw index out of range");
    return raw_index + static_cast<std::uint32_t>(codec.k * (layer_1based - 1));
}

std::pair<std::size_t, std::uint32_t> from_unified_id(const RvqCodec& codec,
                                                      std::uint32_t id) {
    if (id >= codec.unified_vocab_size())
        throw std::out_of_range("from_unified_id: id out of range");
    return {id / codec.k + 1, static_cast<std::uint32_t>(id % codec.k)};
}

RvqTrainResult train_codec(const std::vector<FrameMatrix>& corpus,
                           std::size_t n_layers, std::size_t k,
                           std::uint64_t seed) {
    if (corpus.empty()) throw std::invalid_argument("train_codec: empty corpus");
    const std::size_t D = corpus.front().dims();
    for (const FrameMatrix& m : corpus)
        if (m.dims() != D)
            throw std::invalid_argument("train_codec: inconsistent feature dims");

    // Pool downsampled frames
    std::size_t total = 0;
    std::vector<FrameMatrix> down;
    down.reserve(corpus.size());
    for (const FrameMatrix& m : corpus) {
        down.push_back(downsample2(m));
        total += down.back().frames();
    }
    if (total < k)
        throw std::invalid_argument("train_codec: insufficient frames for k clusters");

    FrameMatrix pooled(total, D);
    {
        std::size_t row = 0;
        for (const FrameMatrix& m : down)
            for (std::size_t t = 0; t < m.frames(); ++t, ++row)
                std::memcpy(pooled.row(row), m.row(t), D * sizeof(double));
    }

    RvqCodec codec;
    codec.k = k;
    codec.feature_dim = D;
    codec.feature_mean.assign(D, 0.0);
    codec.feature_scale.assign(D, 1.0);
    for (std::size_t t = 0; t < total; ++t)
        for (std::size_t d = 0; d < D; ++d) codec.feature_mean[d] += pooled.at(t, d);
    for (double& v : codec.feature_mean) v /= static_cast<double>(total);
    std::vector<double> var(D, 0.0);
    for (std::size_t t = 0; t < total; ++t)
        for (std::size_t d = 0; d < D; ++d) {
            const double diff = pooled.at(t, d) - codec.feature_mean[d];
            var[d] += diff * diff;
        }
    for (std::size_t d = 0; d < D; ++d) {
        const double sd = std::sqrt(var[d] / static_cast<double>(total));
        codec.feature_scale[d] = sd > 1e-12 ? sd : 1.0;
    }
    round_to_f32(codec.feature_mean);
    round_to_f32(codec.feature_scale);

    // Residual descent over layers
    FrameMatrix residual(total, D);
    for (std::size_t t = 0; t < total; ++t)
        for (std::size_t d = 0; d < D; ++d)
            residual.at(t, d) =
                (pooled.at(t, d) - codec.feature_mean[d]) / codec.feature_scale[d];

    RvqTrainStats stats;
    auto energy = [&]() {
        double acc = 0.0;
        for (double v : residual.data()) acc += v * v;
        return acc / static_cast<double>(total);
    };
    stats.residual_energy.push_back(energy());
    for (std::size_t layer = 0; layer < n_layers; ++layer) {
        Codebook cb = kmeans_fit(residual, k, seed + layer);
        round_to_f32(cb.vectors);
        const std::vector<std::size_t> assign = kmeans_assign(cb, residual);
        for (std::size_t t = 0; t < total; ++t) {
            const double* c = cb.centroid(assign[t]);
            for (std::size_t d = 0; d < D; ++d) residual.at(t, d) -= c[d];
        }
        codec.layers.push_back(std::move(cb));
        stats.residual_energy.push_back(energy());
    }
    return {std::move(codec), std::move(stats)};
}

namespace {

TokenizedMotion encode_frames(const RvqCodec& codec, const FrameMatrix& frames,
                              double fps) {
    if (frames.dims() != codec.feature_dim)
        throw std::invalid_argument("encode: feature dimension mismatch");
    const FrameMatrix down = downsample2(frames);
    const std::size_t D = codec.feature_dim;

    TokenizedMotion out;
    out.source_fps = fps;
    out.source_frames = frames.frames();
    out.codec_id = codec.content_id();
    out.groups.reserve(down.frames());
    std::vector<double> residual(D);
    for (std::size_t t = 0; t < down.frames(); ++t) {
        for (std::size_t d = 0; d < D; ++d)
            residual[d] =
                (down.at(t, d) - codec.feature_mean[d]) / codec.feature_scale[d];
        TokenGroup group;
        group.residuals.reserve(codec.n_layers());
        for (const Codebook& cb : codec.layers) {
            const std::size_t idx = kmeans_assign_one(cb, residual.data());
            const double* c = cb.centroid(idx);
            for (std::size_t d = 0; d < D; ++d) residual[d] -= c[d];
            group.residuals.push_back(static_cast<std::uint32_t>(idx));
        }
        out.groups.push_back(std::move(group));
    }
    return out;
}

FrameMatrix decode_frames(const RvqCodec& codec, const TokenizedMotion& tokens,
                          std::size_t layers_used) {
    if (!tokens.codec_id.empty() && tokens.codec_id != codec.content_id())
        throw std::runtime_error("decode: codec identity mismatch");
    if (layers_used == 0 || layers_used > codec.n_layers())
        layers_used = codec.n_layers();
    const std::size_t D = codec.feature_dim;
    const std::size_t n = tokens.groups.size();
    if (n == 0) throw std::invalid_argument("decode: empty token sequence");

    FrameMatrix steps(n, D);
    for (std::size_t t = 0; t < n; ++t) {
        const TokenGroup& g = tokens.groups[t];
        if (g.residuals.size() != codec.n_layers())
            throw std::invalid_argument("decode: token group layer count mismatch");
        double* row = steps.row(t);
        for (std::size_t layer = 0; layer < layers_used; ++layer) {
            const std::uint32_t idx = g.residuals[layer];
            if (idx >= codec.k)
                throw std::out_of_range("decode: token index out of range");
            const double* c = codec.layers[layer].centroid(idx);
            for (std::size_t d = 0; d < D; ++d) row[d] += c[d];
        }
        for (std::size_t d = 0; d < D; ++d)
            row[d] = row[d] * codec.feature_scale[d] + codec.feature_mean[d];
    }

    const bool odd_tail = tokens.source_frames != 0 && tokens.source_frames % 2 == 1;
    const std::size_t out_t = odd_tail ? 2 * n - 1 : 2 * n;
    FrameMatrix out(out_t, D);
    for (std::size_t t = 0; t < out_t; ++t) {
        const std::size_t i = t / 2;
        double* row = out.row(t);
        if (t % 2 == 0 || i + 1 >= n) {
            std::memcpy(row, steps.row(i), D * sizeof(double));
        } else {
            const double* a = steps.row(i);
            const double* b = steps.row(i + 1);
            for (std::size_t d = 0; d < D; ++d) row[d] = 0.5 * (a[d] + b[d]);
        }
    }
    return out;
}

}  // namespace

TokenizedMotion encode(const RvqCodec& codec, const MotionSequence& motion) {
    return encode_frames(codec, motion.frames, motion.fps);
}

MotionSequence decode(const RvqCodec& codec, const TokenizedMotion& tokens,
                      std::size_t layers_used) {
    return MotionSequence(tokens.source_fps,
                          decode_frames(codec, tokens, layers_used));
}

std::vector<double> latent_features(const RvqCodec& codec,
                                    const MotionSequence& motion) {
    if (motion.frames.dims() != codec.feature_dim)
        throw std::invalid_argument("latent_features: feature dimension mismatch");
    const FrameMatrix down = downsample2(motion.frames);
    const std::size_t D = codec.feature_dim;
    std::vector<double> out(D, 0.0);
    for (std::size_t t = 0; t < down.frames(); ++t)
        for (std::size_t d = 0; d < D; ++d)
            out[d] += (down.at(t, d) - codec.feature_mean[d]) / codec.feature_scale[d];
    for (double& v : out) v /= static_cast<double>(down.frames());
    return out;
}

TokenizedMotion encode_face(const RvqCodec& codec, const BlendshapeSequence& face) {
    return encode_frames(codec, face.frames, face.fps);
}

BlendshapeSequence decode_face(const RvqCodec& codec, const TokenizedMotion& tokens) {
    return BlendshapeSequence(tokens.source_fps, decode_frames(codec, tokens, 0));
}

}  // namespace planfill
