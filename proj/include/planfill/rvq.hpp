#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "planfill/dsp.hpp"
#include "planfill/types.hpp"

namespace planfill {

// One raw index per quantizer layer at a single downsampled timestep.
struct TokenGroup {
    std::vector<std::uint32_t> residuals;

    bool operator==(const TokenGroup& o) const { return residuals == o.residuals; }
    // Lexicographic on unified ids, i.e. layer-wise on raw indices.
    bool operator<(const TokenGroup& o) const { return residuals < o.residuals; }
};

struct TokenizedMotion {
    std::vector<TokenGroup> groups;  // one per downsampled timestep
    double source_fps = 20.0;
    std::size_t source_frames = 0;  // original frame count (carries tail parity)
    std::string codec_id;
};

// Residual vector quantizer over standardized pose features with 2x temporal
// down/upsampling. Body: 4 layers x 512 codes; face: 2 layers x 512 codes.
struct RvqCodec {
    std::vector<Codebook> layers;
    std::size_t k = 512;
    std::size_t feature_dim = 0;
    std::size_t temporal_factor = 2;
    std::vector<double> feature_mean;
    std::vector<double> feature_scale;  // population std; zero-variance dims get 1

    std::size_t n_layers() const { return layers.size(); }
    std::size_t unified_vocab_size() const { return k * n_layers(); }

    // Content hash (SHA-256 hex) of the serialized codec.
    std::string content_id() const;
    std::vector<std::uint8_t> serialize() const;
    static RvqCodec deserialize(const std::vector<std::uint8_t>& bytes);
};

struct RvqTrainStats {
    // Mean squared residual norm entering each layer (index 0 = raw features)
    // and after the final layer.
    std::vector<double> residual_energy;
};

struct RvqTrainResult {
    RvqCodec codec;
    RvqTrainStats stats;
};

// Unified-vocabulary mapping: id = r + K*(k-1), k 1-based.
std::uint32_t to_unified_id(const RvqCodec& codec, std::size_t layer_1based,
                            std::uint32_t raw_index);
std::pair<std::size_t, std::uint32_t> from_unified_id(const RvqCodec& codec,
                                                      std::uint32_t id);

RvqTrainResult train_codec(const std::vector<FrameMatrix>& corpus,
                           std::size_t n_layers, std::size_t k,
                           std::uint64_t seed);

TokenizedMotion encode(const RvqCodec& codec, const MotionSequence& motion);

// Reconstructs motion from tokens; layers_used = 0 means all layers.
MotionSequence decode(const RvqCodec& codec, const TokenizedMotion& tokens,
                      std::size_t layers_used = 0);

// Standardized, downsampled features mean-pooled over time.
std::vector<double> latent_features(const RvqCodec& codec,
                                    const MotionSequence& motion);

// Convenience wrappers for the face pathway (51-dim, 2 layers).
TokenizedMotion encode_face(const RvqCodec& codec, const BlendshapeSequence& face);
BlendshapeSequence decode_face(const RvqCodec& codec, const TokenizedMotion& tokens);

std::string sha256_hex(const std::uint8_t* data, std::size_t len);

}  // namespace planfill
