#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "planfill/dsp.hpp"
#include "planfill/rvq.hpp"
#include "planfill/types.hpp"

namespace planfill {

// ---------------------------------------------------------------------------
// Audio features for planning and infilling
// ---------------------------------------------------------------------------

// Frame-level audio features: log1p mel bands plus the onset strength value,
// resampled to rows_per_sec. Output is rows x (n_mels + 1).
FrameMatrix audio_feature_matrix(const AudioClip& clip, const MelConfig& cfg,
                                 double rows_per_sec);

// Dense per-row quantizer assignment, then rows 0, t, 2t, ... kept.
std::vector<std::uint32_t> audio_tokens(const FrameMatrix& features,
                                        const Codebook& quantizer, std::size_t t);

// ---------------------------------------------------------------------------
// Planner
// ---------------------------------------------------------------------------

struct PlannerToken {
    enum class Kind { Label, Audio, Step, Len, Motion };
    Kind kind;
    std::uint32_t value = 0;  // audio id, step, length, or unified motion id
    std::string text;         // label text
};

// One training/inference example for the keyframe planner.
struct PlannerExample {
    std::string label;
    std::vector<std::uint32_t> audio_ids;  // sparse, one per keyframe position
    std::vector<TokenGroup> keyframes;     // aligned with audio_ids
    bool continuation = false;
    // Continuation mode: the last two keyframe audio-motion pairs of the
    // pseudo-history; audio_ids/keyframes then hold only the target tail.
    std::vector<std::pair<std::uint32_t, TokenGroup>> prefix;
};

// Flat token-sequence form (standard mode leads with [S_t], continuation
// with [len]); parse() is its exact inverse.
std::vector<PlannerToken> to_token_sequence(const PlannerExample& ex,
                                            const RvqCodec& codec, std::size_t t);
PlannerExample parse_token_sequence(const std::vector<PlannerToken>& tokens,
                                    const RvqCodec& codec, std::size_t t);

// Standard or continuation planner example from one tokenized turn.
// continuation_split = number of leading keyframes used as pseudo-history.
PlannerExample build_training_sequence(
    const std::string& label, const TokenizedMotion& tokens,
    const std::vector<std::uint32_t>& sparse_audio_ids, std::size_t t,
    std::optional<std::size_t> continuation_split = std::nullopt);

// Count-based autoregressive model over keyframe token groups with Laplace
// smoothing and backoff to shorter group contexts.
class PlannerModel {
public:
    PlannerModel() = default;

    static PlannerModel fit(const std::vector<PlannerExample>& examples,
                            std::size_t order, double alpha, std::size_t t,
                            std::size_t n_layers, std::size_t k);

    struct Distribution {
        std::vector<double> probs;  // over vocab(), sums to 1
        bool uniform_fallback = false;
    };

    // Backoff chain: (class, audio, last j groups) for j = order..0, then
    // (class) alone, then a flagged uniform distribution.
    Distribution distribution(std::size_t class_id, std::uint32_t audio_id,
                              const std::vector<TokenGroup>& context) const;

    std::size_t resolve_class(const std::string& label, bool* used_default) const;
    const std::vector<TokenGroup>& vocab() const { return vocab_; }
    const std::vector<std::string>& classes() const { return classes_; }
    std::size_t order() const { return order_; }
    std::size_t step() const { return t_; }
    double alpha() const { return alpha_; }

    std::vector<std::uint8_t> serialize() const;
    static PlannerModel deserialize(const std::vector<std::uint8_t>& bytes);
    std::string content_id() const;

private:
    std::size_t order_ = 1;
    double alpha_ = 0.1;
    std::size_t t_ = 4;
    std::size_t n_layers_ = 4;
    std::size_t k_ = 512;
    std::vector<TokenGroup> vocab_;          // sorted by unified ids
    std::vector<std::string> classes_;       // sorted label strings
    std::size_t default_class_ = 0;          // most frequent class
    std::map<std::string, std::vector<std::uint64_t>> counts_;  // key -> per-vocab

    std::string make_key(std::size_t class_id, std::optional<std::uint32_t> audio_id,
                         const std::vector<TokenGroup>& context,
                         std::size_t ctx_len) const;
    friend struct PlannerModelAccess;
};

struct PlanResult {
    std::vector<TokenGroup> keyframes;
    bool used_default_class = false;
    bool uniform_fallback = false;
    // Context groups consulted at each position (most recent last).
    std::vector<std::vector<TokenGroup>> context_trace;
};

// One keyframe group per sparse audio token. Greedy decoding (argmax, ties to
// the lowest unified id) when sample=false, else seeded sampling. The prefix,
// when present, must hold exactly the last two keyframe pairs of the previous
// turn.
PlanResult plan_keyframes(
    const PlannerModel& model, const std::string& label,
    const std::vector<std::uint32_t>& sparse_audio_ids,
    const std::vector<std::pair<std::uint32_t, TokenGroup>>* prefix,
    std::uint64_t seed, bool sample = false);

// ---------------------------------------------------------------------------
// Infill windows and iterative refinement
// ---------------------------------------------------------------------------

// A window of t+1 token slots. A slot is known (holds a group), masked
// (to be filled), or absent (beyond the sequence end). Body windows keep
// positions 0 and t known; those boundaries are never modified.
struct InfillWindow {
    std::size_t t = 4;
    std::vector<std::optional<TokenGroup>> slots;  // t+1 entries
    std::vector<bool> masked;                      // t+1 entries
    FrameMatrix audio;                             // (t+1) x F feature rows

    static InfillWindow body(const TokenGroup& left,
                             const std::optional<TokenGroup>& right, std::size_t t,
                             FrameMatrix audio);
    std::size_t masked_count() const;
};

struct SlotScore {
    std::size_t position = 0;
    // Candidates sorted by descending probability; ties by ascending group.
    std::vector<std::pair<TokenGroup, double>> candidates;
    double confidence = 0.0;  // top candidate probability mass
};

using InfillScorer = std::function<std::vector<SlotScore>(const InfillWindow&)>;

struct RefinementTrace {
    std::vector<std::vector<std::size_t>> accepted_per_round;  // positions
};

// Iterative confidence refinement: each round accepts the
// ceil(remaining / remaining_rounds) most confident slot predictions
// (ties to the leftmost slot, then lowest group). All masks resolve within
// `steps` rounds; known slots are never modified.
RefinementTrace infill_window(InfillWindow& window, const InfillScorer& scorer,
                              std::size_t steps = 6);

// ---------------------------------------------------------------------------
// Retrieval scorer (deterministic stand-in backend for the infiller)
// ---------------------------------------------------------------------------

struct IndexedWindow {
    std::vector<TokenGroup> slots;  // t+1 groups
    std::vector<double> audio;      // flattened (t+1) x F rows
};

struct RetrievalIndex {
    std::size_t t = 4;
    std::size_t feature_dim = 0;  // F
    std::vector<IndexedWindow> entries;
    std::vector<double> audio_mean;   // per flattened feature
    std::vector<double> audio_scale;  // population std, zero-variance -> 1

    void add(const std::vector<TokenGroup>& slots, const FrameMatrix& audio);
    void finalize();  // computes audio standardization stats

    std::vector<std::uint8_t> serialize() const;
    static RetrievalIndex deserialize(const std::vector<std::uint8_t>& bytes);
};

// Distance = known-slot token mismatch count + lambda * standardized audio L2.
// Per masked slot, similarity-weighted neighbor votes; an exact (zero
// distance) match returns its interior with confidence 1.
InfillScorer retrieval_scorer(const RetrievalIndex& index, std::size_t k_nn,
                              double lambda = 1.0);

// ---------------------------------------------------------------------------
// Masked training windows
// ---------------------------------------------------------------------------

struct TrainingWindow {
    InfillWindow window;                         // masked/corrupted inputs
    std::vector<TokenGroup> target;              // original t+1 groups
    std::vector<bool> loss_mask;                 // interior only
    std::vector<std::vector<bool>> corrupted;    // (t+1) x n_layers flags
};

// Sliding windows of t+1 groups at stride t. Interior slots are masked
// i.i.d. at mask_rate (at least one per window); surviving interior tokens
// are corrupted with probability corrupt_rate to a uniform random in-layer
// token. Boundaries are never masked nor corrupted.
std::vector<TrainingWindow> mask_training_windows(
    const TokenizedMotion& tokens, std::size_t t, double mask_rate,
    std::size_t codebook_size, double corrupt_rate = 0.10,
    std::uint64_t seed = 0);

// Clean sliding windows (for retrieval index construction). When the audio
// feature matrix is provided, rows are sliced per window position.
std::vector<IndexedWindow> sliding_windows(const std::vector<TokenGroup>& groups,
                                           std::size_t t,
                                           const FrameMatrix* audio_rows);

// ---------------------------------------------------------------------------
// End-to-end generation
// ---------------------------------------------------------------------------

struct GenerationModels {
    RvqCodec body_codec;
    RvqCodec face_codec;
    PlannerModel planner;
    RetrievalIndex body_index;
    RetrievalIndex face_index;
    Codebook audio_quantizer;
    MelConfig mel;
    std::size_t t = 4;
    std::size_t k_nn = 8;
    double lambda = 1.0;

    double token_rate() const { return 20.0 / body_codec.temporal_factor; }
};

struct WindowTrace {
    std::size_t left_step = 0;
    RefinementTrace refinement;
};

struct GenerationResult {
    MotionSequence motion;
    BlendshapeSequence face;
    std::vector<TokenGroup> keyframes;
    std::vector<TokenGroup> body_groups;  // full downsampled token timeline
    std::vector<WindowTrace> body_windows;
    std::vector<WindowTrace> face_windows;
    bool used_default_class = false;
    double body_ms = 0.0;
    double face_ms = 0.0;
};

// Full two-pathway generation for one turn. Body: audio tokens -> keyframe
// plan -> per-window infill -> RVQ decode. Face: all-masked windows scored
// directly from audio (no planner) -> face RVQ decode. The two pathways run
// concurrently with independent derived seeds.
GenerationResult generate_turn(const GenerationModels& models,
                               const std::string& label, const AudioClip& clip,
                               std::uint64_t seed);

// Multi-turn streaming session. Turn n > 1 plans with the stored two-pair
// prefix from turn n-1 and anchors its first infill window on that turn's
// final keyframe group.
class Session {
public:
    explicit Session(const GenerationModels& models) : models_(&models) {}

    GenerationResult push_turn(const std::string& label, const AudioClip& clip,
                               std::uint64_t seed);
    void close();
    bool closed() const { return closed_; }

    // Exposed for verification of cross-turn anchoring.
    const std::vector<std::pair<std::uint32_t, TokenGroup>>& prefix() const {
        return prefix_;
    }
    const std::optional<TokenGroup>& previous_final_keyframe() const {
        return prev_final_keyframe_;
    }
    const std::optional<TokenGroup>& first_window_left_boundary() const {
        return last_first_window_left_;
    }

private:
    const GenerationModels* models_;
    bool closed_ = false;
    std::size_t turn_count_ = 0;
    std::vector<std::pair<std::uint32_t, TokenGroup>> prefix_;
    std::optional<TokenGroup> prev_final_keyframe_;
    std::vector<TokenGroup> trailing_groups_;  // steps after the final keyframe
    FrameMatrix trailing_audio_;               // audio rows for those steps
    std::size_t grid_offset_ = 0;              // next turn's first keyframe step
    std::optional<TokenGroup> last_first_window_left_;
};

}  // namespace planfill
