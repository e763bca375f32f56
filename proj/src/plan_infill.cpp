#include "planfill/plan_infill.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <future>
#include <stdexcept>

#include "planfill/motion_ops.hpp"
#include "planfill/rng.hpp"

namespace planfill {

// ---------------------------------------------------------------------------
// Audio features
// ---------------------------------------------------------------------------

FrameMatrix audio_feature_matrix(const AudioClip& clip, const MelConfig& cfg,
                                 double rows_per_sec) {
    const FrameMatrix mel = mel_spectrogram(clip, cfg);
    const double src_rate = cfg.frame_rate();
    const Series onset = onset_strength(mel, src_rate);
    const std::size_t n_mels = mel.dims();

    std::vector<Series> columns;
    columns.reserve(n_mels + 1);
    std::vector<double> band(mel.frames());
    for (std::size_t m = 0; m < n_mels; ++m) {
        for (std::size_t f = 0; f < mel.frames(); ++f)
            band[f] = std::log1p(mel.at(f, m));
        columns.push_back(resample_series(Series(src_rate, band), rows_per_sec));
    }
    columns.push_back(resample_series(onset, rows_per_sec));

    // One row per 1/rows_per_sec of audio; the resampler's extra endpoint row
    // is dropped so row counts line up with the downsampled token timeline.
    const auto target_rows =
        static_cast<std::size_t>(std::llround(clip.duration() * rows_per_sec));
    const std::size_t rows =
        std::min(std::max<std::size_t>(target_rows, 1), columns.front().values.size());
    FrameMatrix out(rows, n_mels + 1);
    for (std::size_t c = 0; c < columns.size(); ++c)
        for (std::size_t r = 0; r < rows; ++r) out.at(r, c) = columns[c].values[r];
    return out;
}

std::vector<std::uint32_t> audio_tokens(const FrameMatrix& features,
                                        const Codebook& quantizer, std::size_t t) {
    if (features.frames() == 0)
        throw std::invalid_argument("audio_tokens: no feature rows");
    if (t == 0) throw std::invalid_argument("audio_tokens: t must be positive");
    const std::vector<std::size_t> dense = kmeans_assign(quantizer, features);
    std::vector<std::uint32_t> out;
    for (std::size_t r = 0; r < dense.size(); r += t)
        out.push_back(static_cast<std::uint32_t>(dense[r]));
    return out;
}

// ---------------------------------------------------------------------------
// Planner examples and token sequences
// ---------------------------------------------------------------------------

namespace {

void push_group_tokens(std::vector<PlannerToken>& out, const TokenGroup& g,
                       const RvqCodec& codec) {
    for (std::size_t layer = 0; layer < g.residuals.size(); ++layer)
        out.push_back({PlannerToken::Kind::Motion,
                       to_unified_id(codec, layer + 1, g.residuals[layer]), {}});
}

TokenGroup read_group_tokens(const std::vector<PlannerToken>& tokens,
                             std::size_t& pos, const RvqCodec& codec) {
    TokenGroup g;
    for (std::size_t layer = 1; layer <= codec.n_layers(); ++layer) {
        if (pos >= tokens.size() || tokens[pos].kind != PlannerToken::Kind::Motion)
            throw std::invalid_argument("parse_token_sequence: truncated token group");
        const auto [k, r] = from_unified_id(codec, tokens[pos].value);
        if (k != layer)
            throw std::invalid_argument("parse_token_sequence: layer order violation");
        g.residuals.push_back(r);
        ++pos;
    }
    return g;
}

}  // namespace

std::vector<PlannerToken> to_token_sequence(const PlannerExample& ex,
                                            const RvqCodec& codec, std::size_t t) {
    std::vector<PlannerToken> out;
    if (ex.continuation) {
        if (ex.prefix.size() != 2)
            throw std::invalid_argument("to_token_sequence: continuation prefix must hold 2 pairs");
        for (const auto& [a, g] : ex.prefix)
            out.push_back({PlannerToken::Kind::Audio, a, {}});
        for (const auto& [a, g] : ex.prefix) push_group_tokens(out, g, codec);
        out.push_back({PlannerToken::Kind::Label, 0, ex.label});
        for (std::uint32_t a : ex.audio_ids)
            out.push_back({PlannerToken::Kind::Audio, a, {}});
        out.push_back({PlannerToken::Kind::Len,
                       static_cast<std::uint32_t>(ex.keyframes.size()), {}});
    } else {
        out.push_back({PlannerToken::Kind::Label, 0, ex.label});
        for (std::uint32_t a : ex.audio_ids)
            out.push_back({PlannerToken::Kind::Audio, a, {}});
        out.push_back({PlannerToken::Kind::Step, static_cast<std::uint32_t>(t), {}});
    }
    for (const TokenGroup& g : ex.keyframes) push_group_tokens(out, g, codec);
    return out;
}

PlannerExample parse_token_sequence(const std::vector<PlannerToken>& tokens,
                                    const RvqCodec& codec, std::size_t t) {
    PlannerExample ex;
    std::size_t pos = 0;
    auto need = [&](const char* what) {
        if (pos >= tokens.size())
            throw std::invalid_argument(std::string("parse_token_sequence: missing ") + what);
    };
    need("leading token");
    ex.continuation = tokens[0].kind == PlannerToken::Kind::Audio;
    if (ex.continuation) {
        std::uint32_t a0 = tokens[pos].value;
        ++pos;
        need("second prefix audio token");
        if (tokens[pos].kind != PlannerToken::Kind::Audio)
            throw std::invalid_argument("parse_token_sequence: expected prefix audio token");
        std::uint32_t a1 = tokens[pos].value;
        ++pos;
        TokenGroup g0 = read_group_tokens(tokens, pos, codec);
        TokenGroup g1 = read_group_tokens(tokens, pos, codec);
        ex.prefix = {{a0, std::move(g0)}, {a1, std::move(g1)}};
        need("label");
        if (tokens[pos].kind != PlannerToken::Kind::Label)
            throw std::invalid_argument("parse_token_sequence: expected label");
        ex.label = tokens[pos].text;
        ++pos;
        while (pos < tokens.size() && tokens[pos].kind == PlannerToken::Kind::Audio) {
            ex.audio_ids.push_back(tokens[pos].value);
            ++pos;
        }
        need("[len] token");
        if (tokens[pos].kind != PlannerToken::Kind::Len)
            throw std::invalid_argument("parse_token_sequence: expected [len]");
        const std::uint32_t len = tokens[pos].value;
        ++pos;
        for (std::uint32_t i = 0; i < len; ++i)
            ex.keyframes.push_back(read_group_tokens(tokens, pos, codec));
    } else {
        if (tokens[pos].kind != PlannerToken::Kind::Label)
            throw std::invalid_argument("parse_token_sequence: expected label");
        ex.label = tokens[pos].text;
        ++pos;
        while (pos < tokens.size() && tokens[pos].kind == PlannerToken::Kind::Audio) {
            ex.audio_ids.push_back(tokens[pos].value);
            ++pos;
        }
        need("[S_t] token");
        if (tokens[pos].kind != PlannerToken::Kind::Step || tokens[pos].value != t)
            throw std::invalid_argument("parse_token_sequence: expected [S_t]");
        ++pos;
        while (pos < tokens.size())
            ex.keyframes.push_back(read_group_tokens(tokens, pos, codec));
    }
    if (pos != tokens.size())
        throw std::invalid_argument("parse_token_sequence: trailing tokens");
    return ex;
}

PlannerExample build_training_sequence(
    const std::string& label, const TokenizedMotion& tokens,
    const std::vector<std::uint32_t>& sparse_audio_ids, std::size_t t,
    std::optional<std::size_t> continuation_split) {
    if (t == 0) throw std::invalid_argument("build_training_sequence: t must be positive");
    std::vector<TokenGroup> keyframes;
    for (std::size_t s = 0; s < tokens.groups.size(); s += t)
        keyframes.push_back(tokens.groups[s]);
    if (sparse_audio_ids.size() != keyframes.size())
        throw std::invalid_argument(
            "build_training_sequence: audio tokens not aligned to keyframe grid");

    PlannerExample ex;
    ex.label = label;
    if (!continuation_split) {
        ex.audio_ids = sparse_audio_ids;
        ex.keyframes = std::move(keyframes);
        return ex;
    }
    const std::size_t c = *continuation_split;
    if (c < 2 || keyframes.size() < c + 1)
        throw std::invalid_argument(
            "build_training_sequence: continuation requires >= 3 keyframes "
            "and a split of >= 2");
    ex.continuation = true;
    ex.prefix = {{sparse_audio_ids[c - 2], keyframes[c - 2]},
                 {sparse_audio_ids[c - 1], keyframes[c - 1]}};
    ex.audio_ids.assign(sparse_audio_ids.begin() + static_cast<long>(c),
                        sparse_audio_ids.end());
    ex.keyframes.assign(keyframes.begin() + static_cast<long>(c), keyframes.end());
    return ex;
}

// ---------------------------------------------------------------------------
// PlannerModel
// ---------------------------------------------------------------------------

std::string PlannerModel::make_key(std::size_t class_id,
                                   std::optional<std::uint32_t> audio_id,
                                   const std::vector<TokenGroup>& context,
                                   std::size_t ctx_len) const {
    std::string key = "C" + std::to_string(class_id);
    if (!audio_id) return key;
    key += "|A" + std::to_string(*audio_id) + "|G";
    const std::size_t start = context.size() - ctx_len;
    for (std::size_t i = start; i < context.size(); ++i) {
        for (std::uint32_t r : context[i].residuals) {
            key += std::to_string(r);
            key += ',';
        }
        key += ';';
    }
    return key;
}

PlannerModel PlannerModel::fit(const std::vector<PlannerExample>& examples,
                               std::size_t order, double alpha, std::size_t t,
                               std::size_t n_layers, std::size_t k) {
    if (examples.empty()) throw std::invalid_argument("PlannerModel::fit: no examples");
    PlannerModel model;
    model.order_ = order;
    model.alpha_ = alpha;
    model.t_ = t;
    model.n_layers_ = n_layers;
    model.k_ = k;

    std::vector<TokenGroup> vocab;
    std::map<std::string, std::size_t> label_freq;
    for (const PlannerExample& ex : examples) {
        ++label_freq[ex.label];
        for (const auto& [a, g] : ex.prefix) vocab.push_back(g);
        for (const TokenGroup& g : ex.keyframes) vocab.push_back(g);
    }
    std::sort(vocab.begin(), vocab.end());
    vocab.erase(std::unique(vocab.begin(), vocab.end()), vocab.end());
    model.vocab_ = std::move(vocab);

    for (const auto& [label, freq] : label_freq) model.classes_.push_back(label);
    std::size_t best_freq = 0;
    for (std::size_t i = 0; i < model.classes_.size(); ++i) {
        const std::size_t f = label_freq[model.classes_[i]];
        if (f > best_freq) {
            best_freq = f;
            model.default_class_ = i;
        }
    }

    auto vocab_index = [&](const TokenGroup& g) {
        const auto it =
            std::lower_bound(model.vocab_.begin(), model.vocab_.end(), g);
        return static_cast<std::size_t>(it - model.vocab_.begin());
    };
    const std::size_t V = model.vocab_.size();
    auto bump = [&](const std::string& key, std::size_t target) {
        auto& vec = model.counts_[key];
        if (vec.empty()) vec.assign(V, 0);
        ++vec[target];
    };

    for (const PlannerExample& ex : examples) {
        const std::size_t class_id =
            static_cast<std::size_t>(std::lower_bound(model.classes_.begin(),
                                                      model.classes_.end(),
                                                      ex.label) -
                                     model.classes_.begin());
        std::vector<TokenGroup> context;
        for (const auto& [a, g] : ex.prefix) context.push_back(g);
        for (std::size_t i = 0; i < ex.keyframes.size(); ++i) {
            const std::size_t target = vocab_index(ex.keyframes[i]);
            const std::uint32_t audio = ex.audio_ids[i];
            const std::size_t max_ctx = std::min(order, context.size());
            for (std::size_t ctx_len = 0; ctx_len <= max_ctx; ++ctx_len)
                bump(model.make_key(class_id, audio, context, ctx_len), target);
            bump(model.make_key(class_id, std::nullopt, context, 0), target);
            context.push_back(ex.keyframes[i]);
        }
    }
    return model;
}

std::size_t PlannerModel::resolve_class(const std::string& label,
                                        bool* used_default) const {
    const auto it = std::lower_bound(classes_.begin(), classes_.end(), label);
    if (it != classes_.end() && *it == label) {
        if (used_default) *used_default = false;
        return static_cast<std::size_t>(it - classes_.begin());
    }
    if (used_default) *used_default = true;
    return default_class_;
}

PlannerModel::Distribution PlannerModel::distribution(
    std::size_t class_id, std::uint32_t audio_id,
    const std::vector<TokenGroup>& context) const {
    const std::size_t V = vocab_.size();
    Distribution dist;
    auto fill_from = [&](const std::vector<std::uint64_t>& counts) {
        std::uint64_t total = 0;
        for (std::uint64_t c : counts) total += c;
        dist.probs.resize(V);
        const double denom =
            static_cast<double>(total) + alpha_ * static_cast<double>(V);
        for (std::size_t i = 0; i < V; ++i)
            dist.probs[i] = (static_cast<double>(counts[i]) + alpha_) / denom;
        return total > 0 || alpha_ > 0.0;
    };

    const std::size_t max_ctx = std::min(order_, context.size());
    for (std::size_t ctx_len = max_ctx + 1; ctx_len-- > 0;) {
        const auto it = counts_.find(make_key(class_id, audio_id, context, ctx_len));
        if (it != counts_.end() && fill_from(it->second)) return dist;
    }
    const auto it = counts_.find(make_key(class_id, std::nullopt, context, 0));
    if (it != counts_.end() && fill_from(it->second)) return dist;

    dist.uniform_fallback = true;
    dist.probs.assign(V, V > 0 ? 1.0 / static_cast<double>(V) : 0.0);
    return dist;
}

PlanResult plan_keyframes(
    const PlannerModel& model, const std::string& label,
    const std::vector<std::uint32_t>& sparse_audio_ids,
    const std::vector<std::pair<std::uint32_t, TokenGroup>>* prefix,
    std::uint64_t seed, bool sample) {
    if (sparse_audio_ids.empty())
        throw std::invalid_argument("plan_keyframes: need at least one audio token");
    if (prefix && prefix->size() != 2)
        throw std::invalid_argument("plan_keyframes: prefix must hold exactly 2 pairs");
    if (model.vocab().empty())
        throw std::invalid_argument("plan_keyframes: empty planner vocabulary");

    PlanResult result;
    const std::size_t class_id = model.resolve_class(label, &result.used_default_class);
    Rng rng(seed);
    std::vector<TokenGroup> context;
    if (prefix)
        for (const auto& [a, g] : *prefix) context.push_back(g);

    for (std::uint32_t audio : sparse_audio_ids) {
        const auto dist = model.distribution(class_id, audio, context);
        result.uniform_fallback |= dist.uniform_fallback;
        result.context_trace.push_back(context);
        std::size_t chosen = 0;
        if (sample) {
            double target = rng.next_double();
            for (std::size_t i = 0; i < dist.probs.size(); ++i) {
                target -= dist.probs[i];
                if (target <= 0.0) {
                    chosen = i;
                    break;
                }
                chosen = i;
            }
        } else {
            for (std::size_t i = 1; i < dist.probs.size(); ++i)
                if (dist.probs[i] > dist.probs[chosen]) chosen = i;
        }
        result.keyframes.push_back(model.vocab()[chosen]);
        context.push_back(model.vocab()[chosen]);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Planner model serialization
// ---------------------------------------------------------------------------

namespace {

void put_u32v(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64v(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_str(std::vector<std::uint8_t>& out, const std::string& s) {
    put_u32v(out, static_cast<std::uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
}

std::uint32_t get_u32v(const std::vector<std::uint8_t>& in, std::size_t& pos) {
    if (pos + 4 > in.size()) throw std::runtime_error("PlannerModel: truncated file");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[pos + i]) << (8 * i);
    pos += 4;
    return v;
}

std::uint64_t get_u64v(const std::vector<std::uint8_t>& in, std::size_t& pos) {
    if (pos + 8 > in.size()) throw std::runtime_error("PlannerModel: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[pos + i]) << (8 * i);
    pos += 8;
    return v;
}

std::string get_str(const std::vector<std::uint8_t>& in, std::size_t& pos) {
    const std::uint32_t len = get_u32v(in, pos);
    if (pos + len > in.size()) throw std::runtime_error("PlannerModel: truncated file");
    std::string s(in.begin() + static_cast<long>(pos),
                  in.begin() + static_cast<long>(pos + len));
    pos += len;
    return s;
}

}  // namespace

struct PlannerModelAccess {
    static std::vector<std::uint8_t> serialize(const PlannerModel& m);
    static PlannerModel deserialize(const std::vector<std::uint8_t>& bytes);
};

std::vector<std::uint8_t> PlannerModelAccess::serialize(const PlannerModel& m) {
    std::vector<std::uint8_t> out;
    out.push_back('S'); out.push_back('A'); out.push_back('P'); out.push_back('L');
    put_u32v(out, 1);
    put_u32v(out, static_cast<std::uint32_t>(m.order_));
    put_u32v(out, static_cast<std::uint32_t>(m.t_));
    put_u32v(out, static_cast<std::uint32_t>(m.n_layers_));
    put_u32v(out, static_cast<std::uint32_t>(m.k_));
    std::uint64_t alpha_bits;
    std::memcpy(&alpha_bits, &m.alpha_, 8);
    put_u64v(out, alpha_bits);
    put_u32v(out, static_cast<std::uint32_t>(m.default_class_));
    put_u32v(out, static_cast<std::uint32_t>(m.vocab_.size()));
    for (const TokenGroup& g : m.vocab_)
        for (std::uint32_t r : g.residuals) put_u32v(out, r);
    put_u32v(out, static_cast<std::uint32_t>(m.classes_.size()));
    for (const std::string& s : m.classes_) put_str(out, s);
    put_u32v(out, static_cast<std::uint32_t>(m.counts_.size()));
    for (const auto& [key, vec] : m.counts_) {
        put_str(out, key);
        for (std::uint64_t c : vec) put_u64v(out, c);
    }
    unsigned char digest[32];
    const std::string hash = sha256_hex(out.data(), out.size());
    (void)digest;
    // append raw digest bytes
    for (std::size_t i = 0; i < hash.size(); i += 2) {
        const auto hexval = [](char c) -> std::uint8_t {
            return c <= '9' ? c - '0' : c - 'a' + 10;
        };
        out.push_back(static_cast<std::uint8_t>((hexval(hash[i]) << 4) |
                                                hexval(hash[i + 1])));
    }
    return out;
}

PlannerModel PlannerModelAccess::deserialize(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 4 + 32 || std::memcmp(bytes.data(), "SAPL", 4) != 0)
        throw std::runtime_error("PlannerModel: bad magic or truncated file");
    const std::size_t body_len = bytes.size() - 32;
    const std::string hash = sha256_hex(bytes.data(), body_len);
    for (std::size_t i = 0; i < 32; ++i) {
        const auto hexval = [](char c) -> std::uint8_t {
            return c <= '9' ? c - '0' : c - 'a' + 10;
        };
        const std::uint8_t expect = static_cast<std::uint8_t>(
            (hexval(hash[2 * i]) << 4) | hexval(hash[2 * i + 1]));
        if (bytes[body_len + i] != expect)
            throw std::runtime_error("PlannerModel: content hash mismatch");
    }
    std::size_t pos = 4;
    if (get_u32v(bytes, pos) != 1)
        throw std::runtime_error("PlannerModel: unsupported version");
    PlannerModel m;
    m.order_ = get_u32v(bytes, pos);
    m.t_ = get_u32v(bytes, pos);
    m.n_layers_ = get_u32v(bytes, pos);
    m.k_ = get_u32v(bytes, pos);
    const std::uint64_t alpha_bits = get_u64v(bytes, pos);
    std::memcpy(&m.alpha_, &alpha_bits, 8);
    m.default_class_ = get_u32v(bytes, pos);
    const std::uint32_t vocab_n = get_u32v(bytes, pos);
    m.vocab_.resize(vocab_n);
    for (TokenGroup& g : m.vocab_) {
        g.residuals.resize(m.n_layers_);
        for (std::uint32_t& r : g.residuals) r = get_u32v(bytes, pos);
    }
    const std::uint32_t class_n = get_u32v(bytes, pos);
    m.classes_.resize(class_n);
    for (std::string& s : m.classes_) s = get_str(bytes, pos);
    const std::uint32_t key_n = get_u32v(bytes, pos);
    for (std::uint32_t i = 0; i < key_n; ++i) {
        std::string key = get_str(bytes, pos);
        std::vector<std::uint64_t> vec(vocab_n);
        for (std::uint64_t& c : vec) c = get_u64v(bytes, pos);
        m.counts_.emplace(std::move(key), std::move(vec));
    }
    if (pos != body_len) throw std::runtime_error("PlannerModel: trailing bytes");
    return m;
}

std::vector<std::uint8_t> PlannerModel::serialize() const {
    return PlannerModelAccess::serialize(*this);
}

PlannerModel PlannerModel::deserialize(const std::vector<std::uint8_t>& bytes) {
    return PlannerModelAccess::deserialize(bytes);
}

std::string PlannerModel::content_id() const {
    const auto bytes = serialize();
    return sha256_hex(bytes.data(), bytes.size() - 32);
}

// ---------------------------------------------------------------------------
// Infill windows
// ---------------------------------------------------------------------------

InfillWindow InfillWindow::body(const TokenGroup& left,
                                const std::optional<TokenGroup>& right,
                                std::size_t t, FrameMatrix audio) {
    InfillWindow w;
    w.t = t;
    w.slots.assign(t + 1, std::nullopt);
    w.masked.assign(t + 1, false);
    w.slots[0] = left;
    if (right) w.slots[t] = *right;
    for (std::size_t p = 1; p < t; ++p) w.masked[p] = true;
    w.audio = std::move(audio);
    return w;
}

std::size_t InfillWindow::masked_count() const {
    std::size_t n = 0;
    for (bool m : masked)
        if (m) ++n;
    return n;
}

RefinementTrace infill_window(InfillWindow& window, const InfillScorer& scorer,
                              std::size_t steps) {
    if (steps == 0) throw std::invalid_argument("infill_window: steps must be positive");
    RefinementTrace trace;
    for (std::size_t round = 0; round < steps; ++round) {
        const std::size_t remaining = window.masked_count();
        const std::size_t rounds_left = steps - round;
        const std::size_t accept_n =
            remaining == 0 ? 0 : (remaining + rounds_left - 1) / rounds_left;
        if (accept_n == 0) {
            trace.accepted_per_round.emplace_back();
            continue;
        }
        std::vector<SlotScore> scores = scorer(window);
        // validate: one score per masked slot, well-formed distribution
        std::vector<bool> seen(window.slots.size(), false);
        for (const SlotScore& s : scores) {
            if (s.position >= window.slots.size() || !window.masked[s.position])
                throw std::runtime_error("infill_window: score for non-masked slot");
            if (s.candidates.empty())
                throw std::runtime_error("infill_window: empty candidate distribution");
            double total = 0.0;
            for (const auto& [g, p] : s.candidates) {
                if (!std::isfinite(p) || p < 0.0)
                    throw std::runtime_error("infill_window: invalid candidate probability");
                total += p;
            }
            if (total <= 0.0 || total > 1.0 + 1e-6)
                throw std::runtime_error("infill_window: invalid distribution mass");
            seen[s.position] = true;
        }
        for (std::size_t p = 0; p < window.slots.size(); ++p)
            if (window.masked[p] && !seen[p])
                throw std::runtime_error("infill_window: masked slot left unscored");

        std::sort(scores.begin(), scores.end(),
                  [](const SlotScore& a, const SlotScore& b) {
                      if (a.confidence != b.confidence)
                          return a.confidence > b.confidence;
                      if (a.position != b.position) return a.position < b.position;
                      return a.candidates.front().first < b.candidates.front().first;
                  });
        std::vector<std::size_t> accepted;
        for (std::size_t i = 0; i < accept_n && i < scores.size(); ++i) {
            const SlotScore& s = scores[i];
            window.slots[s.position] = s.candidates.front().first;
            window.masked[s.position] = false;
            accepted.push_back(s.position);
        }
        std::sort(accepted.begin(), accepted.end());
        trace.accepted_per_round.push_back(std::move(accepted));
    }
    if (window.masked_count() != 0)
        throw std::logic_error("infill_window: masks remain after final round");
    return trace;
}

// ---------------------------------------------------------------------------
// Retrieval index and scorer
// ---------------------------------------------------------------------------

void RetrievalIndex::add(const std::vector<TokenGroup>& slots,
                         const FrameMatrix& audio) {
    if (slots.size() != t + 1)
        throw std::invalid_argument("RetrievalIndex::add: wrong slot count");
    IndexedWindow w;
    w.slots = slots;
    w.audio.assign(audio.data().begin(), audio.data().end());
    if (entries.empty()) feature_dim = audio.dims();
    if (w.audio.size() != (t + 1) * feature_dim)
        throw std::invalid_argument("RetrievalIndex::add: wrong audio shape");
    entries.push_back(std::move(w));
}

void RetrievalIndex::finalize() {
    const std::size_t flat = (t + 1) * feature_dim;
    audio_mean.assign(flat, 0.0);
    audio_scale.assign(flat, 1.0);
    if (entries.empty()) return;
    for (const IndexedWindow& w : entries)
        for (std::size_t f = 0; f < flat; ++f) audio_mean[f] += w.audio[f];
    for (double& v : audio_mean) v /= static_cast<double>(entries.size());
    std::vector<double> var(flat, 0.0);
    for (const IndexedWindow& w : entries)
        for (std::size_t f = 0; f < flat; ++f) {
            const double d = w.audio[f] - audio_mean[f];
            var[f] += d * d;
        }
    for (std::size_t f = 0; f < flat; ++f) {
        const double sd = std::sqrt(var[f] / static_cast<double>(entries.size()));
        audio_scale[f] = sd > 1e-12 ? sd : 1.0;
    }
}

std::vector<std::uint8_t> RetrievalIndex::serialize() const {
    std::vector<std::uint8_t> out;
    out.push_back('S'); out.push_back('A'); out.push_back('I'); out.push_back('X');
    put_u32v(out, 1);
    put_u32v(out, static_cast<std::uint32_t>(t));
    put_u32v(out, static_cast<std::uint32_t>(feature_dim));
    const std::size_t n_layers =
        entries.empty() ? 0 : entries.front().slots.front().residuals.size();
    put_u32v(out, static_cast<std::uint32_t>(n_layers));
    put_u32v(out, static_cast<std::uint32_t>(entries.size()));
    auto put_f64 = [&out](double d) {
        std::uint64_t bits;
        std::memcpy(&bits, &d, 8);
        put_u64v(out, bits);
    };
    for (double v : audio_mean) put_f64(v);
    for (double v : audio_scale) put_f64(v);
    for (const IndexedWindow& w : entries) {
        for (const TokenGroup& g : w.slots)
            for (std::uint32_t r : g.residuals) put_u32v(out, r);
        for (double v : w.audio) put_f64(v);
    }
    const std::string hash = sha256_hex(out.data(), out.size());
    for (std::size_t i = 0; i < hash.size(); i += 2) {
        const auto hexval = [](char c) -> std::uint8_t {
            return c <= '9' ? c - '0' : c - 'a' + 10;
        };
        out.push_back(static_cast<std::uint8_t>((hexval(hash[i]) << 4) |
                                                hexval(hash[i + 1])));
    }
    return out;
}

RetrievalIndex RetrievalIndex::deserialize(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 4 + 32 || std::memcmp(bytes.data(), "SAIX", 4) != 0)
        throw std::runtime_error("RetrievalIndex: bad magic or truncated file");
    const std::size_t body_len = bytes.size() - 32;
    const std::string hash = sha256_hex(bytes.data(), body_len);
    for (std::size_t i = 0; i < 32; ++i) {
        const auto hexval = [](char c) -> std::uint8_t {
            return c <= '9' ? c - '0' : c - 'a' + 10;
        };
        const std::uint8_t expect = static_cast<std::uint8_t>(
            (hexval(hash[2 * i]) << 4) | hexval(hash[2 * i + 1]));
        if (bytes[body_len + i] != expect)
            throw std::runtime_error("RetrievalIndex: content hash mismatch");
    }
    std::size_t pos = 4;
    if (get_u32v(bytes, pos) != 1)
        throw std::runtime_error("RetrievalIndex: unsupported version");
    RetrievalIndex idx;
    idx.t = get_u32v(bytes, pos);
    idx.feature_dim = get_u32v(bytes, pos);
    const std::uint32_t n_layers = get_u32v(bytes, pos);
    const std::uint32_t n = get_u32v(bytes, pos);
    auto get_f64 = [&bytes, &pos]() {
        const std::uint64_t bits = get_u64v(bytes, pos);
        double d;
        std::memcpy(&d, &bits, 8);
        return d;
    };
    const std::size_t flat = (idx.t + 1) * idx.feature_dim;
    idx.audio_mean.resize(flat);
    idx.audio_scale.resize(flat);
    for (double& v : idx.audio_mean) v = get_f64();
    for (double& v : idx.audio_scale) v = get_f64();
    idx.entries.resize(n);
    for (IndexedWindow& w : idx.entries) {
        w.slots.resize(idx.t + 1);
        for (TokenGroup& g : w.slots) {
            g.residuals.resize(n_layers);
            for (std::uint32_t& r : g.residuals) r = get_u32v(bytes, pos);
        }
        w.audio.resize(flat);
        for (double& v : w.audio) v = get_f64();
    }
    if (pos != body_len) throw std::runtime_error("RetrievalIndex: trailing bytes");
    return idx;
}

InfillScorer retrieval_scorer(const RetrievalIndex& index, std::size_t k_nn,
                              double lambda) {
    if (index.entries.empty())
        throw std::invalid_argument("retrieval_scorer: empty index");
    if (k_nn == 0) throw std::invalid_argument("retrieval_scorer: k_nn must be positive");
    const RetrievalIndex* idx = &index;
    return [idx, k_nn, lambda](const InfillWindow& window) {
        const std::size_t flat = (idx->t + 1) * idx->feature_dim;
        if (window.slots.size() != idx->t + 1)
            throw std::invalid_argument("retrieval_scorer: window size mismatch");

        std::vector<std::pair<double, std::size_t>> dists;
        dists.reserve(idx->entries.size());
        for (std::size_t e = 0; e < idx->entries.size(); ++e) {
            const IndexedWindow& entry = idx->entries[e];
            double mismatch = 0.0;
            for (std::size_t p = 0; p <= idx->t; ++p) {
                if (!window.slots[p] || window.masked[p]) continue;
                const TokenGroup& q = *window.slots[p];
                const TokenGroup& g = entry.slots[p];
                for (std::size_t layer = 0; layer < g.residuals.size(); ++layer)
                    if (layer >= q.residuals.size() ||
                        q.residuals[layer] != g.residuals[layer])
                        mismatch += 1.0;
            }
            double audio_sq = 0.0;
            const std::size_t q_flat = window.audio.data().size();
            for (std::size_t f = 0; f < flat; ++f) {
                const double qv = f < q_flat ? window.audio.data()[f] : 0.0;
                const double d = (qv - entry.audio[f]) / idx->audio_scale[f];
                audio_sq += d * d;
            }
            dists.emplace_back(mismatch + lambda * std::sqrt(audio_sq), e);
        }
        const std::size_t take = std::min(k_nn, dists.size());
        std::partial_sort(dists.begin(), dists.begin() + static_cast<long>(take),
                          dists.end());
        const bool exact = dists.front().first < 1e-9;

        std::vector<SlotScore> out;
        for (std::size_t p = 0; p <= idx->t; ++p) {
            if (!window.masked[p]) continue;
            std::map<TokenGroup, double> votes;
            double total = 0.0;
            for (std::size_t i = 0; i < take; ++i) {
                const auto& [d, e] = dists[i];
                if (exact && d >= 1e-9) break;  // restrict to exact matches
                const double w = exact ? 1.0 : 1.0 / (1.0 + d);
                votes[idx->entries[e].slots[p]] += w;
                total += w;
            }
            SlotScore score;
            score.position = p;
            for (const auto& [g, w] : votes)
                score.candidates.emplace_back(g, w / total);
            std::sort(score.candidates.begin(), score.candidates.end(),
                      [](const auto& a, const auto& b) {
                          if (a.second != b.second) return a.second > b.second;
                          return a.first < b.first;
                      });
            score.confidence = score.candidates.front().second;
            out.push_back(std::move(score));
        }
        return out;
    };
}

// ---------------------------------------------------------------------------
// Masked training windows
// ---------------------------------------------------------------------------

std::vector<TrainingWindow> mask_training_windows(const TokenizedMotion& tokens,
                                                  std::size_t t, double mask_rate,
                                                  std::size_t codebook_size,
                                                  double corrupt_rate,
                                                  std::uint64_t seed) {
    const std::size_t n = tokens.groups.size();
    if (t < 2) throw std::invalid_argument("mask_training_windows: t must be >= 2");
    if (n < t + 1)
        throw std::invalid_argument("mask_training_windows: sequence shorter than one window");
    Rng rng(seed);
    const std::size_t n_layers = tokens.groups.front().residuals.size();

    std::vector<TrainingWindow> out;
    for (std::size_t left = 0; left + t < n; left += t) {
        TrainingWindow tw;
        tw.window.t = t;
        tw.window.slots.assign(t + 1, std::nullopt);
        tw.window.masked.assign(t + 1, false);
        tw.window.audio = FrameMatrix(t + 1, 0);
        tw.target.assign(tokens.groups.begin() + static_cast<long>(left),
                         tokens.groups.begin() + static_cast<long>(left + t + 1));
        tw.loss_mask.assign(t + 1, false);
        tw.corrupted.assign(t + 1, std::vector<bool>(n_layers, false));

        tw.window.slots[0] = tw.target[0];
        tw.window.slots[t] = tw.target[t];
        bool any_masked = false;
        for (std::size_t p = 1; p < t; ++p) {
            tw.loss_mask[p] = true;
            if (rng.next_double() < mask_rate) {
                tw.window.masked[p] = true;
                any_masked = true;
            } else {
                tw.window.slots[p] = tw.target[p];
            }
        }
        if (!any_masked) {
            const std::size_t p = 1 + rng.next_below(t - 1);
            tw.window.masked[p] = true;
            tw.window.slots[p] = std::nullopt;
        }
        for (std::size_t p = 1; p < t; ++p) {
            if (tw.window.masked[p] || !tw.window.slots[p]) continue;
            TokenGroup& g = *tw.window.slots[p];
            for (std::size_t layer = 0; layer < n_layers; ++layer) {
                if (rng.next_double() < corrupt_rate) {
                    g.residuals[layer] =
                        static_cast<std::uint32_t>(rng.next_below(codebook_size));
                    tw.corrupted[p][layer] = true;
                }
            }
        }
        out.push_back(std::move(tw));
    }
    return out;
}

std::vector<IndexedWindow> sliding_windows(const std::vector<TokenGroup>& groups,
                                           std::size_t t,
                                           const FrameMatrix* audio_rows) {
    std::vector<IndexedWindow> out;
    if (groups.size() < t + 1) return out;
    const std::size_t F = audio_rows ? audio_rows->dims() : 0;
    for (std::size_t left = 0; left + t < groups.size(); left += t) {
        IndexedWindow w;
        w.slots.assign(groups.begin() + static_cast<long>(left),
                       groups.begin() + static_cast<long>(left + t + 1));
        w.audio.assign((t + 1) * F, 0.0);
        if (audio_rows) {
            for (std::size_t p = 0; p <= t; ++p) {
                const std::size_t row = std::min(left + p, audio_rows->frames() - 1);
                for (std::size_t f = 0; f < F; ++f)
                    w.audio[p * F + f] = audio_rows->at(row, f);
            }
        }
        out.push_back(std::move(w));
    }
    return out;
}

// ---------------------------------------------------------------------------
// End-to-end generation
// ---------------------------------------------------------------------------

namespace {

struct BridgeContext {
    TokenGroup prev_final_keyframe;
    std::vector<TokenGroup> trailing_groups;  // steps after the prev keyframe
    FrameMatrix trailing_audio;               // rows from the prev keyframe on
};

struct BodyResult {
    std::vector<TokenGroup> keyframes;
    std::vector<std::uint32_t> sparse_audio_ids;
    std::vector<TokenGroup> groups;  // one per local step
    std::vector<WindowTrace> windows;
    std::vector<std::size_t> keyframe_steps;
    std::optional<TokenGroup> first_window_left;
    bool used_default_class = false;
};

FrameMatrix window_audio_rows(const FrameMatrix& feats, std::size_t left,
                              std::size_t t) {
    FrameMatrix audio(t + 1, feats.dims());
    for (std::size_t p = 0; p <= t; ++p) {
        const std::size_t row = std::min(left + p, feats.frames() - 1);
        std::memcpy(audio.row(p), feats.row(row), feats.dims() * sizeof(double));
    }
    return audio;
}

BodyResult run_body_pathway(
    const GenerationModels& models, const std::string& label,
    const FrameMatrix& feats, std::size_t steps, std::uint64_t seed,
    std::size_t grid_offset,
    const std::vector<std::pair<std::uint32_t, TokenGroup>>* prefix,
    const BridgeContext* bridge) {
    const std::size_t t = models.t;
    if (steps <= grid_offset)
        throw std::invalid_argument("generate_turn: clip too short for one keyframe");

    BodyResult result;
    for (std::size_t s = grid_offset; s < steps; s += t)
        result.keyframe_steps.push_back(s);
    const std::vector<std::size_t> dense = kmeans_assign(models.audio_quantizer, feats);
    for (std::size_t s : result.keyframe_steps)
        result.sparse_audio_ids.push_back(
            static_cast<std::uint32_t>(dense[std::min(s, dense.size() - 1)]));

    const PlanResult plan =
        plan_keyframes(models.planner, label, result.sparse_audio_ids, prefix,
                       derive_seed(seed, 1));
    result.keyframes = plan.keyframes;
    result.used_default_class = plan.used_default_class;

    result.groups.assign(steps, TokenGroup{});
    for (std::size_t i = 0; i < result.keyframe_steps.size(); ++i)
        result.groups[result.keyframe_steps[i]] = result.keyframes[i];

    const InfillScorer scorer =
        retrieval_scorer(models.body_index, models.k_nn, models.lambda);

    // Bridge window from the previous turn's final keyframe (session mode).
    if (bridge) {
        InfillWindow w;
        w.t = t;
        w.slots.assign(t + 1, std::nullopt);
        w.masked.assign(t + 1, false);
        w.audio = FrameMatrix(t + 1, feats.dims());
        const std::size_t known_prev = bridge->trailing_groups.size() + 1;
        w.slots[0] = bridge->prev_final_keyframe;
        for (std::size_t p = 1; p < known_prev && p < t; ++p)
            w.slots[p] = bridge->trailing_groups[p - 1];
        for (std::size_t p = known_prev; p < t; ++p) w.masked[p] = true;
        w.slots[t] = result.keyframes.front();
        for (std::size_t p = 0; p <= t; ++p) {
            const double* src =
                p < known_prev
                    ? bridge->trailing_audio.row(
                          std::min(p, bridge->trailing_audio.frames() - 1))
                    : feats.row(std::min(p - known_prev,
                                         feats.frames() - 1));
            std::memcpy(w.audio.row(p), src, feats.dims() * sizeof(double));
        }
        WindowTrace trace;
        trace.left_step = 0;
        trace.refinement = infill_window(w, scorer);
        result.windows.push_back(std::move(trace));
        result.first_window_left = w.slots[0];
        for (std::size_t p = known_prev; p < t; ++p)
            result.groups[p - known_prev] = *w.slots[p];
    }

    // Interior windows between consecutive keyframes.
    for (std::size_t i = 0; i + 1 < result.keyframe_steps.size(); ++i) {
        const std::size_t left = result.keyframe_steps[i];
        InfillWindow w = InfillWindow::body(result.keyframes[i],
                                            result.keyframes[i + 1], t,
                                            window_audio_rows(feats, left, t));
        WindowTrace trace;
        trace.left_step = left;
        trace.refinement = infill_window(w, scorer);
        if (!result.first_window_left) result.first_window_left = w.slots[0];
        for (std::size_t p = 1; p < t; ++p) result.groups[left + p] = *w.slots[p];
        result.windows.push_back(std::move(trace));
    }

    // Terminal window: left boundary only, absent slots beyond the sequence.
    const std::size_t last_kf = result.keyframe_steps.back();
    if (last_kf + 1 < steps) {
        InfillWindow w;
        w.t = t;
        w.slots.assign(t + 1, std::nullopt);
        w.masked.assign(t + 1, false);
        w.slots[0] = result.keyframes.back();
        for (std::size_t p = 1; p <= t && last_kf + p < steps; ++p)
            w.masked[p] = true;
        w.audio = window_audio_rows(feats, last_kf, t);
        WindowTrace trace;
        trace.left_step = last_kf;
        trace.refinement = infill_window(w, scorer);
        if (!result.first_window_left) result.first_window_left = w.slots[0];
        for (std::size_t p = 1; p <= t && last_kf + p < steps; ++p)
            result.groups[last_kf + p] = *w.slots[p];
        result.windows.push_back(std::move(trace));
    }
    return result;
}

struct FaceResult {
    std::vector<TokenGroup> groups;
    std::vector<WindowTrace> windows;
};

// Direct audio-to-face infilling: chained windows, no planner. The first
// window is fully masked; later windows anchor on the previously resolved
// step at their left edge.
FaceResult run_face_pathway(const GenerationModels& models,
                            const FrameMatrix& feats, std::size_t steps) {
    const std::size_t t = models.t;
    FaceResult result;
    result.groups.assign(steps, TokenGroup{});
    const InfillScorer scorer =
        retrieval_scorer(models.face_index, models.k_nn, models.lambda);

    for (std::size_t left = 0; left == 0 || left + 1 < steps; left += t) {
        InfillWindow w;
        w.t = t;
        w.slots.assign(t + 1, std::nullopt);
        w.masked.assign(t + 1, false);
        w.audio = window_audio_rows(feats, left, t);
        std::size_t first_p = 0;
        if (left > 0) {
            w.slots[0] = result.groups[left];
            first_p = 1;
        }
        bool any = false;
        for (std::size_t p = first_p; p <= t && left + p < steps; ++p) {
            w.masked[p] = true;
            any = true;
        }
        if (!any) break;
        WindowTrace trace;
        trace.left_step = left;
        trace.refinement = infill_window(w, scorer);
        for (std::size_t p = first_p; p <= t && left + p < steps; ++p)
            result.groups[left + p] = *w.slots[p];
        result.windows.push_back(std::move(trace));
        if (left + t >= steps) break;
    }
    return result;
}

GenerationResult assemble_turn(const GenerationModels& models,
                               const std::string& label, const AudioClip& clip,
                               std::uint64_t seed, std::size_t grid_offset,
                               const std::vector<std::pair<std::uint32_t, TokenGroup>>* prefix,
                               const BridgeContext* bridge,
                               BodyResult* body_out, FrameMatrix* feats_out) {
    const double fps = 20.0;
    const auto frames = static_cast<std::size_t>(std::llround(clip.duration() * fps));
    if (frames < 2) throw std::invalid_argument("generate_turn: clip too short");
    const std::size_t tf = models.body_codec.temporal_factor;
    const std::size_t steps = (frames + tf - 1) / tf;

    const FrameMatrix feats =
        audio_feature_matrix(clip, models.mel, models.token_rate());

    using Clock = std::chrono::steady_clock;
    auto body_task = [&]() {
        const auto start = Clock::now();
        BodyResult body = run_body_pathway(models, label, feats, steps, seed,
                                           grid_offset, prefix, bridge);
        const double ms = std::chrono::duration<double, std::milli>(
                              Clock::now() - start)
                              .count();
        return std::make_pair(std::move(body), ms);
    };
    auto face_task = [&]() {
        const auto start = Clock::now();
        FaceResult face = run_face_pathway(models, feats, steps);
        const double ms = std::chrono::duration<double, std::milli>(
                              Clock::now() - start)
                              .count();
        return std::make_pair(std::move(face), ms);
    };
    auto face_future = std::async(std::launch::async, face_task);
    auto [body, body_ms] = body_task();
    auto [face, face_ms] = face_future.get();

    TokenizedMotion body_tokens;
    body_tokens.groups = body.groups;
    body_tokens.source_fps = fps;
    body_tokens.source_frames = frames;
    body_tokens.codec_id = models.body_codec.content_id();

    TokenizedMotion face_tokens;
    face_tokens.groups = face.groups;
    face_tokens.source_fps = fps;
    face_tokens.source_frames = frames;
    face_tokens.codec_id = models.face_codec.content_id();

    GenerationResult result{
        decode(models.body_codec, body_tokens),
        decode_face(models.face_codec, face_tokens),
        body.keyframes,
        body.groups,
        body.windows,
        face.windows,
        body.used_default_class,
        body_ms,
        face_ms,
    };
    if (body_out) *body_out = std::move(body);
    if (feats_out) *feats_out = feats;
    return result;
}

}  // namespace

GenerationResult generate_turn(const GenerationModels& models,
                               const std::string& label, const AudioClip& clip,
                               std::uint64_t seed) {
    return assemble_turn(models, label, clip, seed, 0, nullptr, nullptr, nullptr,
                         nullptr);
}

GenerationResult Session::push_turn(const std::string& label,
                                    const AudioClip& clip, std::uint64_t seed) {
    if (closed_) throw std::logic_error("Session: push_turn after close");
    const bool continuing = turn_count_ > 0 && prefix_.size() == 2;

    BridgeContext bridge;
    if (continuing) {
        bridge.prev_final_keyframe = *prev_final_keyframe_;
        bridge.trailing_groups = trailing_groups_;
        bridge.trailing_audio = trailing_audio_;
    }
    BodyResult body;
    FrameMatrix feats;
    GenerationResult result = assemble_turn(
        *models_, label, clip, seed, continuing ? grid_offset_ : 0,
        continuing ? &prefix_ : nullptr, continuing ? &bridge : nullptr, &body,
        &feats);
    last_first_window_left_ = body.first_window_left;

    // Carry state for the next turn.
    const std::size_t steps = body.groups.size();
    const std::size_t last_kf = body.keyframe_steps.back();
    prefix_.clear();
    if (body.keyframes.size() >= 2) {
        const std::size_t m = body.keyframes.size();
        prefix_ = {{body.sparse_audio_ids[m - 2], body.keyframes[m - 2]},
                   {body.sparse_audio_ids[m - 1], body.keyframes[m - 1]}};
    }
    prev_final_keyframe_ = body.keyframes.back();
    trailing_groups_.assign(body.groups.begin() + static_cast<long>(last_kf) + 1,
                            body.groups.end());
    trailing_audio_ = window_audio_rows(feats, last_kf, steps - 1 - last_kf);
    grid_offset_ = last_kf + models_->t - steps;
    ++turn_count_;
    return result;
}

void Session::close() { closed_ = true; }

}  // namespace planfill
