#include "planfill/synth.hpp"

#include <cmath>
#include <stdexcept>

#include "planfill/rng.hpp"

namespace planfill {

const std::vector<std::string> kActionClasses = {
    "wave", "nod", "shrug", "point", "clap", "lean", "tilt", "reach"};

namespace {

constexpr double kTwoPi = 6.283185307179586;

std::size_t class_index(const std::string& label) {
    for (std::size_t i = 0; i < kActionClasses.size(); ++i)
        if (kActionClasses[i] == label) return i;
    throw std::invalid_argument("SynthSpec: unknown label class '" + label + "'");
}

// Fixed unit drift direction per class.
std::vector<double> class_direction(std::size_t c, std::size_t dims) {
    Rng rng(derive_seed(0x5d1f7u, c));
    std::vector<double> u(dims);
    double norm = 0.0;
    for (double& v : u) {
        v = rng.next_gaussian();
        norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : u) v /= norm;
    return u;
}

}  // namespace

void SynthSpec::validate() const {
    if (!(duration >= 1.0)) throw std::invalid_argument("SynthSpec: duration < 1 s");
    if (!(beat_period > 0.0) || beat_period > duration)
        throw std::invalid_argument("SynthSpec: beat_period out of range");
    if (fps <= 0.0 || sample_rate == 0)
        throw std::invalid_argument("SynthSpec: bad sampling rates");
    if (beat_offset < 0.0 || noise_level < 0.0)
        throw std::invalid_argument("SynthSpec: negative offset or noise");
    class_index(label_class);
}

std::vector<double> SynthSpec::beat_times() const {
    std::vector<double> beats;
    for (double b = beat_offset; b < duration - 0.05; b += beat_period)
        beats.push_back(b);
    return beats;
}

DialogueTurn synth_turn(const SynthSpec& spec) {
    spec.validate();
    const std::size_t c = class_index(spec.label_class);
    const std::vector<double> beats = spec.beat_times();
    Rng rng(spec.seed);

    // Audio: 5 ms raised-cosine 2 kHz bursts at 0.8 over a -40 dB pink floor.
    const auto n_samples =
        static_cast<std::size_t>(std::llround(spec.duration * spec.sample_rate));
    std::vector<double> samples(n_samples);
    double b0 = 0, b1 = 0, b2 = 0, b3 = 0, b4 = 0, b5 = 0, b6 = 0;
    for (double& s : samples) {
        const double w = rng.next_gaussian();
        b0 = 0.99886 * b0 + w * 0.0555179;
        b1 = 0.99332 * b1 + w * 0.0750759;
        b2 = 0.96900 * b2 + w * 0.1538520;
        b3 = 0.86650 * b3 + w * 0.3104856;
        b4 = 0.55000 * b4 + w * 0.5329522;
        b5 = -0.7616 * b5 - w * 0.0168980;
        const double pink = b0 + b1 + b2 + b3 + b4 + b5 + b6 + w * 0.5362;
        b6 = w * 0.115926;
        s = 0.01 * 0.11 * pink;  // -40 dB floor
    }
    const auto burst_len = static_cast<std::size_t>(0.005 * spec.sample_rate);
    for (double b : beats) {
        const auto start = static_cast<std::size_t>(std::llround(b * spec.sample_rate));
        for (std::size_t i = 0; i < burst_len && start + i < n_samples; ++i) {
            const double env =
                0.5 * (1.0 - std::cos(kTwoPi * static_cast<double>(i) /
                                      static_cast<double>(burst_len)));
            samples[start + i] +=
                0.8 * env *
                std::sin(kTwoPi * 2000.0 * static_cast<double>(i) / spec.sample_rate);
        }
    }

    // Motion: class base pose + slow sway + cumulative drift from Gaussian
    // velocity bumps planted so the detected peak lands on the beat time.
    const auto n_frames =
        static_cast<std::size_t>(std::llround(spec.duration * spec.fps));
    FrameMatrix motion(n_frames, kBodyDims);
    const std::vector<double> u = class_direction(c, kBodyDims);

    std::vector<double> step(n_frames > 0 ? n_frames - 1 : 0, 0.0);
    for (double b : beats) {
        const double center =
            std::round((b + spec.motion_offset) * spec.fps) - 1.0;
        for (std::size_t t = 0; t < step.size(); ++t) {
            const double d = static_cast<double>(t) - center;
            step[t] += std::exp(-d * d / 8.0);  // sigma = 2 frames
        }
    }
    double cum = 0.0;
    for (std::size_t t = 0; t < n_frames; ++t) {
        const double time = static_cast<double>(t) / spec.fps;
        for (std::size_t d = 0; d < kBodyDims; ++d) {
            const double base =
                0.5 * std::sin(0.7 * static_cast<double>(c + 1) *
                               static_cast<double>(d + 1));
            const double sway = 0.05 * std::sin(kTwoPi * 0.25 * time +
                                                0.3 * static_cast<double>(d));
            double v = base + sway + cum * u[d];
            if (spec.noise_level > 0.0) v += spec.noise_level * rng.next_gaussian();
            motion.at(t, d) = v;
        }
        if (t + 1 < n_frames) cum += step[t];
    }

    // Face: sinusoidal blendshapes phase-locked to the beat grid.
    FrameMatrix face(n_frames, kFaceDims);
    for (std::size_t t = 0; t < n_frames; ++t) {
        const double time = static_cast<double>(t) / spec.fps;
        for (std::size_t d = 0; d < kFaceDims; ++d)
            face.at(t, d) =
                0.5 + 0.4 * std::sin(kTwoPi * (time - spec.beat_offset) /
                                         spec.beat_period +
                                     0.2 * static_cast<double>(d));
    }

    DialogueTurn turn;
    turn.expression_label = spec.label_class;
    turn.action_label = spec.label_class;
    turn.utterance = spec.label_class + " gesture";
    turn.audio = AudioClip(spec.sample_rate, std::move(samples));
    turn.motion = MotionSequence(spec.fps, std::move(motion));
    turn.face = BlendshapeSequence(spec.fps, std::move(face));
    turn.validate();
    return turn;
}

std::vector<SynthSpec> synth_corpus_specs(std::size_t n, const SynthSpec& base,
                                          std::uint64_t seed) {
    if (n == 0) throw std::invalid_argument("synth_corpus: n must be >= 1");
    std::vector<SynthSpec> specs;
    specs.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        SynthSpec spec = base;
        spec.label_class = kActionClasses[i % kActionClasses.size()];
        spec.beat_offset = 0.1 * static_cast<double>((i % 5) + 2);
        spec.seed = derive_seed(seed, i);
        specs.push_back(std::move(spec));
    }
    return specs;
}

std::vector<DialogueTurn> synth_corpus(std::size_t n, const SynthSpec& base,
                                       std::uint64_t seed) {
    std::vector<DialogueTurn> turns;
    turns.reserve(n);
    for (const SynthSpec& spec : synth_corpus_specs(n, base, seed))
        turns.push_back(synth_turn(spec));
    return turns;
}

std::vector<PlannerExample> markov_corpus(
    const std::vector<std::vector<double>>& transition,
    const std::vector<double>& initial, std::size_t n_sequences,
    std::size_t sequence_len, std::size_t n_layers, std::uint64_t seed,
    const std::string& label) {
    const std::size_t V = transition.size();
    if (V == 0 || initial.size() != V)
        throw std::invalid_argument("markov_corpus: bad chain shapes");
    for (const auto& row : transition)
        if (row.size() != V)
            throw std::invalid_argument("markov_corpus: bad chain shapes");
    if (sequence_len < 1)
        throw std::invalid_argument("markov_corpus: sequence_len must be >= 1");

    auto group_of = [n_layers](std::size_t j) {
        TokenGroup g;
        g.residuals.assign(n_layers, static_cast<std::uint32_t>(j));
        return g;
    };
    auto draw = [](Rng& rng, const std::vector<double>& probs) {
        double target = rng.next_double();
        std::size_t j = 0;
        for (; j + 1 < probs.size(); ++j) {
            target -= probs[j];
            if (target <= 0.0) break;
        }
        return j;
    };

    std::vector<PlannerExample> examples;
    examples.reserve(n_sequences);
    for (std::size_t s = 0; s < n_sequences; ++s) {
        Rng rng(derive_seed(seed, s));
        PlannerExample ex;
        ex.label = label;
        std::size_t state = draw(rng, initial);
        for (std::size_t i = 0; i < sequence_len; ++i) {
            ex.audio_ids.push_back(0);
            ex.keyframes.push_back(group_of(state));
            state = draw(rng, transition[state]);
        }
        examples.push_back(std::move(ex));
    }
    return examples;
}

}  // namespace planfill
