#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "planfill/plan_infill.hpp"
#include "planfill/types.hpp"

namespace planfill {

// Action vocabulary for the synthetic corpus: each class gets a distinct base
// pose and a distinct drift direction for its velocity bumps.
extern const std::vector<std::string> kActionClasses;

struct SynthSpec {
    double duration = 6.0;  // seconds, >= 1
    double fps = 20.0;
    std::uint32_t sample_rate = 16000;
    double beat_period = 1.0;  // 0 < beat_period <= duration
    double beat_offset = 0.5;  // first beat time, seconds
    std::string label_class = "wave";
    double noise_level = 0.0;   // white-noise amplitude added to motion frames
    double motion_offset = 0.0; // extra delay of motion events vs audio beats
    std::uint64_t seed = 0;

    void validate() const;
    std::vector<double> beat_times() const;
};

// Deterministic turn: click train over a pink-noise floor, label-specific
// motion with Gaussian velocity bumps (sigma = 2 frames) planted on the beat
// times, and beat-locked sinusoidal blendshapes.
DialogueTurn synth_turn(const SynthSpec& spec);

// n turns with per-turn seeds derived from (seed, index) and label classes
// cycled through the action vocabulary. Beat offsets cycle on a 0.1 s grid.
std::vector<DialogueTurn> synth_corpus(std::size_t n, const SynthSpec& base,
                                       std::uint64_t seed);
std::vector<SynthSpec> synth_corpus_specs(std::size_t n, const SynthSpec& base,
                                          std::uint64_t seed);

// Planner examples sampled from a known first-order Markov chain over
// `transition.size()` distinct token groups (group j = all-j residuals).
// Audio ids are held at 0 so the learned conditional depends on the previous
// group alone.
std::vector<PlannerExample> markov_corpus(
    const std::vector<std::vector<double>>& transition,
    const std::vector<double>& initial, std::size_t n_sequences,
    std::size_t sequence_len, std::size_t n_layers, std::uint64_t seed,
    const std::string& label = "markov");

}  // namespace planfill
