#pragma once

#include <vector>

#include "planfill/dsp.hpp"
#include "planfill/types.hpp"

namespace planfill {

struct EventTimes {
    std::vector<double> times;  // strictly increasing, seconds

    EventTimes() = default;
    explicit EventTimes(std::vector<double> times);
    bool empty() const { return times.empty(); }
};

struct EsdReport {
    double d_audio_to_motion = 0.0;
    double d_motion_to_audio = 0.0;
    double esd = 0.0;
    std::size_t n_audio_events = 0;
    std::size_t n_motion_events = 0;
    bool penalized = false;
};

// Penalty assigned when either event set is empty.
constexpr double kEsdPenalty = 2.0;

// Beat-tracking audio events: mel -> onset strength -> tempo -> DP beat
// selection, frame indices converted to seconds. Too-short or silent clips
// yield an empty set.
EventTimes extract_audio_events(const AudioClip& clip, const MelConfig& cfg);

// Velocity-peak motion events thresholded at mu_v + 0.2*sigma_v (population
// sigma). Plateaus take the first index; peak i maps to time (i+1)/fps.
EventTimes extract_motion_events(const MotionSequence& motion);

// Bidirectional Event Sync Distance (seconds).
EsdReport esd(const EventTimes& audio_events, const EventTimes& motion_events);

// Mean pairwise L2 distance over all unordered pairs.
double diversity(const std::vector<std::vector<double>>& features);

// Frechet distance between Gaussians fit to the two feature sets:
// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}).
double frechet_distance(const std::vector<std::vector<double>>& feats_a,
                        const std::vector<std::vector<double>>& feats_b);

}  // namespace planfill
