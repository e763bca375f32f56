#pragma once

#include <cstdint>
#include <vector>

#include "planfill/types.hpp"

namespace planfill {

struct MelConfig {
    std::uint32_t sample_rate = 16000;
    std::size_t n_fft = 1024;
    std::size_t hop = 320;  // 50 feature frames per second at 16 kHz
    std::size_t n_mels = 64;
    double fmin = 0.0;
    double fmax = 8000.0;

    void validate() const;
    double frame_rate() const {
        return static_cast<double>(sample_rate) / static_cast<double>(hop);
    }
};

struct Codebook {
    std::size_t k = 0;
    std::size_t dim = 0;
    std::vector<double> vectors;  // k x dim, row-major

    const double* centroid(std::size_t i) const { return vectors.data() + i * dim; }
};

struct TempoEstimate {
    double bpm = 120.0;
    bool no_signal = false;  // all-zero envelope; bpm is the documented default
};

// Hann-windowed power STFT through a Slaney (area-normalized) triangular mel
// filterbank. Frame t is centered at sample t*hop with reflection padding.
// Output is n_frames x n_mels. Throws when the clip is shorter than n_fft.
FrameMatrix mel_spectrogram(const AudioClip& clip, const MelConfig& cfg);

// Spectral flux on log-compressed mel: per-frame band mean of
// max(0, log1p(mel[t]) - log1p(mel[t-1])). First frame is 0.
Series onset_strength(const FrameMatrix& mel, double frame_rate);

// Autocorrelation tempo over 30-300 BPM, weighted by a log-normal prior
// centered at 120 BPM (sigma 1.0 in log2 domain).
TempoEstimate estimate_tempo(const Series& envelope);

// Beat selection maximizing sum(envelope[b]) + sum(-tightness*log^2(gap/period))
// via left-to-right DP with backtracking from the best terminal frame.
std::vector<std::size_t> dp_beat_select(const Series& envelope, double bpm,
                                        double tightness = 100.0);

// Seeded k-means++ followed by Lloyd iterations (shift < 1e-6 or 100 iters).
// Empty clusters are re-seeded from the farthest point. Deterministic.
Codebook kmeans_fit(const FrameMatrix& points, std::size_t k, std::uint64_t seed);

// Nearest centroid by squared L2; ties resolve to the lowest index.
std::vector<std::size_t> kmeans_assign(const Codebook& cb, const FrameMatrix& points);
std::size_t kmeans_assign_one(const Codebook& cb, const double* point);

}  // namespace planfill
