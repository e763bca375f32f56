#pragma once

#include "planfill/types.hpp"

namespace planfill {

// Per-step velocity magnitudes v_t = ||x_{t+1} - x_t||_2, length T-1,
// rate equal to the motion fps. Throws if fewer than 2 frames.
Series velocity_magnitudes(const MotionSequence& motion);

// Linear resampling over the source time axis. Output length is
// floor(duration * dst_rate) + 1; endpoints preserved.
Series resample_series(const Series& s, double dst_rate);

// Gram-Schmidt orthonormalization of each 6-value rotation block
// (two 3-vectors). Idempotent. Throws, naming frame and joint, when a
// block is degenerate (norm or rejection norm below 1e-8).
MotionSequence orthonormalize_sixd(const MotionSequence& motion);

}  // namespace planfill
