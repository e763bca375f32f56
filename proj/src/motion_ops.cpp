#include "planfill/motion_ops.hpp"

#include <cmath>
#include <stdexcept>

namespace planfill {

FrameMatrix::FrameMatrix(std::size_t frames, std::size_t dims,
                         std::vector<double> data)
    : frames_(frames), dims_(dims), data_(std::move(data)) {
    if (data_.size() != frames_ * dims_)
        throw std::invalid_argument("FrameMatrix: payload size mismatch");
}

void FrameMatrix::check_finite(const char* what) const {
    for (double v : data_)
        if (!std::isfinite(v))
            throw std::invalid_argument(std::string(what) + ": non-finite value");
}

MotionSequence::MotionSequence(double fps_, FrameMatrix frames_in)
    : fps(fps_), frames(std::move(frames_in)) {
    if (fps <= 0.0) throw std::invalid_argument("MotionSequence: fps must be positive");
    if (frames.frames() < 1) throw std::invalid_argument("MotionSequence: need at least one frame");
    frames.check_finite("MotionSequence");
}

BlendshapeSequence::BlendshapeSequence(double fps_, FrameMatrix frames_in)
    : fps(fps_), frames(std::move(frames_in)) {
    if (fps <= 0.0) throw std::invalid_argument("BlendshapeSequence: fps must be positive");
    if (frames.frames() < 1) throw std::invalid_argument("BlendshapeSequence: need at least one frame");
    if (frames.dims() != kFaceDims)
        throw std::invalid_argument("BlendshapeSequence: expected 51 dims");
    frames.check_finite("BlendshapeSequence");
}

AudioClip::AudioClip(std::uint32_t sample_rate_, std::vector<double> samples_)
    : sample_rate(sample_rate_), samples(std::move(samples_)) {
    if (sample_rate == 0) throw std::invalid_argument("AudioClip: sample_rate must be positive");
    if (samples.empty()) throw std::invalid_argument("AudioClip: empty sample vector");
    for (double v : samples)
        if (!std::isfinite(v)) throw std::invalid_argument("AudioClip: non-finite sample");
}

Series::Series(double rate_, std::vector<double> values_)
    : rate(rate_), values(std::move(values_)) {
    if (rate <= 0.0) throw std::invalid_argument("Series: rate must be positive");
    for (double v : values)
        if (!std::isfinite(v)) throw std::invalid_argument("Series: non-finite value");
}

void DialogueTurn::validate() const {
    const double frame_period = 1.0 / motion.fps;
    if (std::abs(audio.duration() - motion.duration()) > frame_period + 1e-9)
        throw std::invalid_argument(
            "DialogueTurn: audio/motion duration mismatch exceeds one frame period");
    if (face && std::abs(face->frames.frames() / face->fps - motion.duration()) >
                    frame_period + 1e-9)
        throw std::invalid_argument(
            "DialogueTurn: face/motion duration mismatch exceeds one frame period");
}

Series velocity_magnitudes(const MotionSequence& motion) {
    const std::size_t T = motion.frames.frames();
    if (T < 2) throw std::invalid_argument("velocity_magnitudes: insufficient frames");
    const std::size_t D = motion.frames.dims();
    std::vector<double> v(T - 1);
    for (std::size_t t = 0; t + 1 < T; ++t) {
        const double* a = motion.frames.row(t);
        const double* b = motion.frames.row(t + 1);
        double acc = 0.0;
        for (std::size_t d = 0; d < D; ++d) {
            const double diff = b[d] - a[d];
            acc += diff * diff;
        }
        v[t] = std::sqrt(acc);
    }
    return Series(motion.fps, std::move(v));
}

Series resample_series(const Series& s, double dst_rate) {
    if (dst_rate <= 0.0) throw std::invalid_argument("resample_series: dst_rate must be positive");
    if (s.values.empty()) throw std::invalid_argument("resample_series: empty input");
    const std::size_t n = s.values.size();
    if (n == 1) return Series(dst_rate, {s.values[0]});

    const double duration = static_cast<double>(n - 1) / s.rate;
    const std::size_t out_n = static_cast<std::size_t>(std::floor(duration * dst_rate)) + 1;
    std::vector<double> out(out_n);
    for (std::size_t i = 0; i < out_n; ++i) {
        const double t = static_cast<double>(i) / dst_rate;
        double pos = t * s.rate;
        if (pos >= static_cast<double>(n - 1)) {
            out[i] = s.values[n - 1];
            continue;
        }
        const std::size_t lo = static_cast<std::size_t>(pos);
        const double frac = pos - static_cast<double>(lo);
        out[i] = s.values[lo] * (1.0 - frac) + s.values[lo + 1] * frac;
    }
    return Series(dst_rate, std::move(out));
}

namespace {

// Orthonormalizes one 6D block in place. Returns false on degeneracy.
bool gram_schmidt_block(double* b) {
    double n1 = std::sqrt(b[0] * b[0] + b[1] * b[1] + b[2] * b[2]);
    if (n1 < 1e-8) return false;
    double u[3] = {b[0] / n1, b[1] / n1, b[2] / n1};
    double dot = u[0] * b[3] + u[1] * b[4] + u[2] * b[5];
    double w[3] = {b[3] - dot * u[0], b[4] - dot * u[1], b[5] - dot * u[2]};
    double n2 = std::sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2]);
    if (n2 < 1e-8) return false;
    b[0] = u[0]; b[1] = u[1]; b[2] = u[2];
    b[3] = w[0] / n2; b[4] = w[1] / n2; b[5] = w[2] / n2;
    return true;
}

}  // namespace

MotionSequence orthonormalize_sixd(const MotionSequence& motion) {
    const std::size_t D = motion.frames.dims();
    if (D % 6 != 0)
        throw std::invalid_argument("orthonormalize_sixd: dims not divisible by 6");
    FrameMatrix out = motion.frames;
    const std::size_t T = out.frames();
    const std::size_t joints = D / 6;
    for (std::size_t t = 0; t < T; ++t) {
        double* r = out.row(t);
        for (std::size_t j = 0; j < joints; ++j) {
            if (!gram_schmidt_block(r + j * 6))
                throw std::invalid_argument(
                    "orthonormalize_sixd: degenerate 6D block at frame " +
                    std::to_string(t) + ", joint " + std::to_string(j));
        }
    }
    return MotionSequence(motion.fps, std::move(out));
}

}  // namespace planfill
