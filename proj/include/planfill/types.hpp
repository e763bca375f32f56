#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace planfill {

constexpr std::size_t kBodyDims = 393;
constexpr std::size_t kFaceDims = 51;

// Row-major frame matrix: frames[t * dims + d].
class FrameMatrix {
public:
    FrameMatrix() = default;
    FrameMatrix(std::size_t frames, std::size_t dims)
        : frames_(frames), dims_(dims), data_(frames * dims, 0.0) {}
    FrameMatrix(std::size_t frames, std::size_t dims, std::vector<double> data);

    std::size_t frames() const { return frames_; }
    std::size_t dims() const { return dims_; }
    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    double at(std::size_t t, std::size_t d) const { return data_[t * dims_ + d]; }
    double& at(std::size_t t, std::size_t d) { return data_[t * dims_ + d]; }
    const double* row(std::size_t t) const { return data_.data() + t * dims_; }
    double* row(std::size_t t) { return data_.data() + t * dims_; }

    void check_finite(const char* what) const;

private:
    std::size_t frames_ = 0;
    std::size_t dims_ = 0;
    std::vector<double> data_;
};

struct MotionSequence {
    double fps = 20.0;
    FrameMatrix frames;

    MotionSequence() = default;
    MotionSequence(double fps, FrameMatrix frames);

    double duration() const { return static_cast<double>(frames.frames()) / fps; }
};

struct BlendshapeSequence {
    double fps = 20.0;
    FrameMatrix frames;  // T x 51, raw coefficients (no [0,1] clamping)

    BlendshapeSequence() = default;
    BlendshapeSequence(double fps, FrameMatrix frames);
};

struct AudioClip {
    std::uint32_t sample_rate = 16000;
    std::vector<double> samples;  // mono, nominally in [-1, 1]

    AudioClip() = default;
    AudioClip(std::uint32_t sample_rate, std::vector<double> samples);

    double duration() const {
        return static_cast<double>(samples.size()) / sample_rate;
    }
};

// Uniformly sampled scalar signal (velocity curves, onset envelopes).
struct Series {
    double rate = 1.0;  // samples per second
    std::vector<double> values;

    Series() = default;
    Series(double rate, std::vector<double> values);
};

struct DialogueTurn {
    std::string expression_label;
    std::string action_label;
    std::string utterance;
    AudioClip audio;
    MotionSequence motion;
    std::optional<BlendshapeSequence> face;

    // Audio and motion durations must agree within one motion frame period.
    void validate() const;
};

}  // namespace planfill
