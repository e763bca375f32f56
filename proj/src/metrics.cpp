#include "planfill/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "planfill/motion_ops.hpp"

namespace planfill {

EventTimes::EventTimes(std::vector<double> times_in) : times(std::move(times_in)) {
    for (std::size_t i = 0; i < times.size(); ++i) {
        if (!std::isfinite(times[i]) || times[i] < 0.0)
            throw std::invalid_argument("EventTimes: times must be finite and non-negative");
        if (i > 0 && times[i] <= times[i - 1])
            throw std::invalid_argument("EventTimes: times must be strictly increasing");
    }
}

EventTimes extract_audio_events(const AudioClip& clip, const MelConfig& cfg) {
    if (clip.samples.size() < cfg.n_fft) return {};
    const FrameMatrix mel = mel_spectrogram(clip, cfg);
    const Series env = onset_strength(mel, cfg.frame_rate());
    const TempoEstimate tempo = estimate_tempo(env);
    if (tempo.no_signal) return {};
    const std::vector<std::size_t> beats = dp_beat_select(env, tempo.bpm);
    std::vector<double> times;
    times.reserve(beats.size());
    for (std::size_t b : beats)
        times.push_back(static_cast<double>(b) * cfg.hop / cfg.sample_rate);
    return EventTimes(std::move(times));
}

EventTimes extract_motion_events(const MotionSequence& motion) {
    if (motion.frames.frames() < 3) return {};
    const Series v = velocity_magnitudes(motion);
    const std::size_t n = v.values.size();
    double mu = 0.0;
    for (double x : v.values) mu += x;
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (double x : v.values) var += (x - mu) * (x - mu);
    const double sigma = std::sqrt(var / static_cast<double>(n));
    const double threshold = mu + 0.2 * sigma;

    std::vector<double> times;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        if (v.values[i] > v.values[i - 1] && v.values[i] >= v.values[i + 1] &&
            v.values[i] > threshold)
            times.push_back(static_cast<double>(i + 1) / motion.fps);
    }
    return EventTimes(std::move(times));
}

EsdReport esd(const EventTimes& audio_events, const EventTimes& motion_events) {
    EsdReport report;
    report.n_audio_events = audio_events.times.size();
    report.n_motion_events = motion_events.times.size();
    if (audio_events.empty() || motion_events.empty()) {
        report.penalized = true;
        report.esd = kEsdPenalty;
        return report;
    }
    auto directed = [](const std::vector<double>& from, const std::vector<double>& to) {
        double acc = 0.0;
        for (double t : from) {
            double best = std::abs(t - to.front());
            for (double u : to) best = std::min(best, std::abs(t - u));
            acc += best;
        }
        return acc / static_cast<double>(from.size());
    };
    report.d_audio_to_motion = directed(audio_events.times, motion_events.times);
    report.d_motion_to_audio = directed(motion_events.times, audio_events.times);
    report.esd = 0.5 * (report.d_audio_to_motion + report.d_motion_to_audio);
    return report;
}

double diversity(const std::vector<std::vector<double>>& features) {
    if (features.size() < 2)
        throw std::invalid_argument("diversity: need at least 2 feature vectors");
    const std::size_t d = features.front().size();
    for (const auto& f : features)
        if (f.size() != d)
            throw std::invalid_argument("diversity: inconsistent dimensions");
    double acc = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < features.size(); ++i)
        for (std::size_t j = i + 1; j < features.size(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = features[i][k] - features[j][k];
                s += diff * diff;
            }
            acc += std::sqrt(s);
            ++pairs;
        }
    return acc / static_cast<double>(pairs);
}

namespace {

void fit_gaussian(const std::vector<std::vector<double>>& feats,
                  Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
    const auto n = static_cast<Eigen::Index>(feats.size());
    const auto d = static_cast<Eigen::Index>(feats.front().size());
    Eigen::MatrixXd X(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) {
            const double v = feats[i][j];
            if (!std::isfinite(v))
                throw std::invalid_argument("frechet_distance: non-finite feature");
            X(i, j) = v;
        }
    mu = X.colwise().mean();
    const Eigen::MatrixXd centered = X.rowwise() - mu.transpose();
    cov = centered.transpose() * centered / static_cast<double>(n);
}

}  // namespace

double frechet_distance(const std::vector<std::vector<double>>& feats_a,
                        const std::vector<std::vector<double>>& feats_b) {
    if (feats_a.size() < 2 || feats_b.size() < 2)
        throw std::invalid_argument("frechet_distance: each set needs >= 2 vectors");
    if (feats_a.front().size() != feats_b.front().size() || feats_a.front().empty())
        throw std::invalid_argument("frechet_distance: dimension mismatch");

    Eigen::VectorXd mu_a, mu_b;
    Eigen::MatrixXd cov_a, cov_b;
    fit_gaussian(feats_a, mu_a, cov_a);
    fit_gaussian(feats_b, mu_b, cov_b);

    const double mean_term = (mu_a - mu_b).squaredNorm();

    // Tr((Sa Sb)^{1/2}) = sum of singular values of Sa^{1/2} Sb^{1/2}, with
    // eps*I regularization. Working on the square-root factors keeps the
    // computation well conditioned when covariances are near rank-deficient
    // (forming Sa*Sb directly squares the condition number and loses the
    // self-distance identity past 1e-6 in high dimension).
    const double eps = 1e-6;
    const auto d = cov_a.rows();
    const Eigen::MatrixXd reg = eps * Eigen::MatrixXd::Identity(d, d);
    auto sqrt_psd = [&](const Eigen::MatrixXd& cov) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov + reg);
        if (solver.info() != Eigen::Success)
            throw std::runtime_error("frechet_distance: eigendecomposition failed");
        Eigen::VectorXd ev = solver.eigenvalues();
        for (Eigen::Index i = 0; i < d; ++i) {
            if (ev(i) < -1e-6)
                throw std::runtime_error("frechet_distance: covariance is not PSD");
            ev(i) = std::sqrt(std::max(ev(i), 0.0));
        }
        return Eigen::MatrixXd(solver.eigenvectors() * ev.asDiagonal() *
                               solver.eigenvectors().transpose());
    };
    const Eigen::MatrixXd cross = sqrt_psd(cov_a) * sqrt_psd(cov_b);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(cross);
    const double trace_sqrt = svd.singularValues().sum();
    const double cov_term =
        (cov_a + reg).trace() + (cov_b + reg).trace() - 2.0 * trace_sqrt;
    double result = mean_term + cov_term;
    if (result < 0.0) result = 0.0;
    return result;
}

}  // namespace planfill
