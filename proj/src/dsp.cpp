#include "planfill/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "planfill/rng.hpp"

namespace planfill {

void MelConfig::validate() const {
    if (hop == 0 || hop > n_fft)
        throw std::invalid_argument("MelConfig: require 0 < hop <= n_fft");
    if ((n_fft & (n_fft - 1)) != 0 || n_fft < 2)
        throw std::invalid_argument("MelConfig: n_fft must be a power of two");
    if (n_mels < 1) throw std::invalid_argument("MelConfig: n_mels must be >= 1");
    if (!(fmin < fmax) || fmax > sample_rate / 2.0)
        throw std::invalid_argument("MelConfig: require fmin < fmax <= sample_rate/2");
}

namespace {

// In-place iterative radix-2 FFT.
void fft(std::vector<std::complex<double>>& a) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * M_PI / static_cast<double>(len);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t j = 0; j < len / 2; ++j) {
                const auto u = a[i + j];
                const auto v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

// Slaney mel scale: linear below 1 kHz, logarithmic above.
double hz_to_mel(double hz) {
    constexpr double f_sp = 200.0 / 3.0;
    constexpr double min_log_hz = 1000.0;
    constexpr double min_log_mel = min_log_hz / f_sp;
    const double logstep = std::log(6.4) / 27.0;
    if (hz < min_log_hz) return hz / f_sp;
    return min_log_mel + std::log(hz / min_log_hz) / logstep;
}

double mel_to_hz(double mel) {
    constexpr double f_sp = 200.0 / 3.0;
    constexpr double min_log_hz = 1000.0;
    constexpr double min_log_mel = min_log_hz / f_sp;
    const double logstep = std::log(6.4) / 27.0;
    if (mel < min_log_mel) return mel * f_sp;
    return min_log_hz * std::exp(logstep * (mel - min_log_mel));
}

// n_mels x (n_fft/2 + 1) triangular filterbank with Slaney area normalization.
std::vector<double> mel_filterbank(const MelConfig& cfg) {
    const std::size_t n_bins = cfg.n_fft / 2 + 1;
    const double mel_lo = hz_to_mel(cfg.fmin);
    const double mel_hi = hz_to_mel(cfg.fmax);
    std::vector<double> edges(cfg.n_mels + 2);
    for (std::size_t m = 0; m < edges.size(); ++m)
        edges[m] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(m) /
                                          static_cast<double>(cfg.n_mels + 1));
    std::vector<double> fb(cfg.n_mels * n_bins, 0.0);
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
        const double f_left = edges[m], f_center = edges[m + 1], f_right = edges[m + 2];
        const double norm = 2.0 / (f_right - f_left);
        for (std::size_t b = 0; b < n_bins; ++b) {
            const double f = static_cast<double>(b) * cfg.sample_rate /
                             static_cast<double>(cfg.n_fft);
            double w = 0.0;
            if (f > f_left && f < f_right) {
                w = (f <= f_center) ? (f - f_left) / (f_center - f_left)
                                    : (f_right - f) / (f_right - f_center);
            }
            fb[m * n_bins + b] = w * norm;
        }
    }
    return fb;
}

// Reflection-padded sample access.
double padded_sample(const std::vector<double>& x, long long i) {
    const long long n = static_cast<long long>(x.size());
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
    if (i < 0 || i >= n) return 0.0;  // clip shorter than pad; degenerate
    return x[static_cast<std::size_t>(i)];
}

}  // namespace

FrameMatrix mel_spectrogram(const AudioClip& clip, const MelConfig& cfg) {
    cfg.validate();
    if (clip.samples.size() < cfg.n_fft)
        throw std::invalid_argument("mel_spectrogram: clip shorter than n_fft");
    const std::size_t n_bins = cfg.n_fft / 2 + 1;
    const std::size_t n_frames = clip.samples.size() / cfg.hop + 1;

    std::vector<double> window(cfg.n_fft);
    for (std::size_t i = 0; i < cfg.n_fft; ++i)
        window[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) /
                                         static_cast<double>(cfg.n_fft));

    const std::vector<double> fb = mel_filterbank(cfg);
    FrameMatrix out(n_frames, cfg.n_mels);
    std::vector<std::complex<double>> buf(cfg.n_fft);
    std::vector<double> power(n_bins);
    const long long half = static_cast<long long>(cfg.n_fft) / 2;
    for (std::size_t t = 0; t < n_frames; ++t) {
        const long long center = static_cast<long long>(t * cfg.hop);
        for (std::size_t i = 0; i < cfg.n_fft; ++i)
            buf[i] = padded_sample(clip.samples,
                                   center - half + static_cast<long long>(i)) *
                     window[i];
        fft(buf);
        for (std::size_t b = 0; b < n_bins; ++b) power[b] = std::norm(buf[b]);
        for (std::size_t m = 0; m < cfg.n_mels; ++m) {
            double acc = 0.0;
            const double* row = fb.data() + m * n_bins;
            for (std::size_t b = 0; b < n_bins; ++b) acc += row[b] * power[b];
            out.at(t, m) = acc;
        }
    }
    return out;
}

Series onset_strength(const FrameMatrix& mel, double frame_rate) {
    if (mel.frames() < 2)
        throw std::invalid_argument("onset_strength: need at least 2 frames");
    const std::size_t n = mel.frames(), d = mel.dims();
    std::vector<double> env(n, 0.0);
    for (std::size_t t = 1; t < n; ++t) {
        double acc = 0.0;
        for (std::size_t m = 0; m < d; ++m) {
            const double flux =
                std::log1p(mel.at(t, m)) - std::log1p(mel.at(t - 1, m));
            if (flux > 0.0) acc += flux;
        }
        env[t] = acc / static_cast<double>(d);
    }
    return Series(frame_rate, std::move(env));
}

TempoEstimate estimate_tempo(const Series& envelope) {
    if (envelope.values.size() < 2)
        throw std::invalid_argument("estimate_tempo: need at least 2 frames");
    const std::size_t n = envelope.values.size();
    const double mean =
        std::accumulate(envelope.values.begin(), envelope.values.end(), 0.0) /
        static_cast<double>(n);
    bool any = false;
    std::vector<double> e(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (envelope.values[i] != 0.0) any = true;
        e[i] = envelope.values[i] - mean;
    }
    if (!any) return {120.0, true};

    const auto lag_min = static_cast<std::size_t>(
        std::max(1.0, std::floor(envelope.rate * 60.0 / 300.0)));
    const auto lag_max = static_cast<std::size_t>(
        std::ceil(envelope.rate * 60.0 / 30.0));
    double best_score = -1.0;
    double best_bpm = 120.0;
    bool found = false;
    for (std::size_t lag = lag_min; lag <= lag_max && lag < n; ++lag) {
        double acf = 0.0;
        for (std::size_t i = 0; i + lag < n; ++i) acf += e[i] * e[i + lag];
        if (acf < 0.0) acf = 0.0;
        const double bpm = 60.0 * envelope.rate / static_cast<double>(lag);
        const double z = std::log2(bpm / 120.0);
        const double score = acf * std::exp(-0.5 * z * z);
        if (score > best_score) {
            best_score = score;
            best_bpm = bpm;
            found = true;
        }
    }
    if (!found || best_score <= 0.0) return {120.0, true};
    return {best_bpm, false};
}

std::vector<std::size_t> dp_beat_select(const Series& envelope, double bpm,
                                        double tightness) {
    if (bpm <= 0.0) throw std::invalid_argument("dp_beat_select: bpm must be positive");
    if (tightness <= 0.0)
        throw std::invalid_argument("dp_beat_select: tightness must be positive");
    const std::size_t n = envelope.values.size();
    if (n == 0) return {};
    const double period = envelope.rate * 60.0 / bpm;

    std::vector<double> best(n);
    std::vector<long long> prev(n, -1);
    for (std::size_t i = 0; i < n; ++i) {
        double best_pred = 0.0;  // starting fresh at i; preferred on ties
        long long pred = -1;
        for (std::size_t j = 0; j < i; ++j) {
            const double g = static_cast<double>(i - j);
            const double lg = std::log(g / period);
            const double cand = best[j] - tightness * lg * lg;
            if (cand > best_pred) {
                best_pred = cand;
                pred = static_cast<long long>(j);
            }
        }
        best[i] = envelope.values[i] + best_pred;
        prev[i] = pred;
    }
    std::size_t term = 0;
    for (std::size_t i = 1; i < n; ++i)
        if (best[i] > best[term]) term = i;

    std::vector<std::size_t> beats;
    for (long long i = static_cast<long long>(term); i >= 0; i = prev[i])
        beats.push_back(static_cast<std::size_t>(i));
    std::reverse(beats.begin(), beats.end());
    return beats;
}

namespace {

double sq_dist(const double* a, const double* b, std::size_t d) {
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        const double diff = a[i] - b[i];
        acc += diff * diff;
    }
    return acc;
}

}  // namespace

Codebook kmeans_fit(const FrameMatrix& points, std::size_t k, std::uint64_t seed) {
    const std::size_t n = points.frames(), d = points.dims();
    if (k < 1) throw std::invalid_argument("kmeans_fit: k must be >= 1");
    if (n < k) throw std::invalid_argument("kmeans_fit: fewer points than clusters");
    Rng rng(seed);

    Codebook cb;
    cb.k = k;
    cb.dim = d;
    cb.vectors.resize(k * d);

    // k-means++ seeding
    std::vector<double> min_sq(n, 0.0);
    {
        const std::size_t first = rng.next_below(n);
        std::copy_n(points.row(first), d, cb.vectors.begin());
        for (std::size_t i = 0; i < n; ++i)
            min_sq[i] = sq_dist(points.row(i), cb.centroid(0), d);
        for (std::size_t c = 1; c < k; ++c) {
            const double total = std::accumulate(min_sq.begin(), min_sq.end(), 0.0);
            std::size_t chosen;
            if (total <= 0.0) {
                chosen = rng.next_below(n);
            } else {
                double target = rng.next_double() * total;
                chosen = n - 1;
                for (std::size_t i = 0; i < n; ++i) {
                    target -= min_sq[i];
                    if (target <= 0.0) {
                        chosen = i;
                        break;
                    }
                }
            }
            std::copy_n(points.row(chosen), d, cb.vectors.begin() + c * d);
            for (std::size_t i = 0; i < n; ++i)
                min_sq[i] = std::min(min_sq[i],
                                     sq_dist(points.row(i), cb.centroid(c), d));
        }
    }

    std::vector<std::size_t> assign(n);
    std::vector<double> sums(k * d);
    std::vector<std::size_t> counts(k);
    double prev_inertia = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < 100; ++iter) {
        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double best_d = sq_dist(points.row(i), cb.centroid(0), d);
            std::size_t best_c = 0;
            for (std::size_t c = 1; c < k; ++c) {
                const double dd = sq_dist(points.row(i), cb.centroid(c), d);
                if (dd < best_d) {
                    best_d = dd;
                    best_c = c;
                }
            }
            assign[i] = best_c;
            inertia += best_d;
        }
        if (inertia > prev_inertia * (1.0 + 1e-9) + 1e-12)
            throw std::logic_error("kmeans_fit: inertia increased");
        prev_inertia = inertia;

        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            const double* p = points.row(i);
            double* s = sums.data() + assign[i] * d;
            for (std::size_t j = 0; j < d; ++j) s[j] += p[j];
            ++counts[assign[i]];
        }
        double shift = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) {
                // re-seed from the point farthest from its centroid
                std::size_t far_i = 0;
                double far_d = -1.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const double dd =
                        sq_dist(points.row(i), cb.centroid(assign[i]), d);
                    if (dd > far_d) {
                        far_d = dd;
                        far_i = i;
                    }
                }
                std::copy_n(points.row(far_i), d, cb.vectors.begin() + c * d);
                shift = std::numeric_limits<double>::infinity();
                prev_inertia = std::numeric_limits<double>::infinity();
                continue;
            }
            double s2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double nv = sums[c * d + j] / static_cast<double>(counts[c]);
                const double diff = nv - cb.vectors[c * d + j];
                s2 += diff * diff;
                cb.vectors[c * d + j] = nv;
            }
            shift = std::max(shift, std::sqrt(s2));
        }
        if (shift < 1e-6) break;
    }
    return cb;
}

std::size_t kmeans_assign_one(const Codebook& cb, const double* point) {
    double best_d = sq_dist(point, cb.centroid(0), cb.dim);
    std::size_t best_c = 0;
    for (std::size_t c = 1; c < cb.k; ++c) {
        const double dd = sq_dist(point, cb.centroid(c), cb.dim);
        if (dd < best_d) {
            best_d = dd;
            best_c = c;
        }
    }
    return best_c;
}

std::vector<std::size_t> kmeans_assign(const Codebook& cb, const FrameMatrix& points) {
    if (points.dims() != cb.dim)
        throw std::invalid_argument("kmeans_assign: dimension mismatch");
    std::vector<std::size_t> out(points.frames());
    for (std::size_t i = 0; i < points.frames(); ++i)
        out[i] = kmeans_assign_one(cb, points.row(i));
    return out;
}

}  // namespace planfill
