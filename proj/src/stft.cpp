#include "cssep/stft.hpp"

#include <cmath>
#include <numbers>

namespace cssep {

namespace {

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

void fft_radix2(std::vector<Cpx>& x, bool inverse) {
    const std::size_t n = x.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(x[i], x[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? 2.0 : -2.0) * std::numbers::pi / static_cast<double>(len);
        const Cpx wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            Cpx w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                Cpx u = x[i + k];
                Cpx v = x[i + k + len / 2] * w;
                x[i + k] = u + v;
                x[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

}  // namespace

std::vector<Cpx> dft(const std::vector<Cpx>& in, bool inverse) {
    const std::size_t n = in.size();
    std::vector<Cpx> out = in;
    if (n == 0) return out;
    if (is_pow2(n)) {
        fft_radix2(out, inverse);
    } else {
        for (std::size_t k = 0; k < n; ++k) {
            Cpx acc(0.0, 0.0);
            const double sign = inverse ? 2.0 : -2.0;
            for (std::size_t t = 0; t < n; ++t) {
                double ang = sign * std::numbers::pi * static_cast<double>(k * t) / static_cast<double>(n);
                acc += in[t] * Cpx(std::cos(ang), std::sin(ang));
            }
            out[k] = acc;
        }
    }
    if (inverse)
        for (auto& v : out) v /= static_cast<double>(n);
    return out;
}

std::vector<Cpx> rdft(const std::vector<double>& x) {
    std::vector<Cpx> buf(x.begin(), x.end());
    buf = dft(buf, false);
    buf.resize(x.size() / 2 + 1);
    return buf;
}

std::vector<double> periodic_hann(int n) {
    std::vector<double> w(n);
    for (int i = 0; i < n; ++i)
        w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
    return w;
}

RealMatrix Spectrogram::magnitude() const {
    RealMatrix m(frames.rows(), frames.cols());
    for (Eigen::Index r = 0; r < frames.rows(); ++r)
        for (Eigen::Index c = 0; c < frames.cols(); ++c)
            m(r, c) = std::abs(frames(r, c));
    return m;
}

Spectrogram stft(const AudioBuffer& audio, int window_len, int hop) {
    validate(audio);
    if (hop <= 0 || window_len < hop)
        throw std::invalid_argument("stft: need 0 < hop <= window_len");

    const std::size_t len = audio.samples.size();
    std::size_t n_frames = 1;
    if (len > static_cast<std::size_t>(window_len)) {
        std::size_t extra = len - window_len;
        n_frames = 1 + (extra + hop - 1) / hop;
    }

    const std::vector<double> win = periodic_hann(window_len);
    const int n_bins = window_len / 2 + 1;

    Spectrogram spec;
    spec.window_len = window_len;
    spec.hop = hop;
    spec.sample_rate = audio.sample_rate;
    spec.source_len = len;
    spec.frames.resize(static_cast<Eigen::Index>(n_frames), n_bins);

    std::vector<double> buf(window_len);
    for (std::size_t f = 0; f < n_frames; ++f) {
        const std::size_t start = f * hop;
        for (int i = 0; i < window_len; ++i) {
            std::size_t idx = start + i;
            buf[i] = (idx < len) ? audio.samples[idx] * win[i] : 0.0;
        }
        auto bins = rdft(buf);
        for (int b = 0; b < n_bins; ++b)
            spec.frames(static_cast<Eigen::Index>(f), b) = bins[b];
    }
    return spec;
}

AudioBuffer istft(const Spectrogram& spec) {
    const int w = spec.window_len;
    const int hop = spec.hop;
    const int n_bins = w / 2 + 1;
    if (spec.frames.cols() != n_bins)
        throw std::invalid_argument("istft: n_bins inconsistent with window_len");

    const std::vector<double> win = periodic_hann(w);

    // Least-squares dual window: d[n] = win[n] / sum_k win[n + k*hop]^2.
    std::vector<double> denom(w, 0.0);
    for (int n = 0; n < w; ++n)
        for (int k = -w / hop - 1; k <= w / hop + 1; ++k) {
            int idx = n + k * hop;
            if (idx >= 0 && idx < w) denom[n] += win[idx] * win[idx];
        }
    std::vector<double> dual(w);
    for (int n = 0; n < w; ++n) {
        if (denom[n] < 1e-8)
            throw std::invalid_argument("istft: window/hop pair violates COLA");
        dual[n] = win[n] / denom[n];
    }

    const std::size_t n_frames = static_cast<std::size_t>(spec.frames.rows());
    const std::size_t out_len = (n_frames - 1) * hop + w;
    AudioBuffer out;
    out.sample_rate = spec.sample_rate;
    out.samples.assign(out_len, 0.0);

    std::vector<Cpx> full(w);
    for (std::size_t f = 0; f < n_frames; ++f) {
        for (int b = 0; b < n_bins; ++b) full[b] = spec.frames(static_cast<Eigen::Index>(f), b);
        for (int b = n_bins; b < w; ++b) full[b] = std::conj(full[w - b]);
        auto time = dft(full, true);
        const std::size_t start = f * hop;
        for (int i = 0; i < w; ++i)
            out.samples[start + i] += time[i].real() * dual[i];
    }
    return out;
}

Spectrogram apply_mask(const Spectrogram& mix, const MaskMatrix& mask) {
    if (mask.values.rows() != mix.frames.rows() || mask.values.cols() != mix.frames.cols())
        throw std::invalid_argument("apply_mask: shape mismatch");
    Spectrogram out = mix;
    for (Eigen::Index r = 0; r < out.frames.rows(); ++r)
        for (Eigen::Index c = 0; c < out.frames.cols(); ++c)
            out.frames(r, c) *= mask.values(r, c);
    return out;
}

RealMatrix log_mag_features(const Spectrogram& spec) {
    RealMatrix m = spec.magnitude();
    return (m.array() + kLogMagEps).log().matrix();
}

double si_sdr(const AudioBuffer& estimate, const AudioBuffer& reference) {
    if (estimate.samples.size() != reference.samples.size())
        throw std::invalid_argument("si_sdr: length mismatch");
    const std::size_t n = reference.samples.size();
    double ref_energy = energy(reference.samples);
    if (ref_energy <= 0.0) throw std::invalid_argument("si_sdr: all-zero reference");

    double dot = 0.0;
    for (std::size_t i = 0; i < n; ++i) dot += estimate.samples[i] * reference.samples[i];
    const double alpha = dot / ref_energy;

    double target = 0.0, noise = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double t = alpha * reference.samples[i];
        double e = estimate.samples[i] - t;
        target += t * t;
        noise += e * e;
    }
    if (noise <= 0.0 || target <= 0.0) return kSiSdrCapDb;
    double db = 10.0 * std::log10(target / noise);
    return std::min(db, kSiSdrCapDb);
}

}  // namespace cssep
