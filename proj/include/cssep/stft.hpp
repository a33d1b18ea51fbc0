#pragma once

#include <complex>
#include <vector>

#include <Eigen/Dense>

#include "cssep/audio.hpp"

namespace cssep {

using Cpx = std::complex<double>;
using CpxMatrix = Eigen::Matrix<Cpx, Eigen::Dynamic, Eigen::Dynamic>;
using RealMatrix = Eigen::MatrixXd;

struct Spectrogram {
    CpxMatrix frames;  // [n_frames x n_bins]
    int window_len = 512;
    int hop = 160;
    int sample_rate = 16000;
    // Original (unpadded) sample count; istft output is padded, callers trim.
    std::size_t source_len = 0;

    Eigen::Index n_frames() const { return frames.rows(); }
    Eigen::Index n_bins() const { return frames.cols(); }

    RealMatrix magnitude() const;
};

// Per-bin multiplicative gains in [0,1], same shape as the mixture frames.
struct MaskMatrix {
    RealMatrix values;
};

// In-order DFT; radix-2 when n is a power of two, direct evaluation otherwise.
std::vector<Cpx> dft(const std::vector<Cpx>& x, bool inverse = false);
std::vector<Cpx> rdft(const std::vector<double>& x);  // first n/2+1 bins

std::vector<double> periodic_hann(int n);

// Analysis with a periodic Hann window. Tail zero-padded to full frames;
// inputs shorter than one window are padded to a single frame.
Spectrogram stft(const AudioBuffer& audio, int window_len = 512, int hop = 160);

// Weighted overlap-add synthesis using the computed dual window. Returns the
// padded length recorded by stft. Throws std::invalid_argument when the
// window/hop pair does not satisfy COLA.
AudioBuffer istft(const Spectrogram& spec);

Spectrogram apply_mask(const Spectrogram& mix, const MaskMatrix& mask);

// log(|X| + eps), eps = 1e-7.
RealMatrix log_mag_features(const Spectrogram& spec);
inline constexpr double kLogMagEps = 1e-7;

// Scale-invariant SDR in dB, capped at +60. Equal lengths required; all-zero
// reference is an error.
double si_sdr(const AudioBuffer& estimate, const AudioBuffer& reference);
inline constexpr double kSiSdrCapDb = 60.0;

}  // namespace cssep
