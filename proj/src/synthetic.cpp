#include "cssep/synthetic.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace cssep {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;
}

AudioBuffer synth_utterance(int speaker_class, double duration_s, int sample_rate,
                            uint64_t seed) {
  if (speaker_class != 0 && speaker_class != 1)
    throw std::invalid_argument("synth_utterance: speaker_class must be 0 or 1");
  if (duration_s <= 0.0) throw std::invalid_argument("synth_utterance: duration must be > 0");

  const double lo = speaker_class == 0 ? 300.0 : 2600.0;
  const double hi = speaker_class == 0 ? 1400.0 : 5400.0;

  std::mt19937_64 rng(seed * 2654435761u + 17u * static_cast<uint64_t>(speaker_class));
  std::uniform_real_distribution<double> freq_dist(lo, hi);
  std::uniform_real_distribution<double> len_dist(0.15, 0.35);
  std::uniform_real_distribution<double> amp_dist(0.12, 0.3);
  std::uniform_real_distribution<double> gap_dist(0.0, 0.05);

  AudioBuffer out;
  out.sample_rate = sample_rate;
  const std::size_t n = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
  out.samples.assign(n, 0.0);

  std::size_t pos = 0;
  while (pos < n) {
    const double note_s = len_dist(rng);
    const std::size_t note_n = static_cast<std::size_t>(note_s * sample_rate);
    const double f0 = freq_dist(rng);
    const double f1 = std::min(hi, 2.0 * f0);
    const double a = amp_dist(rng);
    for (std::size_t i = 0; i < note_n && pos + i < n; ++i) {
      const double t = static_cast<double>(i) / sample_rate;
      // Hann envelope keeps note boundaries click-free.
      const double env = 0.5 - 0.5 * std::cos(kTwoPi * i / std::max<std::size_t>(note_n - 1, 1));
      double s = std::sin(kTwoPi * f0 * t) + 0.35 * std::sin(kTwoPi * f1 * t);
      out.samples[pos + i] += a * env * s;
    }
    pos += note_n + static_cast<std::size_t>(gap_dist(rng) * sample_rate);
  }
  return out;
}

AudioBuffer white_noise(double duration_s, double amplitude, int sample_rate, uint64_t seed) {
  AudioBuffer out;
  out.sample_rate = sample_rate;
  const std::size_t n = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
  out.samples.resize(n);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (auto& s : out.samples) s = amplitude * dist(rng);
  return out;
}

}  // namespace cssep
