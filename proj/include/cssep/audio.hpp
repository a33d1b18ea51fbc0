#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace cssep {

// Mono PCM carrier used throughout the pipeline.
struct AudioBuffer {
    std::vector<double> samples;
    int sample_rate = 16000;

    AudioBuffer() = default;
    AudioBuffer(std::vector<double> s, int sr) : samples(std::move(s)), sample_rate(sr) {}

    std::size_t size() const { return samples.size(); }
    double duration_s() const { return static_cast<double>(samples.size()) / sample_rate; }
};

// Throws std::invalid_argument on NaN/Inf samples or non-positive rate.
void validate(const AudioBuffer& audio);

double rms(const std::vector<double>& x);
double energy(const std::vector<double>& x);

// 16-bit PCM or 32-bit float WAV, mono only. Multi-channel or other
// encodings -> std::runtime_error.
AudioBuffer read_wav(const std::string& path);

// format: 16 -> PCM16, 32 -> IEEE float.
void write_wav(const std::string& path, const AudioBuffer& audio, int bits = 32);

}  // namespace cssep
