#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cssep/audio.hpp"
#include "cssep/separator.hpp"
#include "cssep/ssl_encoder.hpp"

namespace cssep {

struct RTFReport {
    double mean_rtf = 0.0;
    std::vector<double> times_s;
    double probe_duration_s = 2.4;
    int runs = 100;
    std::string environment;

    std::string to_text() const;
};

inline constexpr double kRtfProbeSeconds = 2.4;

// Times `pipeline` runs times after 3 warm-up runs; RTF = mean time / probe
// duration. Single-threaded; the environment descriptor records the host.
RTFReport measure_rtf(const std::function<void()>& pipeline, double probe_duration_s,
                      int runs = 100, int warmup = 3);

AudioBuffer make_probe(double duration_s = kRtfProbeSeconds, int sample_rate = 16000,
                       uint64_t seed = 42);

// Closed-form parameter counts for the implemented architectures; exact for
// instantiated models (see the enumeration oracle in tests).
long count_params(const EncoderConfig& config);
long count_params(const SeparatorConfig& config);

struct SweepEntry {
    std::string name;
    long params = 0;
    double rtf = 0.0;
};

struct SweepConfig {
    std::string name;
    std::function<long()> params;
    std::function<std::function<void()>(const AudioBuffer&)> make_pipeline;
};

// Rows sorted by ascending RTF.
std::vector<SweepEntry> cost_sweep(const std::vector<SweepConfig>& configs,
                                   const AudioBuffer& probe, int runs = 20);

std::string format_sweep(const std::vector<SweepEntry>& entries);

}  // namespace cssep
