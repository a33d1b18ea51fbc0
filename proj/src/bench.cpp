#include "cssep/bench.hpp"

#include <algorithm>
#include <chrono>
#include <iomanip>
#include <random>
#include <sstream>
#include <thread>

namespace cssep {

std::string RTFReport::to_text() const {
    std::ostringstream os;
    os << "rtf=" << std::fixed << std::setprecision(4) << mean_rtf << " runs=" << runs
       << " probe_s=" << probe_duration_s << " env=[" << environment << "]";
    return os.str();
}

RTFReport measure_rtf(const std::function<void()>& pipeline, double probe_duration_s,
                      int runs, int warmup) {
    if (runs < 1) throw std::invalid_argument("measure_rtf: runs must be >= 1");
    for (int i = 0; i < warmup; ++i) pipeline();

    RTFReport report;
    report.probe_duration_s = probe_duration_s;
    report.runs = runs;
    report.times_s.reserve(runs);
    for (int i = 0; i < runs; ++i) {
        auto t0 = std::chrono::steady_clock::now();
        pipeline();
        auto t1 = std::chrono::steady_clock::now();
        report.times_s.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    double total = 0.0;
    for (double t : report.times_s) total += t;
    report.mean_rtf = total / runs / probe_duration_s;

    std::ostringstream env;
    env << "cores=" << std::thread::hardware_concurrency() << " threads_used=1"
        << " timing=steady_clock boundary=separation-pipeline-no-io";
    report.environment = env.str();
    return report;
}

AudioBuffer make_probe(double duration_s, int sample_rate, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 0.1);
    AudioBuffer probe;
    probe.sample_rate = sample_rate;
    probe.samples.resize(static_cast<std::size_t>(duration_s * sample_rate));
    for (auto& s : probe.samples) s = g(rng);
    return probe;
}

long count_params(const EncoderConfig& c) {
    const long d = c.model_dim, ff = c.ff_dim;
    long per_block = 2 * d                    // ln1
                     + 4 * (d * d + d)        // q,k,v,o projections
                     + c.rel_bias_buckets     // relative position bias
                     + 2 * d                  // ln2
                     + d * ff + ff            // ff in
                     + ff * d + d;            // ff out
    return c.n_mel * d + d      // input projection
           + d                  // mask embedding
           + c.n_layers * per_block
           + d * c.vocab_k + c.vocab_k;  // prediction head
}

long count_params(const SeparatorConfig& c) {
    const long d = c.model_dim, ff = c.ff_dim, k = c.conv_kernel;
    const long ffn = d * ff + ff + ff * d + d;
    long per_block = 2 * d + ffn              // macaron ff 1
                     + 2 * d + 4 * (d * d + d)  // attention
                     + 2 * d + k * d + d + d * d + d  // conv module
                     + 2 * d + ffn;           // macaron ff 2
    return static_cast<long>(c.input_dim()) * d + d      // input projection
           + std::max(1, c.ssl_layers)                   // fusion layer logits
           + c.n_layers * per_block
           + 2 * d                                       // output layer norm
           + static_cast<long>(c.n_outputs) * (d * c.n_bins + c.n_bins);
}

std::vector<SweepEntry> cost_sweep(const std::vector<SweepConfig>& configs,
                                   const AudioBuffer& probe, int runs) {
    std::vector<SweepEntry> out;
    for (const auto& cfg : configs) {
        SweepEntry e;
        e.name = cfg.name;
        e.params = cfg.params();
        auto pipeline = cfg.make_pipeline(probe);
        e.rtf = measure_rtf(pipeline, probe.duration_s(), runs).mean_rtf;
        out.push_back(std::move(e));
    }
    std::sort(out.begin(), out.end(),
              [](const SweepEntry& a, const SweepEntry& b) { return a.rtf < b.rtf; });
    return out;
}

std::string format_sweep(const std::vector<SweepEntry>& entries) {
    std::ostringstream os;
    os << std::left << std::setw(24) << "config" << std::right << std::setw(14) << "params"
       << std::setw(10) << "rtf" << '\n';
    for (const auto& e : entries)
        os << std::left << std::setw(24) << e.name << std::right << std::setw(14) << e.params
           << std::setw(10) << std::fixed << std::setprecision(4) << e.rtf << '\n';
    return os.str();
}

}  // namespace cssep
