#include "cssep/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace cssep {

namespace {

constexpr int kSincHalf = 40;  // 81-tap fractional-delay kernel

double hann_taper(double x) {
    return 0.5 + 0.5 * std::cos(std::numbers::pi * x / (kSincHalf + 1));
}

double sinc(double x) {
    if (std::abs(x) < 1e-12) return 1.0;
    double px = std::numbers::pi * x;
    return std::sin(px) / px;
}

void check_inside(const RoomSpec& room, const Vec3& p, const char* what) {
    for (int i = 0; i < 3; ++i)
        if (!(p[i] > 0.0 && p[i] < room.dimensions[i]))
            throw std::invalid_argument(std::string("image_method_rir: ") + what + " outside room");
}

std::vector<double> convolve(const std::vector<double>& x, const std::vector<double>& h) {
    std::vector<double> y(x.size() + h.size() - 1, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] == 0.0) continue;
        for (std::size_t j = 0; j < h.size(); ++j) y[i + j] += x[i] * h[j];
    }
    return y;
}

double span_energy(const std::vector<double>& x, std::size_t start, std::size_t end) {
    double e = 0.0;
    for (std::size_t i = start; i < std::min(end, x.size()); ++i) e += x[i] * x[i];
    return e;
}

}  // namespace

std::vector<double> image_method_rir(const RoomSpec& room, const Vec3& source,
                                     const Vec3& mic, int sample_rate) {
    check_inside(room, source, "source");
    check_inside(room, mic, "mic");
    if (room.max_reflection_order < 0 || room.max_reflection_order > 10)
        throw std::invalid_argument("image_method_rir: max_reflection_order must be in [0, 10]");

    // Reflection coefficient per wall from the absorption coefficient.
    std::array<double, 6> beta;
    for (int i = 0; i < 6; ++i) {
        if (!(room.absorption[i] > 0.0 && room.absorption[i] <= 1.0))
            throw std::invalid_argument("image_method_rir: absorption must be in (0,1]");
        beta[i] = std::sqrt(1.0 - room.absorption[i]);
    }

    const int order = room.max_reflection_order;
    struct Arrival { double delay; double amp; };
    std::vector<Arrival> arrivals;

    // Allen-Berkley image enumeration: image coordinate along axis i is
    // (1-2q)*s + 2*l*L with q*|l-q|... reflections = |l-q| + |l|.
    for (int qx = 0; qx <= 1; ++qx)
    for (int lx = -order; lx <= order; ++lx) {
        int rx0 = std::abs(lx - qx), rxL = std::abs(lx);
        if (rx0 + rxL > order) continue;
        for (int qy = 0; qy <= 1; ++qy)
        for (int ly = -order; ly <= order; ++ly) {
            int ry0 = std::abs(ly - qy), ryL = std::abs(ly);
            if (rx0 + rxL + ry0 + ryL > order) continue;
            for (int qz = 0; qz <= 1; ++qz)
            for (int lz = -order; lz <= order; ++lz) {
                int rz0 = std::abs(lz - qz), rzL = std::abs(lz);
                if (rx0 + rxL + ry0 + ryL + rz0 + rzL > order) continue;

                Vec3 img{(1 - 2 * qx) * source[0] + 2.0 * lx * room.dimensions[0],
                         (1 - 2 * qy) * source[1] + 2.0 * ly * room.dimensions[1],
                         (1 - 2 * qz) * source[2] + 2.0 * lz * room.dimensions[2]};
                double d = std::sqrt((img[0] - mic[0]) * (img[0] - mic[0]) +
                                     (img[1] - mic[1]) * (img[1] - mic[1]) +
                                     (img[2] - mic[2]) * (img[2] - mic[2]));
                double refl = std::pow(beta[0], rx0) * std::pow(beta[1], rxL) *
                              std::pow(beta[2], ry0) * std::pow(beta[3], ryL) *
                              std::pow(beta[4], rz0) * std::pow(beta[5], rzL);
                arrivals.push_back({d / room.speed_of_sound * sample_rate,
                                    refl / (4.0 * std::numbers::pi * d)});
            }
        }
    }

    double max_delay = 0.0;
    for (const auto& a : arrivals) max_delay = std::max(max_delay, a.delay);
    std::vector<double> rir(static_cast<std::size_t>(std::ceil(max_delay)) + kSincHalf + 1, 0.0);

    for (const auto& a : arrivals) {
        int lo = std::max(0, static_cast<int>(std::ceil(a.delay)) - kSincHalf);
        int hi = std::min(static_cast<int>(rir.size()) - 1,
                          static_cast<int>(std::floor(a.delay)) + kSincHalf);
        for (int n = lo; n <= hi; ++n) {
            double x = n - a.delay;
            rir[n] += a.amp * sinc(x) * hann_taper(x);
        }
    }
    return rir;
}

std::string to_string(MixPattern p) {
    switch (p) {
        case MixPattern::partial_overlap: return "partial_overlap";
        case MixPattern::full_overlap: return "full_overlap";
        case MixPattern::sequential: return "sequential";
        case MixPattern::single_speaker: return "single_speaker";
    }
    return "?";
}

MixPattern pattern_from_string(const std::string& s) {
    if (s == "partial_overlap") return MixPattern::partial_overlap;
    if (s == "full_overlap") return MixPattern::full_overlap;
    if (s == "sequential") return MixPattern::sequential;
    if (s == "single_speaker") return MixPattern::single_speaker;
    throw std::invalid_argument("unknown mixing pattern: " + s);
}

MixtureSample make_mixture(const AudioBuffer& utt_a, const AudioBuffer& utt_b,
                           const AudioBuffer& noise,
                           const std::vector<double>& rir_a,
                           const std::vector<double>& rir_b,
                           const MixtureSpec& spec) {
    validate(utt_a);
    if (energy(utt_a.samples) <= 0.0)
        throw std::invalid_argument("make_mixture: utterance A is silent");
    const int sr = utt_a.sample_rate;
    std::mt19937_64 rng(spec.seed);

    std::vector<double> rev_a = rir_a.empty() ? utt_a.samples : convolve(utt_a.samples, rir_a);
    const std::size_t da = rev_a.size();

    MixtureSample out;
    out.spec = spec;

    std::vector<double> rev_b;
    std::size_t offset = 0;
    if (spec.pattern != MixPattern::single_speaker) {
        validate(utt_b);
        if (utt_b.sample_rate != sr)
            throw std::invalid_argument("make_mixture: sample-rate mismatch");
        if (energy(utt_b.samples) <= 0.0)
            throw std::invalid_argument("make_mixture: utterance B is silent");
        rev_b = rir_b.empty() ? utt_b.samples : convolve(utt_b.samples, rir_b);
        const std::size_t db = rev_b.size();

        auto sample_or_fixed = [&](double lo, double hi) -> std::size_t {
            double o = spec.offset_s;
            if (o < 0.0) o = std::uniform_real_distribution<double>(lo, hi)(rng);
            if (o < lo || o > hi)
                throw std::invalid_argument("make_mixture: offset infeasible for pattern");
            return static_cast<std::size_t>(std::llround(o * sr));
        };

        const double da_s = static_cast<double>(da) / sr;
        const double db_s = static_cast<double>(db) / sr;
        switch (spec.pattern) {
            case MixPattern::partial_overlap: {
                // overlap must be nonzero and shorter than both sources
                double lo = std::max(1.0 / sr, da_s - db_s + 1.0 / sr);
                double hi = da_s - 1.0 / sr;
                if (hi <= lo) throw std::invalid_argument("make_mixture: partial overlap infeasible");
                offset = sample_or_fixed(lo, hi);
                break;
            }
            case MixPattern::full_overlap: {
                if (db > da) throw std::invalid_argument("make_mixture: B longer than A, full overlap infeasible");
                offset = sample_or_fixed(0.0, da_s - db_s);
                break;
            }
            case MixPattern::sequential:
                offset = sample_or_fixed(da_s, da_s + 0.5);
                break;
            default: break;
        }

        // Scale B: energy ratio over the overlapped region equals sir_db.
        // For sequential placement the ratio is taken over each source's own span.
        std::size_t ov_start = offset, ov_end = std::min(da, offset + db);
        double ea, eb;
        if (ov_end > ov_start) {
            ea = span_energy(rev_a, ov_start, ov_end);
            eb = span_energy(rev_b, ov_start > offset ? ov_start - offset : 0, ov_end - offset);
        } else {
            ea = energy(rev_a);
            eb = energy(rev_b);
        }
        double gain = std::sqrt(ea / (eb * std::pow(10.0, spec.sir_db / 10.0)));
        for (double& v : rev_b) v *= gain;
    }

    const std::size_t total = rev_b.empty() ? da : std::max(da, offset + rev_b.size());

    std::vector<double> ref_a(total, 0.0), ref_b;
    std::copy(rev_a.begin(), rev_a.end(), ref_a.begin());
    std::vector<double> mix = ref_a;
    if (!rev_b.empty()) {
        ref_b.assign(total, 0.0);
        std::copy(rev_b.begin(), rev_b.end(), ref_b.begin() + offset);
        for (std::size_t i = 0; i < total; ++i) mix[i] += ref_b[i];
    }

    // Noise scaled so mixture-to-noise power ratio equals snr_db; looped when short.
    std::vector<double> noi(total, 0.0);
    if (!noise.samples.empty() && energy(noise.samples) > 0.0) {
        for (std::size_t i = 0; i < total; ++i) noi[i] = noise.samples[i % noise.samples.size()];
        double pm = energy(mix) / total;
        double pn = energy(noi) / total;
        double g = std::sqrt(pm / (pn * std::pow(10.0, spec.snr_db / 10.0)));
        for (std::size_t i = 0; i < total; ++i) mix[i] += g * noi[i];
    }

    out.mixture = AudioBuffer(std::move(mix), sr);
    out.references.emplace_back(std::move(ref_a), sr);
    out.activity.push_back({{0.0, static_cast<double>(da) / sr}});
    if (!ref_b.empty()) {
        std::size_t b_len = rev_b.size();
        out.references.emplace_back(std::move(ref_b), sr);
        out.activity.push_back({{static_cast<double>(offset) / sr,
                                 static_cast<double>(offset + b_len) / sr}});
    }
    return out;
}

double overlap_ratio(const MixtureSample& sample) {
    struct Event { double t; int delta; };
    std::vector<Event> events;
    for (const auto& src : sample.activity)
        for (const auto& iv : src) {
            events.push_back({iv.start_s, +1});
            events.push_back({iv.end_s, -1});
        }
    if (events.empty()) throw std::invalid_argument("overlap_ratio: no activity");
    std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) { return a.t < b.t; });

    double any = 0.0, two = 0.0, prev = events.front().t;
    int active = 0;
    for (const auto& e : events) {
        double span = e.t - prev;
        if (active >= 1) any += span;
        if (active >= 2) two += span;
        active += e.delta;
        prev = e.t;
    }
    if (any <= 0.0) throw std::invalid_argument("overlap_ratio: no active speech");
    return two / any;
}

double offset_for_overlap_ratio(double dur_a_s, double dur_b_s, double target_ratio) {
    double ov = target_ratio * (dur_a_s + dur_b_s) / (1.0 + target_ratio);
    ov = std::min(ov, std::min(dur_a_s, dur_b_s));
    return dur_a_s - ov;  // B starts so the tail of A overlaps the head of B
}

AudioBuffer agc(const AudioBuffer& audio, const AgcConfig& cfg) {
    validate(audio);
    const double target_log = cfg.target_dbfs / 20.0 * std::numbers::ln10;
    const double g_max = 60.0 / 20.0 * std::numbers::ln10;

    AudioBuffer out;
    out.sample_rate = audio.sample_rate;
    out.samples.resize(audio.samples.size());

    double g = 0.0;  // log gain
    const std::size_t n = audio.samples.size();
    for (std::size_t start = 0; start < n; start += cfg.block) {
        const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.block));
        const double gain = std::exp(g);
        double sq = 0.0;
        for (std::size_t i = start; i < end; ++i) {
            out.samples[i] = audio.samples[i] * gain;
            sq += audio.samples[i] * audio.samples[i];
        }
        if (end - start < static_cast<std::size_t>(cfg.block)) break;  // partial tail: no update
        const double block_rms = std::sqrt(sq / cfg.block);
        if (block_rms < cfg.silence_floor) continue;  // hold gain over silence
        const double err = target_log - (std::log(block_rms) + g);
        g = std::clamp(g + cfg.mu * static_cast<double>(cfg.block) * err / 160.0, -g_max, g_max);
    }
    return out;
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest: " + path);
    std::vector<ManifestEntry> entries;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        ManifestEntry e;
        if (!(ss >> e.utterance_id >> e.wav_path >> e.speaker_id >> e.duration_s))
            throw std::runtime_error("malformed manifest line: " + line);
        entries.push_back(std::move(e));
    }
    return entries;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest: " + path);
    for (const auto& e : entries)
        out << e.utterance_id << '\t' << e.wav_path << '\t' << e.speaker_id << '\t'
            << e.duration_s << '\n';
}

std::string mixture_metadata_json(const MixtureSample& sample) {
    std::ostringstream os;
    os << "{\"pattern\":\"" << to_string(sample.spec.pattern) << "\","
       << "\"sir_db\":" << sample.spec.sir_db << ","
       << "\"snr_db\":" << sample.spec.snr_db << ","
       << "\"seed\":" << sample.spec.seed << ","
       << "\"activity\":[";
    for (std::size_t s = 0; s < sample.activity.size(); ++s) {
        if (s) os << ",";
        os << "[";
        for (std::size_t i = 0; i < sample.activity[s].size(); ++i) {
            if (i) os << ",";
            os << "[" << sample.activity[s][i].start_s << "," << sample.activity[s][i].end_s << "]";
        }
        os << "]";
    }
    os << "]}";
    return os.str();
}

}  // namespace cssep
