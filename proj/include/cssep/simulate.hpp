#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cssep/audio.hpp"

namespace cssep {

using Vec3 = std::array<double, 3>;

struct RoomSpec {
    Vec3 dimensions{5.0, 4.0, 3.0};
    // Absorption per wall: {x=0, x=Lx, y=0, y=Ly, z=0, z=Lz}, each in (0,1].
    std::array<double, 6> absorption{0.5, 0.5, 0.5, 0.5, 0.5, 0.5};
    int max_reflection_order = 3;
    double speed_of_sound = 343.0;
};

// Mirror-source enumeration up to max_reflection_order. Fractional delays are
// realized with an 81-tap Hann-windowed sinc kernel.
std::vector<double> image_method_rir(const RoomSpec& room, const Vec3& source,
                                     const Vec3& mic, int sample_rate);

enum class MixPattern { partial_overlap, full_overlap, sequential, single_speaker };

std::string to_string(MixPattern p);
MixPattern pattern_from_string(const std::string& s);

struct MixtureSpec {
    MixPattern pattern = MixPattern::partial_overlap;
    double sir_db = 0.0;   // [-5, 5]
    double snr_db = 20.0;  // [10, 30]
    double offset_s = -1.0;  // < 0: sampled from seed
    uint64_t seed = 0;
};

struct Interval {
    double start_s = 0.0;
    double end_s = 0.0;
};

struct MixtureSample {
    AudioBuffer mixture;
    std::vector<AudioBuffer> references;  // reverberant pre-noise source images
    std::vector<std::vector<Interval>> activity;  // per source
    MixtureSpec spec;
};

// Reverberates, places per pattern, scales source B to sir_db over the
// overlapped region, then adds noise at snr_db relative to the mixture.
// Noise shorter than the mixture is looped.
MixtureSample make_mixture(const AudioBuffer& utt_a, const AudioBuffer& utt_b,
                           const AudioBuffer& noise,
                           const std::vector<double>& rir_a,
                           const std::vector<double>& rir_b,
                           const MixtureSpec& spec);

// (time where >=2 sources active) / (time where >=1 source active).
double overlap_ratio(const MixtureSample& sample);

// Offset that yields the target overlap ratio for two utterance durations,
// clamped to feasibility. ratio = overlap / (dur_a + dur_b - overlap).
double offset_for_overlap_ratio(double dur_a_s, double dur_b_s, double target_ratio);

struct AgcConfig {
    double target_dbfs = -26.0;  // target RMS level
    double mu = 1e-3;            // log-domain loop gain per block
    int block = 160;
    double silence_floor = 1e-6;  // blocks below this RMS do not update the loop
};

// Causal logarithmic-loop AGC: per 160-sample block, apply the current gain
// then step the log gain toward the target output level.
AudioBuffer agc(const AudioBuffer& audio, const AgcConfig& cfg = {});

struct ManifestEntry {
    std::string utterance_id;
    std::string wav_path;
    std::string speaker_id;
    double duration_s = 0.0;
};

// Line-delimited: utterance_id<TAB>wav_path<TAB>speaker_id<TAB>duration_s
std::vector<ManifestEntry> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);

// Sidecar metadata emitted next to each generated mixture.
std::string mixture_metadata_json(const MixtureSample& sample);

}  // namespace cssep
