#pragma once

#include <string>
#include <vector>

#include "cssep/audio.hpp"
#include "cssep/separator.hpp"
#include "cssep/simulate.hpp"

namespace cssep {

struct ChunkPlan {
    double t_h = 0.7, t_c = 1.6, t_f = 0.1;
    int sample_rate = 16000;
    long n_samples = 0;
    struct Chunk {
        long hist_start = 0;  // may be negative (zero-padded)
        long cur_start = 0;
        long cur_end = 0;
        long fut_end = 0;  // may exceed n_samples (zero-padded)
    };
    std::vector<Chunk> chunks;
};

// Current regions tile [0, n_samples) at hop t_c; history/future are
// zero-padded at the recording boundaries.
ChunkPlan plan_chunks(long n_samples, int sample_rate, double t_h = 0.7, double t_c = 1.6,
                      double t_f = 0.1);

// Chunk span [hist_start, fut_end) with zeros outside the recording.
std::vector<double> extract_chunk(const AudioBuffer& audio, const ChunkPlan::Chunk& chunk);

// Permutation of current-chunk heads minimizing summed squared error between
// overlapping magnitude-spectrogram regions; ties break toward identity.
// Empty overlap yields identity with warned set.
std::vector<int> align_permutation(const std::vector<std::vector<double>>& prev_overlap,
                                   const std::vector<std::vector<double>>& cur_overlap,
                                   int sample_rate, bool* warned = nullptr);

struct StitchState {
    std::vector<int> running_permutation;  // output head -> stream
    std::vector<double> alignment_scores;
    int flips = 0;
};

// chunk_outputs[k][head] covers chunk k's full span [hist_start, fut_end).
// Concatenates current regions under the composed per-chunk alignment.
std::vector<AudioBuffer> stitch(const std::vector<std::vector<AudioBuffer>>& chunk_outputs,
                                const ChunkPlan& plan, StitchState* state = nullptr);

struct MergeReport {
    int merged_windows = 0;
    int total_windows = 0;
};

// Per analysis window, moves the weaker stream's content into the stronger
// one when the energy gap exceeds ratio_db; 20 ms cross-fades at decision
// boundaries.
std::vector<AudioBuffer> merge_single_speaker(const std::vector<AudioBuffer>& streams,
                                              double window_s = 0.8, double ratio_db = 15.0,
                                              MergeReport* report = nullptr);

struct CssReport {
    int n_chunks = 0;
    int permutation_flips = 0;
    int merged_windows = 0;
    int total_windows = 0;
    double wall_time_s = 0.0;
    std::string to_json() const;
};

struct CssParams {
    double t_h = 0.7, t_c = 1.6, t_f = 0.1;
    double merge_window_s = 0.8;
    double merge_ratio_db = 15.0;
    bool apply_agc = true;
    bool apply_merger = true;
};

// agc -> chunk -> separate per chunk -> align/stitch -> single-speaker merge.
std::vector<AudioBuffer> css_run(const Separator& model, const SslEncoder* encoder,
                                 const AudioBuffer& audio, const CssParams& params = {},
                                 CssReport* report = nullptr);

}  // namespace cssep
