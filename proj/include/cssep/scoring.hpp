#pragma once

#include <optional>
#include <string>
#include <vector>

namespace cssep {

struct TimedToken {
    std::string word;
    double start_s = -1.0;
    double end_s = -1.0;
};

struct Transcript {
    std::vector<TimedToken> tokens;
    std::string stream_id;

    std::vector<std::string> words() const;
    bool has_times() const;
};

// lowercase + strip punctuation; drops tokens that normalize to nothing.
std::string normalize_word(const std::string& w);
Transcript normalize(const Transcript& t);

struct WERReport {
    long substitutions = 0;
    long deletions = 0;
    long insertions = 0;
    long ref_words = 0;
    std::vector<int> permutation;  // hypothesis -> reference assignment

    long errors() const { return substitutions + deletions + insertions; }
    double wer() const;
};

// Levenshtein with unit costs; ties prefer substitution over deletion over
// insertion. Empty reference -> std::invalid_argument.
WERReport wer(const Transcript& hyp, const Transcript& ref);

// Minimum total (S+D+I)/total-ref-words over all assignments of hypothesis
// streams to reference streams.
WERReport best_permutation_wer(const std::vector<Transcript>& hyps,
                               const std::vector<Transcript>& refs);

// Joint multi-stream alignment: every reference stream aligns monotonically,
// words may match into any hypothesis stream. Exact DP over the product
// lattice; state spaces above max_states -> std::runtime_error advising
// segmentation.
WERReport speaker_agnostic_wer(const std::vector<Transcript>& hyps,
                               const std::vector<Transcript>& refs,
                               std::size_t max_states = 20'000'000);

// Cut positions where no token is active for >= max_silence seconds, or where
// an utterance ends with no other utterance spanning the boundary. Returned
// boundaries partition [earliest start, latest end].
std::vector<double> utterance_group_segment(const std::vector<Transcript>& refs,
                                            double max_silence);

// Line format: stream_id start_s end_s word
std::vector<Transcript> read_transcripts(const std::string& path);
void write_transcripts(const std::string& path, const std::vector<Transcript>& transcripts);

std::string format_report(const WERReport& report);

}  // namespace cssep
