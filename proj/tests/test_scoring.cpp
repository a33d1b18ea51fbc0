#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "cssep/scoring.hpp"

using namespace cssep;

namespace {

Transcript make_transcript(const std::vector<std::string>& words,
                           const std::string& id = "s0") {
    Transcript t;
    t.stream_id = id;
    double time = 0.0;
    for (const auto& w : words) {
        t.tokens.push_back({w, time, time + 0.4});
        time += 0.5;
    }
    return t;
}

// Plain recursive Levenshtein, memoized: the oracle for total errors.
long lev_oracle(const std::vector<std::string>& hyp, const std::vector<std::string>& ref) {
    std::map<std::pair<std::size_t, std::size_t>, long> memo;
    std::function<long(std::size_t, std::size_t)> go = [&](std::size_t i,
                                                           std::size_t j) -> long {
        if (i == 0) return static_cast<long>(j);
        if (j == 0) return static_cast<long>(i);
        auto key = std::make_pair(i, j);
        auto it = memo.find(key);
        if (it != memo.end()) return it->second;
        long best = go(i - 1, j - 1) + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
        best = std::min(best, go(i, j - 1) + 1);
        best = std::min(best, go(i - 1, j) + 1);
        memo[key] = best;
        return best;
    };
    return go(hyp.size(), ref.size());
}

// Exhaustive multi-stream alignment oracle: depth-first search over the joint
// positions with the same move set as the production DP.
long agnostic_oracle(const std::vector<std::vector<std::string>>& hw,
                     const std::vector<std::vector<std::string>>& rw) {
    std::map<std::vector<std::size_t>, long> memo;
    const std::size_t H = hw.size(), R = rw.size();
    std::function<long(std::vector<std::size_t>&)> go =
        [&](std::vector<std::size_t>& pos) -> long {
        bool done = true;
        for (std::size_t h = 0; h < H; ++h) done = done && pos[h] == hw[h].size();
        for (std::size_t r = 0; r < R; ++r) done = done && pos[H + r] == rw[r].size();
        if (done) return 0;
        auto it = memo.find(pos);
        if (it != memo.end()) return it->second;

        long best = std::numeric_limits<long>::max() / 2;
        for (std::size_t h = 0; h < H; ++h) {
            if (pos[h] >= hw[h].size()) continue;
            ++pos[h];
            best = std::min(best, go(pos) + 1);  // insertion
            --pos[h];
        }
        for (std::size_t r = 0; r < R; ++r) {
            if (pos[H + r] >= rw[r].size()) continue;
            ++pos[H + r];
            best = std::min(best, go(pos) + 1);  // deletion
            --pos[H + r];
            for (std::size_t h = 0; h < H; ++h) {
                if (pos[h] >= hw[h].size()) continue;
                long step = hw[h][pos[h]] == rw[r][pos[H + r]] ? 0 : 1;
                ++pos[h];
                ++pos[H + r];
                best = std::min(best, go(pos) + step);
                --pos[h];
                --pos[H + r];
            }
        }
        memo[pos] = best;
        return best;
    };
    std::vector<std::size_t> pos(H + R, 0);
    return go(pos);
}

std::vector<std::string> random_words(std::mt19937_64& rng, int max_len) {
    static const std::vector<std::string> vocab = {"red", "green", "blue", "gold"};
    std::uniform_int_distribution<int> len(0, max_len);
    std::uniform_int_distribution<std::size_t> pick(0, vocab.size() - 1);
    std::vector<std::string> out;
    const int n = len(rng);
    for (int i = 0; i < n; ++i) out.push_back(vocab[pick(rng)]);
    return out;
}

}  // namespace

TEST_CASE("normalize_word lowercases and strips punctuation") {
    CHECK(normalize_word("Hello,") == "hello");
    CHECK(normalize_word("DON'T") == "don't");
    CHECK(normalize_word("...") == "");
    CHECK(normalize_word("A1-b2") == "a1b2");
}

TEST_CASE("wer on hand-checked cases") {
    CHECK(wer(make_transcript({"a", "b", "c"}), make_transcript({"a", "b", "c"})).errors() == 0);

    auto rep = wer(make_transcript({"a", "x", "c"}), make_transcript({"a", "b", "c"}));
    CHECK(rep.substitutions == 1);
    CHECK(rep.deletions == 0);
    CHECK(rep.insertions == 0);
    CHECK(rep.wer() == doctest::Approx(1.0 / 3.0));

    rep = wer(make_transcript({"a", "c"}), make_transcript({"a", "b", "c"}));
    CHECK(rep.deletions == 1);
    CHECK(rep.errors() == 1);

    rep = wer(make_transcript({"a", "b", "x", "c"}), make_transcript({"a", "b", "c"}));
    CHECK(rep.insertions == 1);
    CHECK(rep.errors() == 1);

    // ties prefer substitution: one word vs a different word
    rep = wer(make_transcript({"x"}), make_transcript({"y"}));
    CHECK(rep.substitutions == 1);
    CHECK(rep.deletions == 0);
    CHECK(rep.insertions == 0);
}

TEST_CASE("wer totals match the recursive oracle on random instances") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 300; ++trial) {
        auto h = random_words(rng, 6);
        auto r = random_words(rng, 6);
        if (r.empty()) r.push_back("red");
        auto rep = wer(make_transcript(h), make_transcript(r));
        CHECK(rep.errors() == lev_oracle(h, r));
        CHECK(rep.substitutions + rep.deletions >= 0);
        // S/D/I account exactly for both lengths
        CHECK(rep.ref_words == static_cast<long>(r.size()));
        CHECK(static_cast<long>(h.size()) - static_cast<long>(r.size()) ==
              rep.insertions - rep.deletions);
    }
}

TEST_CASE("wer rejects an empty reference") {
    CHECK_THROWS_AS(wer(make_transcript({"a"}), make_transcript({})), std::invalid_argument);
}

TEST_CASE("best_permutation_wer picks the assignment minimizing total errors") {
    std::vector<Transcript> hyps = {make_transcript({"x", "y"}, "h0"),
                                    make_transcript({"a", "b"}, "h1")};
    std::vector<Transcript> refs = {make_transcript({"a", "b"}, "r0"),
                                    make_transcript({"x", "y"}, "r1")};
    auto rep = best_permutation_wer(hyps, refs);
    CHECK(rep.errors() == 0);
    REQUIRE(rep.permutation.size() == 2);
    CHECK(rep.permutation[0] == 1);
    CHECK(rep.permutation[1] == 0);
}

TEST_CASE("best_permutation_wer matches exhaustive enumeration") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 150; ++trial) {
        std::vector<std::vector<std::string>> hw(2), rw(2);
        for (auto& v : hw) v = random_words(rng, 4);
        for (auto& v : rw) v = random_words(rng, 4);
        if (rw[0].empty() && rw[1].empty()) rw[0].push_back("gold");

        std::vector<Transcript> hyps, refs;
        for (const auto& v : hw) hyps.push_back(make_transcript(v));
        for (const auto& v : rw) refs.push_back(make_transcript(v));

        // oracle: both assignments, empty-reference pairs cost all insertions
        auto cost = [&](int a, int b) {
            auto pair_cost = [&](const std::vector<std::string>& h,
                                 const std::vector<std::string>& r) -> long {
                if (r.empty()) return static_cast<long>(h.size());
                return lev_oracle(h, r);
            };
            return pair_cost(hw[0], rw[a]) + pair_cost(hw[1], rw[b]);
        };
        const long expect = std::min(cost(0, 1), cost(1, 0));
        CHECK(best_permutation_wer(hyps, refs).errors() == expect);
    }
}

TEST_CASE("best_permutation_wer pads unequal stream counts") {
    std::vector<Transcript> hyps = {make_transcript({"a", "b"}, "h0"),
                                    make_transcript({"z"}, "h1")};
    std::vector<Transcript> refs = {make_transcript({"a", "b"}, "r0")};
    // the spare hypothesis stream costs its words as insertions
    CHECK(best_permutation_wer(hyps, refs).errors() == 1);

    std::vector<Transcript> hyps2 = {make_transcript({"a", "b"}, "h0")};
    std::vector<Transcript> refs2 = {make_transcript({"a", "b"}, "r0"),
                                     make_transcript({"q", "w"}, "r1")};
    // the unpaired reference stream is fully deleted
    CHECK(best_permutation_wer(hyps2, refs2).errors() == 2);
}

TEST_CASE("speaker_agnostic_wer equals plain wer for single streams") {
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 50; ++trial) {
        auto h = random_words(rng, 5);
        auto r = random_words(rng, 5);
        if (r.empty()) r.push_back("blue");
        CHECK(speaker_agnostic_wer({make_transcript(h)}, {make_transcript(r)}).errors() ==
              lev_oracle(h, r));
    }
}

TEST_CASE("speaker_agnostic_wer matches the exhaustive lattice oracle") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 120; ++trial) {
        std::vector<std::vector<std::string>> hw(2), rw(2);
        for (auto& v : hw) v = random_words(rng, 4);
        for (auto& v : rw) v = random_words(rng, 4);
        if (rw[0].empty() && rw[1].empty()) rw[0].push_back("red");

        std::vector<Transcript> hyps, refs;
        for (const auto& v : hw) hyps.push_back(make_transcript(v));
        for (const auto& v : rw) refs.push_back(make_transcript(v));

        auto rep = speaker_agnostic_wer(hyps, refs);
        CHECK(rep.errors() == agnostic_oracle(hw, rw));
        // cross-stream freedom can only help relative to fixed pairing
        CHECK(rep.errors() <= best_permutation_wer(hyps, refs).errors());
    }
}

TEST_CASE("speaker_agnostic_wer can split one reference across hypothesis streams") {
    // a single reference read alternately into two hypothesis streams aligns
    // with zero errors under the agnostic metric but not under pairing
    std::vector<Transcript> hyps = {make_transcript({"one", "three"}, "h0"),
                                    make_transcript({"two", "four"}, "h1")};
    std::vector<Transcript> refs = {make_transcript({"one", "two", "three", "four"}, "r0")};
    CHECK(speaker_agnostic_wer(hyps, refs).errors() == 0);
    CHECK(best_permutation_wer(hyps, refs).errors() > 0);
}

TEST_CASE("speaker_agnostic_wer guards its state space") {
    std::vector<Transcript> five(5, make_transcript({"a"}));
    std::vector<Transcript> one = {make_transcript({"a"})};
    CHECK_THROWS_AS(speaker_agnostic_wer(five, one), std::runtime_error);
    CHECK_THROWS_AS(speaker_agnostic_wer(one, five), std::runtime_error);

    std::vector<std::string> lots(200, "w");
    std::vector<Transcript> big = {make_transcript(lots), make_transcript(lots)};
    CHECK_THROWS_AS(speaker_agnostic_wer(big, big, 1000), std::runtime_error);
}

TEST_CASE("utterance_group_segment separates groups across a long silence") {
    Transcript a = make_transcript({"hello", "world"}, "spkA");   // ends at 0.9
    Transcript b;
    b.stream_id = "spkB";
    b.tokens = {{"later", 5.0, 5.4}, {"words", 5.5, 5.9}};
    // exactly one boundary between the groups, inside the silent stretch
    auto cuts = utterance_group_segment({a, b}, 2.0);
    REQUIRE(cuts.size() == 1);
    CHECK(cuts[0] >= 0.9);
    CHECK(cuts[0] <= 5.0);
}

TEST_CASE("utterance_group_segment cuts unspanned utterance ends") {
    Transcript a;
    a.stream_id = "spkA";
    a.tokens = {{"first", 0.0, 1.0}};
    Transcript b;
    b.stream_id = "spkB";
    b.tokens = {{"second", 1.2, 2.2}};
    // gap 0.2 s is below the silence rule, but A ends with nothing spanning it
    auto cuts = utterance_group_segment({a, b}, 10.0);
    REQUIRE(cuts.size() == 1);
    CHECK(cuts[0] == doctest::Approx(1.0));
}

TEST_CASE("utterance_group_segment keeps overlapped boundaries intact") {
    Transcript a;
    a.stream_id = "spkA";
    a.tokens = {{"long", 0.0, 4.0}};
    Transcript b;
    b.stream_id = "spkB";
    b.tokens = {{"inside", 1.0, 2.0}};
    // B ends inside A: no cut anywhere
    CHECK(utterance_group_segment({a, b}, 10.0).empty());
}

TEST_CASE("transcript file round trip with comments") {
    const char* path = "test_scoring_transcripts.txt";
    {
        std::vector<Transcript> ts = {make_transcript({"alpha", "beta"}, "s0"),
                                      make_transcript({"gamma"}, "s1")};
        write_transcripts(path, ts);
        FILE* f = std::fopen(path, "a");
        std::fputs("# trailing comment\n", f);
        std::fclose(f);
    }
    auto back = read_transcripts(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].stream_id == "s0");
    CHECK(back[0].tokens.size() == 2);
    CHECK(back[0].tokens[1].word == "beta");
    CHECK(back[1].tokens[0].start_s == doctest::Approx(0.0));
    CHECK(back[0].has_times());
    std::remove(path);
}

TEST_CASE("format_report includes every field") {
    WERReport rep;
    rep.substitutions = 1;
    rep.deletions = 2;
    rep.insertions = 3;
    rep.ref_words = 12;
    auto s = format_report(rep);
    CHECK(s.find("sub=1") != std::string::npos);
    CHECK(s.find("del=2") != std::string::npos);
    CHECK(s.find("ins=3") != std::string::npos);
    CHECK(s.find("wer=0.5") != std::string::npos);
}
