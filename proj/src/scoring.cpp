#include "cssep/scoring.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace cssep {

std::vector<std::string> Transcript::words() const {
    std::vector<std::string> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(t.word);
    return out;
}

bool Transcript::has_times() const {
    for (const auto& t : tokens)
        if (t.start_s < 0.0 || t.end_s < 0.0) return false;
    return !tokens.empty();
}

std::string normalize_word(const std::string& w) {
    std::string out;
    for (char c : w)
        if (std::isalnum(static_cast<unsigned char>(c)) || c == '\'')
            out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    return out;
}

Transcript normalize(const Transcript& t) {
    Transcript out;
    out.stream_id = t.stream_id;
    for (const auto& tok : t.tokens) {
        std::string w = normalize_word(tok.word);
        if (!w.empty()) out.tokens.push_back({w, tok.start_s, tok.end_s});
    }
    return out;
}

double WERReport::wer() const {
    if (ref_words == 0) return 0.0;
    return static_cast<double>(errors()) / static_cast<double>(ref_words);
}

WERReport wer(const Transcript& hyp_t, const Transcript& ref_t) {
    const auto hyp = hyp_t.words();
    const auto ref = ref_t.words();
    if (ref.empty()) throw std::invalid_argument("wer: empty reference (WER undefined)");

    const std::size_t H = hyp.size(), R = ref.size();
    std::vector<std::vector<long>> dp(H + 1, std::vector<long>(R + 1));
    for (std::size_t i = 0; i <= H; ++i) dp[i][0] = static_cast<long>(i);
    for (std::size_t j = 0; j <= R; ++j) dp[0][j] = static_cast<long>(j);
    for (std::size_t i = 1; i <= H; ++i)
        for (std::size_t j = 1; j <= R; ++j) {
            long sub = dp[i - 1][j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
            long del = dp[i][j - 1] + 1;  // reference word unmatched
            long ins = dp[i - 1][j] + 1;  // extra hypothesis word
            dp[i][j] = std::min({sub, del, ins});
        }

    // backtrace, ties preferring substitution > deletion > insertion
    WERReport rep;
    rep.ref_words = static_cast<long>(R);
    std::size_t i = H, j = R;
    while (i > 0 || j > 0) {
        if (i > 0 && j > 0 &&
            dp[i][j] == dp[i - 1][j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1)) {
            if (hyp[i - 1] != ref[j - 1]) ++rep.substitutions;
            --i; --j;
        } else if (j > 0 && dp[i][j] == dp[i][j - 1] + 1) {
            ++rep.deletions;
            --j;
        } else {
            ++rep.insertions;
            --i;
        }
    }
    return rep;
}

WERReport best_permutation_wer(const std::vector<Transcript>& hyps,
                               const std::vector<Transcript>& refs) {
    if (refs.empty()) throw std::invalid_argument("best_permutation_wer: no references");
    const std::size_t n = std::max(hyps.size(), refs.size());
    long total_ref = 0;
    for (const auto& r : refs) total_ref += static_cast<long>(r.tokens.size());
    if (total_ref == 0) throw std::invalid_argument("best_permutation_wer: all references empty");

    auto pair_errors = [&](std::size_t h, std::size_t r) -> std::array<long, 3> {
        const Transcript& hyp = h < hyps.size() ? hyps[h] : Transcript{};
        const Transcript& ref = r < refs.size() ? refs[r] : Transcript{};
        if (ref.tokens.empty()) return {0, 0, static_cast<long>(hyp.tokens.size())};
        WERReport rep = wer(hyp, ref);
        return {rep.substitutions, rep.deletions, rep.insertions};
    };

    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    WERReport best;
    long best_err = std::numeric_limits<long>::max();
    do {
        long s = 0, d = 0, ins = 0;
        for (std::size_t h = 0; h < n; ++h) {
            auto e = pair_errors(h, perm[h]);
            s += e[0]; d += e[1]; ins += e[2];
        }
        if (s + d + ins < best_err) {
            best_err = s + d + ins;
            best.substitutions = s;
            best.deletions = d;
            best.insertions = ins;
            best.permutation.assign(perm.begin(), perm.end());
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    best.ref_words = total_ref;
    return best;
}

WERReport speaker_agnostic_wer(const std::vector<Transcript>& hyps,
                               const std::vector<Transcript>& refs, std::size_t max_states) {
    if (hyps.size() > 4 || refs.size() > 4)
        throw std::runtime_error("speaker_agnostic_wer: more than 4 streams per side; "
                                 "segment the recording first");
    long total_ref = 0;
    for (const auto& r : refs) total_ref += static_cast<long>(r.tokens.size());
    if (total_ref == 0) throw std::invalid_argument("speaker_agnostic_wer: all references empty");

    std::vector<std::vector<std::string>> hw, rw;
    for (const auto& h : hyps) hw.push_back(h.words());
    for (const auto& r : refs) rw.push_back(r.words());
    const std::size_t H = hw.size(), R = rw.size();

    std::vector<std::size_t> dims, strides;
    std::size_t total = 1;
    for (const auto& w : hw) dims.push_back(w.size() + 1);
    for (const auto& w : rw) dims.push_back(w.size() + 1);
    strides.resize(dims.size());
    for (std::size_t i = 0; i < dims.size(); ++i) {
        strides[i] = total;
        total *= dims[i];
        if (total > max_states)
            throw std::runtime_error("speaker_agnostic_wer: state space too large; "
                                     "segment the recording first");
    }

    const int INF = std::numeric_limits<int>::max() / 2;
    std::vector<int> cost(total, INF);
    cost[0] = 0;

    std::vector<std::size_t> pos(dims.size());
    for (std::size_t s = 0; s < total; ++s) {
        if (cost[s] >= INF) continue;
        std::size_t rem = s;
        for (std::size_t i = 0; i < dims.size(); ++i) {
            pos[i] = rem % dims[i];
            rem /= dims[i];
        }
        const int c = cost[s];
        // insertion: unmatched hypothesis word
        for (std::size_t h = 0; h < H; ++h)
            if (pos[h] + 1 < dims[h]) {
                std::size_t t = s + strides[h];
                cost[t] = std::min(cost[t], c + 1);
            }
        for (std::size_t r = 0; r < R; ++r) {
            if (pos[H + r] + 1 >= dims[H + r]) continue;
            // deletion: unmatched reference word
            std::size_t td = s + strides[H + r];
            cost[td] = std::min(cost[td], c + 1);
            // match/substitute against any hypothesis stream
            for (std::size_t h = 0; h < H; ++h) {
                if (pos[h] + 1 >= dims[h]) continue;
                int step = hw[h][pos[h]] == rw[r][pos[H + r]] ? 0 : 1;
                std::size_t tm = s + strides[h] + strides[H + r];
                cost[tm] = std::min(cost[tm], c + step);
            }
        }
    }

    WERReport rep;
    rep.ref_words = total_ref;

    // backtrack one optimal alignment for the S/D/I breakdown
    std::size_t s = total - 1;
    while (s != 0) {
        std::size_t rem = s;
        for (std::size_t i = 0; i < dims.size(); ++i) {
            pos[i] = rem % dims[i];
            rem /= dims[i];
        }
        bool moved = false;
        for (std::size_t r = 0; r < R && !moved; ++r) {
            if (pos[H + r] == 0) continue;
            for (std::size_t h = 0; h < H && !moved; ++h) {
                if (pos[h] == 0) continue;
                int step = hw[h][pos[h] - 1] == rw[r][pos[H + r] - 1] ? 0 : 1;
                std::size_t p = s - strides[h] - strides[H + r];
                if (cost[p] + step == cost[s]) {
                    rep.substitutions += step;
                    s = p;
                    moved = true;
                }
            }
        }
        for (std::size_t r = 0; r < R && !moved; ++r) {
            if (pos[H + r] == 0) continue;
            std::size_t p = s - strides[H + r];
            if (cost[p] + 1 == cost[s]) {
                ++rep.deletions;
                s = p;
                moved = true;
            }
        }
        for (std::size_t h = 0; h < H && !moved; ++h) {
            if (pos[h] == 0) continue;
            std::size_t p = s - strides[h];
            if (cost[p] + 1 == cost[s]) {
                ++rep.insertions;
                s = p;
                moved = true;
            }
        }
        if (!moved) throw std::logic_error("speaker_agnostic_wer: backtrack failed");
    }
    return rep;
}

std::vector<double> utterance_group_segment(const std::vector<Transcript>& refs,
                                            double max_silence) {
    if (refs.empty()) throw std::invalid_argument("utterance_group_segment: no transcripts");
    struct Iv { double a, b; };
    std::vector<Iv> utts;
    std::vector<Iv> tokens;
    for (const auto& t : refs) {
        if (!t.has_times())
            throw std::invalid_argument("utterance_group_segment: token times required");
        double a = std::numeric_limits<double>::infinity(), b = -a;
        for (const auto& tok : t.tokens) {
            a = std::min(a, tok.start_s);
            b = std::max(b, tok.end_s);
            tokens.push_back({tok.start_s, tok.end_s});
        }
        utts.push_back({a, b});
    }

    // token-coverage union
    std::sort(tokens.begin(), tokens.end(), [](const Iv& x, const Iv& y) { return x.a < y.a; });
    std::vector<Iv> coverage;
    for (const auto& iv : tokens) {
        if (!coverage.empty() && iv.a <= coverage.back().b + 1e-9)
            coverage.back().b = std::max(coverage.back().b, iv.b);
        else
            coverage.push_back(iv);
    }

    double global_end = 0.0;
    for (const auto& u : utts) global_end = std::max(global_end, u.b);

    std::vector<double> cuts;
    // silence rule
    for (std::size_t i = 0; i + 1 < coverage.size(); ++i)
        if (coverage[i + 1].a - coverage[i].b >= max_silence)
            cuts.push_back(0.5 * (coverage[i].b + coverage[i + 1].a));
    // non-overlapping utterance boundary rule
    for (std::size_t i = 0; i < utts.size(); ++i) {
        const double e = utts[i].b;
        if (e >= global_end - 1e-9) continue;
        bool spanned = false;
        for (std::size_t j = 0; j < utts.size(); ++j)
            if (j != i && utts[j].a < e - 1e-9 && utts[j].b > e + 1e-9) spanned = true;
        if (!spanned) cuts.push_back(e);
    }

    std::sort(cuts.begin(), cuts.end());
    // collapse cuts that do not separate any utterance starts
    std::vector<double> out;
    for (double c : cuts) {
        bool separates = false;
        double prev = out.empty() ? -std::numeric_limits<double>::infinity() : out.back();
        for (const auto& u : utts)
            if (u.a >= prev && u.a < c) { separates = true; break; }
        bool has_later = false;
        for (const auto& u : utts)
            if (u.a >= c) has_later = true;
        if (separates && has_later) out.push_back(c);
    }
    return out;
}

std::vector<Transcript> read_transcripts(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open transcript file: " + path);
    std::map<std::string, Transcript> by_stream;
    std::vector<std::string> order;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::string stream_id, word;
        double start, end;
        if (!(ss >> stream_id >> start >> end >> word))
            throw std::runtime_error("malformed transcript line: " + line);
        if (!by_stream.count(stream_id)) order.push_back(stream_id);
        auto& t = by_stream[stream_id];
        t.stream_id = stream_id;
        t.tokens.push_back({word, start, end});
    }
    std::vector<Transcript> out;
    for (const auto& id : order) out.push_back(by_stream[id]);
    return out;
}

void write_transcripts(const std::string& path, const std::vector<Transcript>& transcripts) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write transcript file: " + path);
    for (const auto& t : transcripts)
        for (const auto& tok : t.tokens)
            out << t.stream_id << ' ' << tok.start_s << ' ' << tok.end_s << ' ' << tok.word
                << '\n';
}

std::string format_report(const WERReport& report) {
    std::ostringstream os;
    os << "ref_words=" << report.ref_words << " sub=" << report.substitutions
       << " del=" << report.deletions << " ins=" << report.insertions
       << " errors=" << report.errors() << " wer=" << report.wer();
    if (!report.permutation.empty()) {
        os << " perm=";
        for (std::size_t i = 0; i < report.permutation.size(); ++i)
            os << (i ? "," : "") << report.permutation[i];
    }
    return os.str();
}

}  // namespace cssep
