#include "cssep/css.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

namespace cssep {

ChunkPlan plan_chunks(long n_samples, int sample_rate, double t_h, double t_c, double t_f) {
    if (n_samples <= 0) throw std::invalid_argument("plan_chunks: empty audio");
    if (t_c <= 0.0) throw std::invalid_argument("plan_chunks: t_c must be positive");

    ChunkPlan plan;
    plan.t_h = t_h;
    plan.t_c = t_c;
    plan.t_f = t_f;
    plan.sample_rate = sample_rate;
    plan.n_samples = n_samples;

    const long hist = std::lround(t_h * sample_rate);
    const long cur = std::lround(t_c * sample_rate);
    const long fut = std::lround(t_f * sample_rate);

    for (long start = 0; start < n_samples; start += cur) {
        ChunkPlan::Chunk c;
        c.cur_start = start;
        c.cur_end = std::min(n_samples, start + cur);
        c.hist_start = start - hist;
        // full span is kept even for a short tail so every chunk sees the
        // same t_h + t_c + t_f extent
        c.fut_end = start + cur + fut;
        plan.chunks.push_back(c);
    }
    return plan;
}

std::vector<double> extract_chunk(const AudioBuffer& audio, const ChunkPlan::Chunk& chunk) {
    std::vector<double> out(chunk.fut_end - chunk.hist_start, 0.0);
    const long n = static_cast<long>(audio.samples.size());
    for (long i = chunk.hist_start; i < chunk.fut_end; ++i)
        if (i >= 0 && i < n) out[i - chunk.hist_start] = audio.samples[i];
    return out;
}

namespace {

std::vector<std::vector<int>> all_permutations(int n) {
    std::vector<int> p(n);
    std::iota(p.begin(), p.end(), 0);
    std::vector<std::vector<int>> out;
    do out.push_back(p); while (std::next_permutation(p.begin(), p.end()));
    return out;
}

}  // namespace

std::vector<int> align_permutation(const std::vector<std::vector<double>>& prev_overlap,
                                   const std::vector<std::vector<double>>& cur_overlap,
                                   int sample_rate, bool* warned) {
    const int n = static_cast<int>(prev_overlap.size());
    if (static_cast<int>(cur_overlap.size()) != n)
        throw std::invalid_argument("align_permutation: stream count mismatch");
    std::vector<int> identity(n);
    std::iota(identity.begin(), identity.end(), 0);
    if (warned) *warned = false;
    if (n == 0 || prev_overlap[0].empty() || cur_overlap[0].empty()) {
        if (warned) *warned = true;
        return identity;
    }

    // magnitude spectrograms of the shared region
    auto mags = [&](const std::vector<std::vector<double>>& seg) {
        std::vector<RealMatrix> m;
        for (const auto& s : seg) {
            int win = std::min<int>(512, 1 << static_cast<int>(std::floor(
                                             std::log2(std::max<std::size_t>(2, s.size())))));
            int hop = std::max(1, win / 4);
            m.push_back(stft(AudioBuffer(s, sample_rate), win, hop).magnitude());
        }
        return m;
    };
    auto pm = mags(prev_overlap);
    auto cm = mags(cur_overlap);

    double best_cost = std::numeric_limits<double>::infinity();
    std::vector<int> best = identity;
    for (const auto& perm : all_permutations(n)) {
        double cost = 0.0;
        for (int i = 0; i < n; ++i) cost += (pm[i] - cm[perm[i]]).squaredNorm();
        // strict improvement required so ties resolve toward identity
        if (cost < best_cost - 1e-12) {
            best_cost = cost;
            best = perm;
        }
    }
    return best;
}

std::vector<AudioBuffer> stitch(const std::vector<std::vector<AudioBuffer>>& chunk_outputs,
                                const ChunkPlan& plan, StitchState* state) {
    if (chunk_outputs.size() != plan.chunks.size())
        throw std::invalid_argument("stitch: chunk count mismatch with plan");
    if (chunk_outputs.empty()) throw std::invalid_argument("stitch: no chunks");
    const int n_streams = static_cast<int>(chunk_outputs[0].size());
    const int sr = plan.sample_rate;

    StitchState local;
    StitchState& st = state ? *state : local;
    st.running_permutation.resize(n_streams);
    std::iota(st.running_permutation.begin(), st.running_permutation.end(), 0);

    std::vector<AudioBuffer> streams(n_streams);
    for (auto& s : streams) {
        s.sample_rate = sr;
        s.samples.assign(plan.n_samples, 0.0);
    }

    for (std::size_t k = 0; k < plan.chunks.size(); ++k) {
        const auto& chunk = plan.chunks[k];
        const auto& outs = chunk_outputs[k];
        if (static_cast<int>(outs.size()) != n_streams)
            throw std::invalid_argument("stitch: missing chunk outputs");

        if (k > 0) {
            const auto& prev = plan.chunks[k - 1];
            // shared audio region: current chunk's history inside prev span
            const long ov_start = chunk.hist_start;
            const long ov_end = std::min(prev.fut_end, chunk.fut_end);
            const long len = std::max<long>(0, ov_end - ov_start);
            std::vector<std::vector<double>> prev_seg(n_streams), cur_seg(n_streams);
            for (int i = 0; i < n_streams; ++i) {
                const auto& ps = chunk_outputs[k - 1][i].samples;
                const auto& cs = outs[i].samples;
                for (long t = 0; t < len; ++t) {
                    long pi = ov_start - prev.hist_start + t;
                    long ci = t;
                    if (pi >= 0 && pi < static_cast<long>(ps.size()))
                        prev_seg[i].push_back(ps[pi]);
                    if (ci < static_cast<long>(cs.size())) cur_seg[i].push_back(cs[ci]);
                }
            }
            // previous streams must be read through the running permutation
            std::vector<std::vector<double>> prev_as_streams(n_streams);
            for (int head = 0; head < n_streams; ++head)
                prev_as_streams[st.running_permutation[head]] = prev_seg[head];

            auto perm = align_permutation(prev_as_streams, cur_seg, sr);
            // head h of this chunk matches stream s where perm[s] == h
            std::vector<int> new_running(n_streams);
            for (int s = 0; s < n_streams; ++s) new_running[perm[s]] = s;
            bool flipped = false;
            for (int i = 0; i < n_streams; ++i)
                if (new_running[i] != st.running_permutation[i]) flipped = true;
            if (flipped) ++st.flips;
            st.running_permutation = new_running;
        }

        const long span_off = chunk.cur_start - chunk.hist_start;
        for (int head = 0; head < n_streams; ++head) {
            const int stream = st.running_permutation[head];
            const auto& src = outs[head].samples;
            for (long t = chunk.cur_start; t < chunk.cur_end; ++t) {
                long si = span_off + (t - chunk.cur_start);
                if (si < static_cast<long>(src.size()))
                    streams[stream].samples[t] = src[si];
            }
        }
    }
    return streams;
}

std::vector<AudioBuffer> merge_single_speaker(const std::vector<AudioBuffer>& streams,
                                              double window_s, double ratio_db,
                                              MergeReport* report) {
    if (streams.size() != 2)
        throw std::invalid_argument("merge_single_speaker: exactly two streams expected");
    if (streams[0].samples.size() != streams[1].samples.size())
        throw std::invalid_argument("merge_single_speaker: length mismatch");
    const int sr = streams[0].sample_rate;
    const long n = static_cast<long>(streams[0].samples.size());
    const long win = std::max<long>(1, std::lround(window_s * sr));
    const long fade = std::lround(0.020 * sr);
    const double thresh = std::pow(10.0, ratio_db / 10.0);

    // per-window decision: -1 keep, otherwise index of the weaker stream
    const long n_win = (n + win - 1) / win;
    std::vector<int> weak(n_win, -1);
    int merged = 0;
    for (long w = 0; w < n_win; ++w) {
        const long a = w * win, b = std::min(n, a + win);
        double e0 = 0.0, e1 = 0.0;
        for (long t = a; t < b; ++t) {
            e0 += streams[0].samples[t] * streams[0].samples[t];
            e1 += streams[1].samples[t] * streams[1].samples[t];
        }
        if (e1 > 0.0 && e0 / e1 >= thresh) weak[w] = 1;
        else if (e0 > 0.0 && e1 / e0 >= thresh) weak[w] = 0;
        else if (e0 > 0.0 && e1 == 0.0) weak[w] = 1;
        else if (e1 > 0.0 && e0 == 0.0) weak[w] = 0;
        if (weak[w] >= 0) ++merged;
    }
    if (report) {
        report->merged_windows = merged;
        report->total_windows = static_cast<int>(n_win);
    }

    // transfer envelope per stream: fraction of that stream moved to the other
    std::vector<std::vector<double>> move(2, std::vector<double>(n, 0.0));
    for (long w = 0; w < n_win; ++w) {
        if (weak[w] < 0) continue;
        const long a = w * win, b = std::min(n, a + win);
        const bool ramp_in = !(w > 0 && weak[w - 1] == weak[w]);
        const bool ramp_out = !(w + 1 < n_win && weak[w + 1] == weak[w]) && b < n;
        for (long t = a; t < b; ++t) {
            double g = 1.0;
            if (ramp_in && a > 0 && t - a < fade)
                g = std::min(g, static_cast<double>(t - a) / fade);
            if (ramp_out && b - 1 - t < fade)
                g = std::min(g, static_cast<double>(b - 1 - t) / std::max<long>(1, fade));
            move[weak[w]][t] = std::max(move[weak[w]][t], g);
        }
    }

    std::vector<AudioBuffer> out = streams;
    for (long t = 0; t < n; ++t) {
        const double m0 = move[0][t], m1 = move[1][t];
        const double s0 = streams[0].samples[t], s1 = streams[1].samples[t];
        out[0].samples[t] = s0 * (1.0 - m0) + s1 * m1;
        out[1].samples[t] = s1 * (1.0 - m1) + s0 * m0;
    }
    return out;
}

std::string CssReport::to_json() const {
    std::ostringstream os;
    os << "{\"chunks\":" << n_chunks << ",\"permutation_flips\":" << permutation_flips
       << ",\"merged_windows\":" << merged_windows << ",\"total_windows\":" << total_windows
       << ",\"wall_time_s\":" << wall_time_s << "}";
    return os.str();
}

std::vector<AudioBuffer> css_run(const Separator& model, const SslEncoder* encoder,
                                 const AudioBuffer& audio, const CssParams& params,
                                 CssReport* report) {
    const auto t0 = std::chrono::steady_clock::now();
    AudioBuffer input = params.apply_agc ? agc(audio) : audio;

    ChunkPlan plan = plan_chunks(static_cast<long>(input.samples.size()), input.sample_rate,
                                 params.t_h, params.t_c, params.t_f);
    std::vector<std::vector<AudioBuffer>> chunk_outputs;
    for (const auto& chunk : plan.chunks) {
        AudioBuffer seg(extract_chunk(input, chunk), input.sample_rate);
        chunk_outputs.push_back(separate_utterance(model, encoder, seg));
    }

    StitchState st;
    auto streams = stitch(chunk_outputs, plan, &st);
    MergeReport mr;
    if (params.apply_merger)
        streams = merge_single_speaker(streams, params.merge_window_s, params.merge_ratio_db, &mr);

    if (report) {
        report->n_chunks = static_cast<int>(plan.chunks.size());
        report->permutation_flips = st.flips;
        report->merged_windows = mr.merged_windows;
        report->total_windows = mr.total_windows;
        report->wall_time_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    return streams;
}

}  // namespace cssep
