#include "cssep/ssl_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <random>

namespace cssep {

void EncoderConfig::check() const {
    if (model_dim % n_heads != 0)
        throw std::invalid_argument("EncoderConfig: model_dim must be divisible by n_heads");
    if (frame_shift_ms != 20 && frame_shift_ms != 30 && frame_shift_ms != 40)
        throw std::invalid_argument("EncoderConfig: frame_shift_ms must be 20, 30 or 40");
    if (n_layers < 1 || vocab_k < 2) throw std::invalid_argument("EncoderConfig: bad sizes");
}

EncoderConfig encoder_preset(const std::string& name, double dim_scale) {
    EncoderConfig c;
    if (name == "Small") {
        c.n_layers = 12; c.n_heads = 12; c.model_dim = 384; c.ff_dim = 1536;
    } else if (name == "Base") {
        c.n_layers = 12; c.n_heads = 12; c.model_dim = 768; c.ff_dim = 3072;
    } else if (name == "Large") {
        c.n_layers = 24; c.n_heads = 16; c.model_dim = 1024; c.ff_dim = 4096;
    } else {
        throw std::invalid_argument("unknown encoder preset: " + name);
    }
    if (dim_scale != 1.0) {
        auto scaled = [&](int v, int multiple) {
            int s = static_cast<int>(std::lround(v * dim_scale));
            s = std::max(multiple, (s + multiple - 1) / multiple * multiple);
            return s;
        };
        c.model_dim = scaled(c.model_dim, c.n_heads);
        c.ff_dim = scaled(c.ff_dim, 1);
    }
    return c;
}

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

RealMatrix mel_filterbank(int n_mel, int n_fft_bins, int sample_rate, int fft_size) {
    RealMatrix fb = RealMatrix::Zero(n_fft_bins, n_mel);
    const double mel_lo = hz_to_mel(0.0), mel_hi = hz_to_mel(sample_rate / 2.0);
    std::vector<double> edges(n_mel + 2);
    for (int m = 0; m < n_mel + 2; ++m)
        edges[m] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * m / (n_mel + 1));
    for (int b = 0; b < n_fft_bins; ++b) {
        const double hz = static_cast<double>(b) * sample_rate / fft_size;
        for (int m = 0; m < n_mel; ++m) {
            if (hz >= edges[m] && hz <= edges[m + 1])
                fb(b, m) = (hz - edges[m]) / std::max(1e-9, edges[m + 1] - edges[m]);
            else if (hz > edges[m + 1] && hz <= edges[m + 2])
                fb(b, m) = (edges[m + 2] - hz) / std::max(1e-9, edges[m + 2] - edges[m + 1]);
        }
    }
    return fb;
}

}  // namespace

RealMatrix base_features(const AudioBuffer& audio, int frame_shift_ms, int n_mel) {
    validate(audio);
    const int sr = audio.sample_rate;
    const int hop = sr * frame_shift_ms / 1000;
    const int win = sr * 25 / 1000;
    int fs = 1;
    while (fs < win) fs <<= 1;

    const std::size_t len = audio.samples.size();
    const std::size_t n_frames = std::max<std::size_t>(1, (len + hop - 1) / hop);
    const int n_bins = fs / 2 + 1;
    const RealMatrix fb = mel_filterbank(n_mel, n_bins, sr, fs);
    const std::vector<double> w = periodic_hann(win);

    RealMatrix out(static_cast<Eigen::Index>(n_frames), n_mel);
    std::vector<double> buf(fs);
    for (std::size_t f = 0; f < n_frames; ++f) {
        std::fill(buf.begin(), buf.end(), 0.0);
        const std::size_t start = f * hop;
        for (int i = 0; i < win; ++i) {
            std::size_t idx = start + i;
            if (idx < len) buf[i] = audio.samples[idx] * w[i];
        }
        auto bins = rdft(buf);
        Eigen::RowVectorXd power(n_bins);
        for (int b = 0; b < n_bins; ++b) power(b) = std::norm(bins[b]);
        out.row(static_cast<Eigen::Index>(f)) =
            ((power * fb).array() + 1e-10).log().matrix();
    }
    return out;
}

void KMeans::fit(const RealMatrix& points, int k, int iters, uint64_t seed) {
    const Eigen::Index n = points.rows();
    if (n == 0) throw std::invalid_argument("KMeans::fit: empty features");
    if (k > n) throw std::invalid_argument("KMeans::fit: k exceeds number of points");
    std::mt19937_64 rng(seed);

    // k-means++ seeding
    centroids.resize(k, points.cols());
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    centroids.row(0) = points.row(pick(rng));
    Eigen::VectorXd d2 = (points.rowwise() - centroids.row(0)).rowwise().squaredNorm();
    for (int c = 1; c < k; ++c) {
        double total = d2.sum();
        Eigen::Index chosen = 0;
        if (total > 0.0) {
            double r = std::uniform_real_distribution<double>(0.0, total)(rng);
            double acc = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                acc += d2(i);
                if (acc >= r) { chosen = i; break; }
            }
        } else {
            chosen = pick(rng);
        }
        centroids.row(c) = points.row(chosen);
        d2 = d2.cwiseMin((points.rowwise() - centroids.row(c)).rowwise().squaredNorm());
    }

    std::vector<int> assign(n, -1);
    for (int it = 0; it < iters; ++it) {
        bool changed = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            int best = 0;
            double bd = (points.row(i) - centroids.row(0)).squaredNorm();
            for (int c = 1; c < k; ++c) {
                double d = (points.row(i) - centroids.row(c)).squaredNorm();
                if (d < bd) { bd = d; best = c; }
            }
            if (assign[i] != best) { assign[i] = best; changed = true; }
        }
        if (!changed && it > 0) break;
        RealMatrix sums = RealMatrix::Zero(k, points.cols());
        std::vector<long> counts(k, 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.row(assign[i]) += points.row(i);
            ++counts[assign[i]];
        }
        for (int c = 0; c < k; ++c)
            if (counts[c] > 0) centroids.row(c) = sums.row(c) / counts[c];
    }
}

std::vector<int> KMeans::predict(const RealMatrix& points) const {
    std::vector<int> labels(points.rows());
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        int best = 0;
        double bd = (points.row(i) - centroids.row(0)).squaredNorm();
        for (Eigen::Index c = 1; c < centroids.rows(); ++c) {
            double d = (points.row(i) - centroids.row(c)).squaredNorm();
            if (d < bd) { bd = d; best = static_cast<int>(c); }
        }
        labels[i] = best;
    }
    return labels;
}

double KMeans::distortion(const RealMatrix& points) const {
    auto labels = predict(points);
    double d = 0.0;
    for (Eigen::Index i = 0; i < points.rows(); ++i)
        d += (points.row(i) - centroids.row(labels[i])).squaredNorm();
    return d;
}

uint64_t KMeans::hash() const {
    uint64_t h = 1469598103934665603ull;
    for (Eigen::Index i = 0; i < centroids.size(); ++i) {
        uint64_t bits;
        double v = centroids.data()[i];
        std::memcpy(&bits, &v, sizeof(bits));
        h = (h ^ bits) * 1099511628211ull;
    }
    return h;
}

std::vector<int> kmeans_tokenize(const RealMatrix& features, int k, int iters, uint64_t seed) {
    KMeans km;
    km.fit(features, k, iters, seed);
    return km.predict(features);
}

std::vector<char> mask_spans(int n_frames, double mask_prob, int span_len, uint64_t seed) {
    if (!(mask_prob > 0.0 && mask_prob < 1.0) || span_len < 1 || n_frames < 1)
        throw std::invalid_argument("mask_spans: bad arguments");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<char> mask(n_frames, 0);
    for (int attempt = 0; attempt < 1000; ++attempt) {
        std::fill(mask.begin(), mask.end(), 0);
        for (int t = 0; t < n_frames; ++t)
            if (u(rng) < mask_prob)
                for (int s = t; s < std::min(n_frames, t + span_len); ++s) mask[s] = 1;
        if (std::any_of(mask.begin(), mask.end(), [](char c) { return c; })) return mask;
    }
    // mask_prob -> 0 limit: force a single span
    std::uniform_int_distribution<int> pick(0, std::max(0, n_frames - span_len));
    int t = pick(rng);
    for (int s = t; s < std::min(n_frames, t + span_len); ++s) mask[s] = 1;
    return mask;
}

AudioBuffer utterance_mix(const AudioBuffer& primary, const AudioBuffer& interferer,
                          double mix_ratio_db, uint64_t seed) {
    validate(primary);
    validate(interferer);
    std::mt19937_64 rng(seed);

    const std::size_t np = primary.samples.size();
    const std::size_t max_len = np / 2;  // interferer capped at half the primary
    std::vector<double> intf;
    intf.reserve(max_len);
    if (!interferer.samples.empty())
        for (std::size_t i = 0; i < std::min(max_len, interferer.samples.size()); ++i)
            intf.push_back(interferer.samples[i]);

    AudioBuffer out = primary;
    if (intf.empty() || energy(intf) <= 0.0) return out;

    std::uniform_int_distribution<std::size_t> place(0, np - intf.size());
    const std::size_t start = place(rng);

    double pe = 0.0;
    for (std::size_t i = start; i < start + intf.size(); ++i)
        pe += primary.samples[i] * primary.samples[i];
    double ie = energy(intf);
    if (pe <= 0.0) pe = energy(primary.samples) * intf.size() / np;
    const double gain = std::sqrt(pe / (ie * std::pow(10.0, mix_ratio_db / 10.0)));
    for (std::size_t i = 0; i < intf.size(); ++i) out.samples[start + i] += gain * intf[i];
    return out;
}

int relative_position_bucket(int relative, int n_buckets, int max_distance) {
    // bidirectional: first half for negative offsets, second for positive
    int bucket = 0;
    int half = n_buckets / 2;
    if (relative > 0) bucket = half;
    int n = std::abs(relative);
    int exact = half / 2;
    if (n < exact) return bucket + n;
    double v = exact + std::log(static_cast<double>(n) / exact) /
                           std::log(static_cast<double>(max_distance) / exact) * (half - exact);
    return bucket + std::min(half - 1, static_cast<int>(v));
}

namespace {

ad::Var init_param(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double scl) {
    std::normal_distribution<double> g(0.0, scl);
    ad::Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
    return ad::param(std::move(m));
}

ad::Var zeros_param(Eigen::Index rows, Eigen::Index cols) {
    return ad::param(ad::Mat::Zero(rows, cols));
}

ad::Var ones_param(Eigen::Index rows, Eigen::Index cols) {
    return ad::param(ad::Mat::Ones(rows, cols));
}

}  // namespace

SslEncoder::SslEncoder(const EncoderConfig& config, uint64_t seed) : cfg_(config) {
    cfg_.check();
    std::mt19937_64 rng(seed);
    const int d = cfg_.model_dim;
    const double s = 0.02 * std::sqrt(64.0 / d);
    in_proj_ = init_param(rng, cfg_.n_mel, d, 0.1);
    in_bias_ = zeros_param(1, d);
    mask_emb_ = init_param(rng, 1, d, 0.1);
    blocks_.resize(cfg_.n_layers);
    for (auto& b : blocks_) {
        b.ln1_g = ones_param(1, d); b.ln1_b = zeros_param(1, d);
        b.wq = init_param(rng, d, d, s); b.bq = zeros_param(1, d);
        b.wk = init_param(rng, d, d, s); b.bk = zeros_param(1, d);
        b.wv = init_param(rng, d, d, s); b.bv = zeros_param(1, d);
        b.wo = init_param(rng, d, d, s); b.bo = zeros_param(1, d);
        b.rel_bias = zeros_param(1, cfg_.rel_bias_buckets);
        b.ln2_g = ones_param(1, d); b.ln2_b = zeros_param(1, d);
        b.w1 = init_param(rng, d, cfg_.ff_dim, s); b.b1 = zeros_param(1, cfg_.ff_dim);
        b.w2 = init_param(rng, cfg_.ff_dim, d, s); b.b2 = zeros_param(1, d);
    }
    head_w_ = init_param(rng, d, cfg_.vocab_k, s);
    head_b_ = zeros_param(1, cfg_.vocab_k);
}

std::vector<ad::Var> SslEncoder::forward(const ad::Var& features, int use_layers,
                                         const std::vector<char>* mask) const {
    if (use_layers < 1 || use_layers > cfg_.n_layers)
        throw std::invalid_argument("SslEncoder::forward: use_layers out of range");
    const Eigen::Index T = features->val.rows();
    const int d = cfg_.model_dim;
    const int heads = cfg_.n_heads;
    const int dh = d / heads;

    Eigen::MatrixXi buckets(T, T);
    for (Eigen::Index i = 0; i < T; ++i)
        for (Eigen::Index j = 0; j < T; ++j)
            buckets(i, j) = relative_position_bucket(static_cast<int>(j - i),
                                                     cfg_.rel_bias_buckets);

    ad::Var x = ad::add_rowvec(ad::matmul(features, in_proj_), in_bias_);
    if (mask) x = ad::replace_rows(x, *mask, mask_emb_);

    std::vector<ad::Var> outputs;
    for (int l = 0; l < use_layers; ++l) {
        const Block& b = blocks_[l];
        // pre-norm self-attention with bucketed relative position bias
        ad::Var h = ad::layer_norm(x, b.ln1_g, b.ln1_b);
        ad::Var q = ad::add_rowvec(ad::matmul(h, b.wq), b.bq);
        ad::Var k = ad::add_rowvec(ad::matmul(h, b.wk), b.bk);
        ad::Var v = ad::add_rowvec(ad::matmul(h, b.wv), b.bv);
        ad::Var bias = ad::gather_bias(b.rel_bias, buckets);
        ad::Var ctx;
        for (int hd = 0; hd < heads; ++hd) {
            ad::Var qh = ad::slice_cols(q, hd * dh, dh);
            ad::Var kh = ad::slice_cols(k, hd * dh, dh);
            ad::Var vh = ad::slice_cols(v, hd * dh, dh);
            ad::Var scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), 1.0 / std::sqrt(dh));
            scores = ad::add(scores, bias);
            ad::Var attn = ad::row_softmax(scores);
            ad::Var o = ad::matmul(attn, vh);
            ctx = hd == 0 ? o : ad::concat_cols(ctx, o);
        }
        x = ad::add(x, ad::add_rowvec(ad::matmul(ctx, b.wo), b.bo));
        // feed-forward
        ad::Var f = ad::layer_norm(x, b.ln2_g, b.ln2_b);
        f = ad::gelu(ad::add_rowvec(ad::matmul(f, b.w1), b.b1));
        f = ad::add_rowvec(ad::matmul(f, b.w2), b.b2);
        x = ad::add(x, f);
        outputs.push_back(x);
    }
    return outputs;
}

ad::Var SslEncoder::msp_logits(const ad::Var& features, const std::vector<char>& mask) const {
    auto outs = forward(features, cfg_.n_layers, &mask);
    return ad::add_rowvec(ad::matmul(outs.back(), head_w_), head_b_);
}

EmbeddingStack SslEncoder::encode_layers(const AudioBuffer& audio, int use_layers) const {
    RealMatrix feats = base_features(audio, cfg_.frame_shift_ms, cfg_.n_mel);
    auto outs = forward(ad::constant(feats), use_layers);
    EmbeddingStack stack;
    stack.frame_shift_ms = cfg_.frame_shift_ms;
    for (auto& o : outs) stack.layers.push_back(o->val);
    return stack;
}

std::vector<std::pair<std::string, ad::Var>> SslEncoder::named_params() const {
    std::vector<std::pair<std::string, ad::Var>> out;
    out.emplace_back("enc.in_proj", in_proj_);
    out.emplace_back("enc.in_bias", in_bias_);
    out.emplace_back("enc.mask_emb", mask_emb_);
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const auto& b = blocks_[l];
        std::string p = "enc.block" + std::to_string(l) + ".";
        out.emplace_back(p + "ln1_g", b.ln1_g); out.emplace_back(p + "ln1_b", b.ln1_b);
        out.emplace_back(p + "wq", b.wq); out.emplace_back(p + "bq", b.bq);
        out.emplace_back(p + "wk", b.wk); out.emplace_back(p + "bk", b.bk);
        out.emplace_back(p + "wv", b.wv); out.emplace_back(p + "bv", b.bv);
        out.emplace_back(p + "wo", b.wo); out.emplace_back(p + "bo", b.bo);
        out.emplace_back(p + "rel_bias", b.rel_bias);
        out.emplace_back(p + "ln2_g", b.ln2_g); out.emplace_back(p + "ln2_b", b.ln2_b);
        out.emplace_back(p + "w1", b.w1); out.emplace_back(p + "b1", b.b1);
        out.emplace_back(p + "w2", b.w2); out.emplace_back(p + "b2", b.b2);
    }
    out.emplace_back("enc.head_w", head_w_);
    out.emplace_back("enc.head_b", head_b_);
    return out;
}

void SslEncoder::set_trainable(bool trainable) {
    for (auto& [name, p] : named_params()) p->requires_grad = trainable;
}

bool SslEncoder::trainable() const { return in_proj_->requires_grad; }

PretrainResult msp_pretrain(SslEncoder& encoder, const std::vector<PretrainItem>& corpus,
                            const PretrainConfig& hyper) {
    if (corpus.empty()) throw std::invalid_argument("msp_pretrain: empty corpus");
    std::mt19937_64 rng(hyper.seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> pick(0, corpus.size() - 1);

    std::vector<ad::Var> params;
    for (auto& [name, p] : encoder.named_params()) params.push_back(p);
    ad::AdamW opt(params, hyper.lr);

    PretrainResult result;
    for (int step = 0; step < hyper.steps; ++step) {
        const PretrainItem& item = corpus[pick(rng)];
        AudioBuffer input = item.audio;
        if (u(rng) < hyper.mix_prob) {
            const PretrainItem& other = corpus[pick(rng)];
            input = utterance_mix(input, other.audio, hyper.mix_ratio_db, rng());
        }
        RealMatrix feats = base_features(input, encoder.config().frame_shift_ms,
                                         encoder.config().n_mel);
        const int T = static_cast<int>(feats.rows());
        std::vector<int> labels = item.labels;
        labels.resize(T, labels.empty() ? 0 : labels.back());
        auto mask = mask_spans(T, hyper.mask_prob, hyper.span_len, rng());

        ad::Var logits = encoder.msp_logits(ad::constant(feats), mask);
        ad::Var loss = ad::masked_cross_entropy(logits, labels, mask);
        if (!std::isfinite(loss->val(0, 0)))
            throw std::runtime_error("msp_pretrain: loss diverged (NaN) at step " +
                                     std::to_string(step));

        long correct = 0, total = 0;
        for (int t = 0; t < T; ++t) {
            if (!mask[t]) continue;
            Eigen::Index best;
            logits->val.row(t).maxCoeff(&best);
            correct += best == labels[t] ? 1 : 0;
            ++total;
        }
        result.loss_history.push_back(loss->val(0, 0));
        result.masked_accuracy_history.push_back(static_cast<double>(correct) / total);

        ad::backward(loss);
        opt.step();
        ++encoder.train_step;
    }
    return result;
}

Eigen::RowVectorXd LayerWeights::softmax() const {
    Eigen::RowVectorXd e = (logits.array() - logits.maxCoeff()).exp();
    return e / e.sum();
}

RealMatrix fuse_embedding(const EmbeddingStack& stack, const LayerWeights& weights) {
    if (stack.layers.empty()) throw std::invalid_argument("fuse_embedding: empty stack");
    if (weights.logits.size() != static_cast<Eigen::Index>(stack.layers.size()))
        throw std::invalid_argument("fuse_embedding: weight/layer count mismatch");
    Eigen::RowVectorXd w = weights.softmax();
    RealMatrix out = RealMatrix::Zero(stack.layers[0].rows(), stack.layers[0].cols());
    for (std::size_t l = 0; l < stack.layers.size(); ++l) out += w(l) * stack.layers[l];
    return out;
}

RealMatrix align_frame_rate(const RealMatrix& embedding, int f_wl_ms, int f_ss_ms,
                            Eigen::Index target_frames) {
    if (f_wl_ms % f_ss_ms != 0)
        throw std::invalid_argument("align_frame_rate: f_wl must be divisible by f_ss");
    const int times = f_wl_ms / f_ss_ms;
    const Eigen::Index rows =
        target_frames >= 0 ? target_frames : embedding.rows() * times;
    RealMatrix out(rows, embedding.cols());
    for (Eigen::Index r = 0; r < rows; ++r)
        out.row(r) = embedding.row(std::min(r / times, embedding.rows() - 1));
    return out;
}

}  // namespace cssep
