#include "cssep/separator.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace cssep {

void SeparatorConfig::check() const {
    if (model_dim % n_heads != 0)
        throw std::invalid_argument("SeparatorConfig: model_dim must be divisible by n_heads");
    if (n_outputs < 1 || n_layers < 1 || conv_kernel % 2 == 0)
        throw std::invalid_argument("SeparatorConfig: bad sizes");
    if ((embedding_dim > 0) != (ssl_layers > 0))
        throw std::invalid_argument("SeparatorConfig: embedding_dim and ssl_layers must be set together");
}

SeparatorConfig separator_preset(const std::string& name, double dim_scale) {
    SeparatorConfig c;
    if (name == "SS-9.5") { c.n_layers = 8;  c.n_heads = 4; c.model_dim = 256; c.ff_dim = 1024; }
    else if (name == "SS-26") { c.n_layers = 16; c.n_heads = 4; c.model_dim = 256; c.ff_dim = 1024; }
    else if (name == "SS-59") { c.n_layers = 18; c.n_heads = 8; c.model_dim = 512; c.ff_dim = 1024; }
    else if (name == "SS-79") { c.n_layers = 24; c.n_heads = 8; c.model_dim = 512; c.ff_dim = 1024; }
    else if (name == "SS-92") { c.n_layers = 28; c.n_heads = 8; c.model_dim = 512; c.ff_dim = 1024; }
    else throw std::invalid_argument("unknown separator preset: " + name);
    if (dim_scale != 1.0) {
        auto scaled = [&](int v, int multiple) {
            int s = static_cast<int>(std::lround(v * dim_scale));
            return std::max(multiple, (s + multiple - 1) / multiple * multiple);
        };
        c.model_dim = scaled(c.model_dim, c.n_heads);
        c.ff_dim = scaled(c.ff_dim, 1);
    }
    return c;
}

namespace {

ad::Var init_param(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double scl) {
    std::normal_distribution<double> g(0.0, scl);
    ad::Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
    return ad::param(std::move(m));
}

}  // namespace

Separator::Separator(const SeparatorConfig& config, uint64_t seed) : cfg_(config) {
    cfg_.check();
    std::mt19937_64 rng(seed);
    const int d = cfg_.model_dim;
    const double s = 0.02 * std::sqrt(64.0 / d);
    auto zeros = [](Eigen::Index r, Eigen::Index c) { return ad::param(ad::Mat::Zero(r, c)); };
    auto ones = [](Eigen::Index r, Eigen::Index c) { return ad::param(ad::Mat::Ones(r, c)); };

    in_proj_ = init_param(rng, cfg_.input_dim(), d, 0.05);
    in_bias_ = zeros(1, d);
    layer_logits_ = zeros(1, std::max(1, cfg_.ssl_layers));

    blocks_.resize(cfg_.n_layers);
    for (auto& b : blocks_) {
        b.lnf1_g = ones(1, d); b.lnf1_b = zeros(1, d);
        b.ff1_w1 = init_param(rng, d, cfg_.ff_dim, s); b.ff1_b1 = zeros(1, cfg_.ff_dim);
        b.ff1_w2 = init_param(rng, cfg_.ff_dim, d, s); b.ff1_b2 = zeros(1, d);
        b.lna_g = ones(1, d); b.lna_b = zeros(1, d);
        b.wq = init_param(rng, d, d, s); b.bq = zeros(1, d);
        b.wk = init_param(rng, d, d, s); b.bk = zeros(1, d);
        b.wv = init_param(rng, d, d, s); b.bv = zeros(1, d);
        b.wo = init_param(rng, d, d, s); b.bo = zeros(1, d);
        b.lnc_g = ones(1, d); b.lnc_b = zeros(1, d);
        b.conv_dw = init_param(rng, cfg_.conv_kernel, d, 0.1); b.conv_dw_b = zeros(1, d);
        b.conv_pw = init_param(rng, d, d, s); b.conv_pw_b = zeros(1, d);
        b.lnf2_g = ones(1, d); b.lnf2_b = zeros(1, d);
        b.ff2_w1 = init_param(rng, d, cfg_.ff_dim, s); b.ff2_b1 = zeros(1, cfg_.ff_dim);
        b.ff2_w2 = init_param(rng, cfg_.ff_dim, d, s); b.ff2_b2 = zeros(1, d);
    }
    out_ln_g_ = ones(1, d); out_ln_b_ = zeros(1, d);
    for (int o = 0; o < cfg_.n_outputs; ++o) {
        head_w_.push_back(init_param(rng, d, cfg_.n_bins, s));
        head_b_.push_back(zeros(1, cfg_.n_bins));
    }
}

std::vector<ad::Var> Separator::forward_vars(const ad::Var& features) const {
    if (features->val.cols() != cfg_.input_dim())
        throw std::invalid_argument("Separator: feature dim mismatch (expected " +
                                    std::to_string(cfg_.input_dim()) + ", got " +
                                    std::to_string(features->val.cols()) + ")");
    const int heads = cfg_.n_heads;
    const int dh = cfg_.model_dim / heads;

    ad::Var x = ad::add_rowvec(ad::matmul(features, in_proj_), in_bias_);
    for (const auto& b : blocks_) {
        // macaron FF 1 (half-step)
        ad::Var f = ad::layer_norm(x, b.lnf1_g, b.lnf1_b);
        f = ad::gelu(ad::add_rowvec(ad::matmul(f, b.ff1_w1), b.ff1_b1));
        f = ad::add_rowvec(ad::matmul(f, b.ff1_w2), b.ff1_b2);
        x = ad::add(x, ad::scale(f, 0.5));
        // self-attention
        ad::Var h = ad::layer_norm(x, b.lna_g, b.lna_b);
        ad::Var q = ad::add_rowvec(ad::matmul(h, b.wq), b.bq);
        ad::Var k = ad::add_rowvec(ad::matmul(h, b.wk), b.bk);
        ad::Var v = ad::add_rowvec(ad::matmul(h, b.wv), b.bv);
        ad::Var ctx;
        for (int hd = 0; hd < heads; ++hd) {
            ad::Var qh = ad::slice_cols(q, hd * dh, dh);
            ad::Var kh = ad::slice_cols(k, hd * dh, dh);
            ad::Var vh = ad::slice_cols(v, hd * dh, dh);
            ad::Var scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), 1.0 / std::sqrt(dh));
            ad::Var attn = ad::row_softmax(scores);
            ad::Var o = ad::matmul(attn, vh);
            ctx = hd == 0 ? o : ad::concat_cols(ctx, o);
        }
        x = ad::add(x, ad::add_rowvec(ad::matmul(ctx, b.wo), b.bo));
        // depthwise conv module
        ad::Var c = ad::layer_norm(x, b.lnc_g, b.lnc_b);
        c = ad::gelu(ad::depthwise_conv(c, b.conv_dw, b.conv_dw_b));
        c = ad::add_rowvec(ad::matmul(c, b.conv_pw), b.conv_pw_b);
        x = ad::add(x, c);
        // macaron FF 2 (half-step)
        f = ad::layer_norm(x, b.lnf2_g, b.lnf2_b);
        f = ad::gelu(ad::add_rowvec(ad::matmul(f, b.ff2_w1), b.ff2_b1));
        f = ad::add_rowvec(ad::matmul(f, b.ff2_w2), b.ff2_b2);
        x = ad::add(x, ad::scale(f, 0.5));
    }
    x = ad::layer_norm(x, out_ln_g_, out_ln_b_);

    std::vector<ad::Var> masks;
    for (int o = 0; o < cfg_.n_outputs; ++o)
        masks.push_back(ad::sigmoid(ad::add_rowvec(ad::matmul(x, head_w_[o]), head_b_[o])));
    return masks;
}

std::vector<MaskMatrix> Separator::forward(const RealMatrix& features,
                                           const RealMatrix* embedding) const {
    ad::Var in;
    if (embedding) {
        if (embedding->rows() != features.rows())
            throw std::invalid_argument("Separator::forward: embedding frame count mismatch");
        in = ad::concat_cols(ad::constant(features), ad::constant(*embedding));
    } else {
        in = ad::constant(features);
    }
    auto vars = forward_vars(in);
    std::vector<MaskMatrix> out;
    for (auto& v : vars) out.push_back(MaskMatrix{v->val});
    return out;
}

std::vector<std::pair<std::string, ad::Var>> Separator::named_params() const {
    std::vector<std::pair<std::string, ad::Var>> out;
    out.emplace_back("sep.in_proj", in_proj_);
    out.emplace_back("sep.in_bias", in_bias_);
    out.emplace_back("sep.layer_logits", layer_logits_);
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const auto& b = blocks_[l];
        std::string p = "sep.block" + std::to_string(l) + ".";
        out.emplace_back(p + "lnf1_g", b.lnf1_g); out.emplace_back(p + "lnf1_b", b.lnf1_b);
        out.emplace_back(p + "ff1_w1", b.ff1_w1); out.emplace_back(p + "ff1_b1", b.ff1_b1);
        out.emplace_back(p + "ff1_w2", b.ff1_w2); out.emplace_back(p + "ff1_b2", b.ff1_b2);
        out.emplace_back(p + "lna_g", b.lna_g); out.emplace_back(p + "lna_b", b.lna_b);
        out.emplace_back(p + "wq", b.wq); out.emplace_back(p + "bq", b.bq);
        out.emplace_back(p + "wk", b.wk); out.emplace_back(p + "bk", b.bk);
        out.emplace_back(p + "wv", b.wv); out.emplace_back(p + "bv", b.bv);
        out.emplace_back(p + "wo", b.wo); out.emplace_back(p + "bo", b.bo);
        out.emplace_back(p + "lnc_g", b.lnc_g); out.emplace_back(p + "lnc_b", b.lnc_b);
        out.emplace_back(p + "conv_dw", b.conv_dw); out.emplace_back(p + "conv_dw_b", b.conv_dw_b);
        out.emplace_back(p + "conv_pw", b.conv_pw); out.emplace_back(p + "conv_pw_b", b.conv_pw_b);
        out.emplace_back(p + "lnf2_g", b.lnf2_g); out.emplace_back(p + "lnf2_b", b.lnf2_b);
        out.emplace_back(p + "ff2_w1", b.ff2_w1); out.emplace_back(p + "ff2_b1", b.ff2_b1);
        out.emplace_back(p + "ff2_w2", b.ff2_w2); out.emplace_back(p + "ff2_b2", b.ff2_b2);
    }
    out.emplace_back("sep.out_ln_g", out_ln_g_);
    out.emplace_back("sep.out_ln_b", out_ln_b_);
    for (std::size_t o = 0; o < head_w_.size(); ++o) {
        out.emplace_back("sep.head" + std::to_string(o) + "_w", head_w_[o]);
        out.emplace_back("sep.head" + std::to_string(o) + "_b", head_b_[o]);
    }
    return out;
}

void Separator::set_trainable(bool trainable) {
    for (auto& [name, p] : named_params()) p->requires_grad = trainable;
}

UpitResult upit_loss(const std::vector<ad::Var>& masks, const RealMatrix& mix_magnitude,
                     const std::vector<RealMatrix>& ref_magnitudes) {
    const std::size_t n = masks.size();
    if (ref_magnitudes.size() != n)
        throw std::invalid_argument("upit_loss: output/reference count mismatch");
    double ref_energy = 0.0;
    for (const auto& r : ref_magnitudes) ref_energy += r.squaredNorm();
    if (ref_energy <= 0.0)
        throw std::invalid_argument("upit_loss: all references are zero");

    // pick the best permutation from values only
    std::vector<int> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = static_cast<int>(i);
    std::vector<int> best_perm = perm;
    double best = std::numeric_limits<double>::infinity();
    const double total = static_cast<double>(mix_magnitude.size()) * n;
    do {
        double l = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            l += (masks[i]->val.cwiseProduct(mix_magnitude) - ref_magnitudes[perm[i]])
                     .squaredNorm();
        l /= total;
        if (l < best) { best = l; best_perm = perm; }
    } while (std::next_permutation(perm.begin(), perm.end()));

    // graph for the chosen permutation
    const ad::Var mix = ad::constant(mix_magnitude);
    std::vector<ad::Var> terms;
    for (std::size_t i = 0; i < n; ++i) {
        ad::Var masked = ad::mul(masks[i], mix);
        terms.push_back(ad::scale(ad::mean_sq_err(masked, ref_magnitudes[best_perm[i]]),
                                  1.0 / static_cast<double>(n)));
    }
    return {ad::add_scalar_vars(terms), best_perm};
}

UpitResult build_loss(const Separator& model, const SslEncoder* encoder,
                      const TrainItem& item, const TrainOptions& opts,
                      const EmbeddingStack* precomputed_stack) {
    Spectrogram mix_spec = stft(item.mixture, opts.window_len, opts.hop);
    RealMatrix feats = log_mag_features(mix_spec);
    RealMatrix mix_mag = mix_spec.magnitude();
    std::vector<RealMatrix> ref_mags;
    for (const auto& r : item.references)
        ref_mags.push_back(stft(r, opts.window_len, opts.hop).magnitude());

    ad::Var input = ad::constant(feats);
    if (model.config().embedding_dim > 0) {
        if (!encoder && !precomputed_stack)
            throw std::invalid_argument("build_loss: SSL model requires an encoder");
        const int use_layers = model.config().ssl_layers;
        std::vector<ad::Var> layer_vars;
        int shift_ms = 20;
        if (precomputed_stack) {
            shift_ms = precomputed_stack->frame_shift_ms;
            for (const auto& m : precomputed_stack->layers) layer_vars.push_back(ad::constant(m));
        } else {
            shift_ms = encoder->config().frame_shift_ms;
            RealMatrix enc_feats = base_features(item.mixture, shift_ms,
                                                 encoder->config().n_mel);
            layer_vars = encoder->forward(ad::constant(enc_feats), use_layers);
        }
        ad::Var w = ad::row_softmax(model.layer_logits());
        ad::Var fused = ad::weighted_sum(layer_vars, w);
        const int f_ss_ms = opts.hop * 1000 / item.mixture.sample_rate;
        ad::Var aligned = ad::repeat_rows(fused, shift_ms / f_ss_ms, feats.rows());
        input = ad::concat_cols(input, aligned);
    }
    auto masks = model.forward_vars(input);
    // Fewer active sources than output heads (single-speaker samples): the
    // spare heads train toward silence.
    while (ref_mags.size() < masks.size())
        ref_mags.push_back(RealMatrix::Zero(mix_mag.rows(), mix_mag.cols()));
    return upit_loss(masks, mix_mag, ref_mags);
}

TrainResult train(Separator& model, SslEncoder* encoder, const std::vector<TrainStage>& stages,
                  const std::vector<TrainItem>& data, const std::vector<TrainItem>& dev,
                  const TrainOptions& opts) {
    if (data.empty()) throw std::invalid_argument("train: empty data");
    for (const auto& st : stages)
        if (st.ssl_trainable && !encoder)
            throw std::invalid_argument("train: stage '" + st.name +
                                        "' requires an encoder to unfreeze");

    std::mt19937_64 rng(opts.seed);
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);

    std::vector<ad::Var> params;
    for (auto& [n, p] : model.named_params()) params.push_back(p);
    if (encoder)
        for (auto& [n, p] : encoder->named_params()) params.push_back(p);

    TrainResult result;
    result.best_dev_loss = std::numeric_limits<double>::infinity();
    std::vector<ad::Mat> best_params(params.size());

    auto dev_loss = [&]() {
        if (dev.empty()) return std::numeric_limits<double>::quiet_NaN();
        double total = 0.0;
        for (const auto& item : dev) {
            std::optional<EmbeddingStack> stack;
            if (encoder && model.config().embedding_dim > 0)
                stack = encoder->encode_layers(item.mixture, model.config().ssl_layers);
            total += build_loss(model, encoder, item, opts, stack ? &*stack : nullptr)
                         .loss->val(0, 0);
        }
        return total / dev.size();
    };

    long global_step = 0;
    for (const auto& stage : stages) {
        if (encoder) encoder->set_trainable(stage.ssl_trainable);

        // frozen encoder: embeddings are constant for the whole stage
        std::vector<EmbeddingStack> cache;
        const bool use_cache =
            encoder && model.config().embedding_dim > 0 && !stage.ssl_trainable;
        if (use_cache)
            for (const auto& item : data)
                cache.push_back(encoder->encode_layers(item.mixture, model.config().ssl_layers));

        ad::AdamW opt(params, stage.learning_rate);
        for (int step = 0; step < stage.steps; ++step, ++global_step) {
            opt.set_lr(stage.learning_rate *
                       (1.0 - static_cast<double>(step) / std::max(1, stage.steps)));
            const std::size_t idx = pick(rng);
            UpitResult r = build_loss(model, encoder, data[idx], opts,
                                      use_cache ? &cache[idx] : nullptr);
            const double loss = r.loss->val(0, 0);
            if (!std::isfinite(loss))
                throw std::runtime_error("train: loss diverged (NaN) at step " +
                                         std::to_string(global_step));
            ad::backward(r.loss);
            opt.step();

            if (opts.log_every > 0 && global_step % opts.log_every == 0)
                result.log.push_back({global_step, stage.name, loss, opt.lr()});
            if (!dev.empty() && opts.dev_every > 0 && (step + 1) % opts.dev_every == 0) {
                double dl = dev_loss();
                if (dl < result.best_dev_loss) {
                    result.best_dev_loss = dl;
                    for (std::size_t i = 0; i < params.size(); ++i) best_params[i] = params[i]->val;
                }
            }
        }
    }

    if (!dev.empty() && std::isfinite(result.best_dev_loss) && !best_params.empty() &&
        best_params[0].size() > 0)
        for (std::size_t i = 0; i < params.size(); ++i) params[i]->val = best_params[i];
    return result;
}

std::vector<AudioBuffer> separate_utterance(const Separator& model, const SslEncoder* encoder,
                                            const AudioBuffer& audio, int window_len, int hop) {
    Spectrogram spec = stft(audio, window_len, hop);
    RealMatrix feats = log_mag_features(spec);

    std::optional<RealMatrix> embedding;
    if (model.config().embedding_dim > 0) {
        if (!encoder) throw std::invalid_argument("separate_utterance: encoder required");
        EmbeddingStack stack = encoder->encode_layers(audio, model.config().ssl_layers);
        LayerWeights lw{model.layer_logits()->val.row(0)};
        RealMatrix fused = fuse_embedding(stack, lw);
        const int f_ss_ms = hop * 1000 / audio.sample_rate;
        embedding = align_frame_rate(fused, stack.frame_shift_ms, f_ss_ms, feats.rows());
    }

    auto masks = model.forward(feats, embedding ? &*embedding : nullptr);
    std::vector<AudioBuffer> outs;
    for (const auto& m : masks) {
        AudioBuffer y = istft(apply_mask(spec, m));
        y.samples.resize(audio.samples.size());  // trim synthesis padding
        outs.push_back(std::move(y));
    }
    return outs;
}

double grad_check(const Separator& model, const SslEncoder* encoder, const TrainItem& item,
                  double epsilon, int n_coords, uint64_t seed) {
    TrainOptions opts;
    auto named = model.named_params();
    if (encoder)
        for (auto& np : encoder->named_params()) named.push_back(np);

    UpitResult base = build_loss(model, encoder, item, opts);
    const std::vector<int> perm = base.permutation;
    for (auto& [n, p] : named) { p->ensure_grad(); p->grad.setZero(); }
    ad::backward(base.loss);

    // fixed-permutation objective for finite differences
    auto fixed_perm_loss = [&]() {
        Spectrogram mix_spec = stft(item.mixture, opts.window_len, opts.hop);
        RealMatrix feats = log_mag_features(mix_spec);
        RealMatrix mix_mag = mix_spec.magnitude();
        ad::Var input = ad::constant(feats);
        if (model.config().embedding_dim > 0) {
            RealMatrix enc_feats = base_features(item.mixture, encoder->config().frame_shift_ms,
                                                 encoder->config().n_mel);
            auto layer_vars =
                encoder->forward(ad::constant(enc_feats), model.config().ssl_layers);
            ad::Var w = ad::row_softmax(model.layer_logits());
            ad::Var fused = ad::weighted_sum(layer_vars, w);
            const int f_ss_ms = opts.hop * 1000 / item.mixture.sample_rate;
            ad::Var aligned = ad::repeat_rows(fused, encoder->config().frame_shift_ms / f_ss_ms,
                                              feats.rows());
            input = ad::concat_cols(input, aligned);
        }
        auto masks = model.forward_vars(input);
        double l = 0.0;
        const double total = static_cast<double>(mix_mag.size()) * masks.size();
        for (std::size_t i = 0; i < masks.size(); ++i) {
            RealMatrix ref = stft(item.references[perm[i]], opts.window_len, opts.hop).magnitude();
            l += (masks[i]->val.cwiseProduct(mix_mag) - ref).squaredNorm();
        }
        return l / total;
    };

    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick_param(0, named.size() - 1);
    double max_rel = 0.0;
    for (int c = 0; c < n_coords; ++c) {
        auto& [name, p] = named[pick_param(rng)];
        std::uniform_int_distribution<Eigen::Index> pick_coord(0, p->val.size() - 1);
        const Eigen::Index i = pick_coord(rng);
        const double orig = p->val.data()[i];
        p->val.data()[i] = orig + epsilon;
        const double lp = fixed_perm_loss();
        p->val.data()[i] = orig - epsilon;
        const double lm = fixed_perm_loss();
        p->val.data()[i] = orig;
        const double fd = (lp - lm) / (2.0 * epsilon);
        const double an = p->grad.data()[i];
        const double rel = std::abs(an - fd) / std::max(1e-6, std::abs(an) + std::abs(fd));
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace cssep
