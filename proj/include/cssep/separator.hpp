#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cssep/audio.hpp"
#include "cssep/autodiff.hpp"
#include "cssep/ssl_encoder.hpp"
#include "cssep/stft.hpp"

namespace cssep {

struct SeparatorConfig {
    int n_layers = 2;
    int n_heads = 4;
    int model_dim = 64;
    int ff_dim = 128;
    int n_outputs = 2;
    int n_bins = 257;
    int embedding_dim = 0;  // 0: no SSL fusion
    int ssl_layers = 0;     // encoder layers feeding the fused embedding
    int conv_kernel = 15;

    int input_dim() const { return n_bins + embedding_dim; }
    void check() const;
};

// Desk-scale analogs of the published SS rows (SS-9.5 ... SS-92); dims scale
// by `dim_scale`, layer/head counts stay fixed.
SeparatorConfig separator_preset(const std::string& name, double dim_scale = 1.0);

class Separator {
public:
    Separator() = default;
    Separator(const SeparatorConfig& config, uint64_t seed);

    const SeparatorConfig& config() const { return cfg_; }

    // features: T x input_dim (spectrogram features, embedding already
    // concatenated). Returns n_outputs sigmoid masks of shape T x n_bins.
    std::vector<ad::Var> forward_vars(const ad::Var& features) const;

    // Spec-level forward: concatenates the optional frame-aligned embedding.
    std::vector<MaskMatrix> forward(const RealMatrix& features,
                                    const RealMatrix* embedding = nullptr) const;

    ad::Var layer_logits() const { return layer_logits_; }

    std::vector<std::pair<std::string, ad::Var>> named_params() const;
    void set_trainable(bool trainable);

private:
    SeparatorConfig cfg_;
    ad::Var in_proj_, in_bias_, layer_logits_;
    struct Block {
        ad::Var lnf1_g, lnf1_b, ff1_w1, ff1_b1, ff1_w2, ff1_b2;
        ad::Var lna_g, lna_b, wq, bq, wk, bk, wv, bv, wo, bo;
        ad::Var lnc_g, lnc_b, conv_dw, conv_dw_b, conv_pw, conv_pw_b;
        ad::Var lnf2_g, lnf2_b, ff2_w1, ff2_b1, ff2_w2, ff2_b2;
    };
    std::vector<Block> blocks_;
    ad::Var out_ln_g_, out_ln_b_;
    std::vector<ad::Var> head_w_, head_b_;
};

struct UpitResult {
    ad::Var loss;
    std::vector<int> permutation;  // output head -> reference index
};

// Utterance-level PIT: magnitude-domain MSE between masked mixture and
// reference magnitudes, minimized over output-to-reference permutations.
// One permutation per utterance; normalization is by total frame*bin count.
UpitResult upit_loss(const std::vector<ad::Var>& masks, const RealMatrix& mix_magnitude,
                     const std::vector<RealMatrix>& ref_magnitudes);

struct TrainStage {
    std::string name;  // warmup | frozen_ssl | unfrozen_ssl
    double learning_rate = 1e-3;
    int steps = 100;
    bool ssl_trainable = false;
};

struct TrainItem {
    AudioBuffer mixture;
    std::vector<AudioBuffer> references;
};

struct TrainOptions {
    uint64_t seed = 1;
    int window_len = 512;
    int hop = 160;
    int dev_every = 100;
    int log_every = 50;
};

struct TrainLogEntry {
    long step = 0;
    std::string stage;
    double loss = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    std::vector<TrainLogEntry> log;
    double best_dev_loss = 0.0;
};

// Builds the full training graph for one mixture: (optional) encoder forward,
// layer-weight fusion, frame-rate alignment, separator forward, uPIT loss.
// precomputed_stack, when given, bypasses the encoder forward (frozen path).
UpitResult build_loss(const Separator& model, const SslEncoder* encoder,
                      const TrainItem& item, const TrainOptions& opts,
                      const EmbeddingStack* precomputed_stack = nullptr);

// Staged fine-tuning with AdamW and linear LR decay per stage; the encoder is
// updated only in stages with ssl_trainable set. Model selection keeps the
// best dev-loss parameters. Throws std::runtime_error on NaN loss.
TrainResult train(Separator& model, SslEncoder* encoder,
                  const std::vector<TrainStage>& stages, const std::vector<TrainItem>& data,
                  const std::vector<TrainItem>& dev, const TrainOptions& opts);

std::vector<AudioBuffer> separate_utterance(const Separator& model, const SslEncoder* encoder,
                                            const AudioBuffer& audio,
                                            int window_len = 512, int hop = 160);

// Central-difference check of the analytic gradient over a random parameter
// subset; returns the maximum relative error. The uPIT permutation is fixed
// at the unperturbed optimum.
double grad_check(const Separator& model, const SslEncoder* encoder, const TrainItem& item,
                  double epsilon = 1e-5, int n_coords = 200, uint64_t seed = 1);

}  // namespace cssep
