#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cssep/audio.hpp"
#include "cssep/autodiff.hpp"
#include "cssep/stft.hpp"

namespace cssep {

struct EncoderConfig {
    int n_layers = 2;
    int n_heads = 4;
    int model_dim = 64;
    int ff_dim = 256;
    int frame_shift_ms = 20;  // 20, 30, or 40
    int vocab_k = 8;
    int n_mel = 40;
    int rel_bias_buckets = 32;

    void check() const;
};

// Desk-scale analogs of the published SSL rows. The layer/head counts match;
// dims are scaled by `dim_scale` (1.0 reproduces the full-size rows).
EncoderConfig encoder_preset(const std::string& name, double dim_scale = 1.0);

// Log-mel filterbank, 25 ms analysis window at the requested shift.
RealMatrix base_features(const AudioBuffer& audio, int frame_shift_ms, int n_mel = 40);

// --- tokenizer -------------------------------------------------------------

struct KMeans {
    RealMatrix centroids;  // k x dim
    // Lloyd's algorithm with k-means++ init, deterministic given seed.
    void fit(const RealMatrix& points, int k, int iters, uint64_t seed);
    std::vector<int> predict(const RealMatrix& points) const;
    double distortion(const RealMatrix& points) const;
    uint64_t hash() const;  // cache key for pseudo-label files
};

std::vector<int> kmeans_tokenize(const RealMatrix& features, int k, int iters, uint64_t seed);

// --- masking & mixing ------------------------------------------------------

// i.i.d. span starts with probability mask_prob, each covering span_len
// frames; guaranteed non-empty.
std::vector<char> mask_spans(int n_frames, double mask_prob, int span_len, uint64_t seed);

// Adds an interfering utterance (trimmed/looped to at most half the primary
// duration, random placement) at the given primary-to-interferer ratio.
AudioBuffer utterance_mix(const AudioBuffer& primary, const AudioBuffer& interferer,
                          double mix_ratio_db, uint64_t seed);

// --- encoder ---------------------------------------------------------------

struct EmbeddingStack {
    std::vector<RealMatrix> layers;  // each n_frames x model_dim
    int frame_shift_ms = 20;
};

struct LayerWeights {
    Eigen::RowVectorXd logits;
    Eigen::RowVectorXd softmax() const;
};

class SslEncoder {
public:
    SslEncoder() = default;
    SslEncoder(const EncoderConfig& config, uint64_t seed);

    const EncoderConfig& config() const { return cfg_; }

    // Per-layer transformer outputs (bottom use_layers blocks only).
    // mask, when non-null, replaces masked frames by the learned mask
    // embedding after the input projection.
    std::vector<ad::Var> forward(const ad::Var& features, int use_layers,
                                 const std::vector<char>* mask = nullptr) const;

    // Prediction-head logits over vocab_k from the top requested layer.
    ad::Var msp_logits(const ad::Var& features, const std::vector<char>& mask) const;

    EmbeddingStack encode_layers(const AudioBuffer& audio, int use_layers) const;

    std::vector<std::pair<std::string, ad::Var>> named_params() const;
    void set_trainable(bool trainable);
    bool trainable() const;

    long train_step = 0;

private:
    EncoderConfig cfg_;
    ad::Var in_proj_, in_bias_, mask_emb_;
    struct Block {
        ad::Var ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, rel_bias;
        ad::Var ln2_g, ln2_b, w1, b1, w2, b2;
    };
    std::vector<Block> blocks_;
    ad::Var head_w_, head_b_;
};

// T5-style bucketing of relative positions, bidirectional.
int relative_position_bucket(int relative, int n_buckets, int max_distance = 128);

struct PretrainItem {
    std::string utterance_id;
    AudioBuffer audio;
    std::vector<int> labels;  // per frame at the encoder frame shift
};

struct PretrainConfig {
    int steps = 500;
    double lr = 1e-3;
    double mask_prob = 0.065;
    int span_len = 10;
    double mix_prob = 0.2;       // utterance mixing probability per step
    double mix_ratio_db = 5.0;
    uint64_t seed = 1;
    int log_every = 50;
};

struct PretrainResult {
    std::vector<double> loss_history;
    std::vector<double> masked_accuracy_history;
};

// Cross-entropy over masked frames only; throws std::runtime_error on
// divergence (NaN loss).
PretrainResult msp_pretrain(SslEncoder& encoder, const std::vector<PretrainItem>& corpus,
                            const PretrainConfig& hyper);

RealMatrix fuse_embedding(const EmbeddingStack& stack, const LayerWeights& weights);

// Duplicates each frame f_wl/f_ss times; trims or pads (last frame) to
// target_frames when target_frames >= 0.
RealMatrix align_frame_rate(const RealMatrix& embedding, int f_wl_ms, int f_ss_ms,
                            Eigen::Index target_frames = -1);

}  // namespace cssep
