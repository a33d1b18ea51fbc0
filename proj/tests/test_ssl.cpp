#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "cssep/ssl_encoder.hpp"
#include "cssep/synthetic.hpp"

using namespace cssep;

TEST_CASE("base_features frame counts follow the shift") {
    auto audio = synth_utterance(0, 1.0, 16000, 1);  // 16000 samples
    CHECK(base_features(audio, 20).rows() == 50);    // 320-sample hop
    CHECK(base_features(audio, 40).rows() == 25);
    CHECK(base_features(audio, 20).cols() == 40);
    // 30 ms: ceil(16000 / 480)
    CHECK(base_features(audio, 30).rows() == 34);
}

TEST_CASE("base_features is deterministic and louder is larger") {
    auto audio = synth_utterance(1, 0.8, 16000, 2);
    RealMatrix f1 = base_features(audio, 20);
    RealMatrix f2 = base_features(audio, 20);
    CHECK((f1 - f2).cwiseAbs().maxCoeff() == 0.0);

    AudioBuffer loud = audio;
    for (auto& s : loud.samples) s *= 10.0;
    RealMatrix fl = base_features(loud, 20);
    CHECK(fl.mean() > f1.mean());

    AudioBuffer silence;
    silence.samples.assign(16000, 0.0);
    RealMatrix fs = base_features(silence, 20);
    CHECK(fs.maxCoeff() == doctest::Approx(std::log(1e-10)));
}

TEST_CASE("kmeans recovers separated clusters") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> noise(0.0, 0.05);
    RealMatrix pts(90, 4);
    std::vector<int> truth(90);
    const double centers[3][4] = {{0, 0, 0, 0}, {5, 5, 0, 0}, {0, 0, 5, 5}};
    for (int i = 0; i < 90; ++i) {
        truth[i] = i % 3;
        for (int j = 0; j < 4; ++j) pts(i, j) = centers[truth[i]][j] + noise(rng);
    }
    KMeans km;
    km.fit(pts, 3, 50, 1);
    auto pred = km.predict(pts);

    // label-permutation-invariant agreement: same-cluster pairs share labels
    for (int i = 0; i < 90; ++i)
        for (int j = i + 1; j < 90; ++j)
            CHECK((pred[i] == pred[j]) == (truth[i] == truth[j]));
    // total squared distance: 90 points x 4 dims x sigma^2 = 0.9 expected
    CHECK(km.distortion(pts) / pts.rows() < 0.02);
}

TEST_CASE("kmeans determinism and hashing") {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> d(0.0, 1.0);
    RealMatrix pts(60, 5);
    for (Eigen::Index i = 0; i < pts.size(); ++i) pts.data()[i] = d(rng);

    KMeans a, b, c;
    a.fit(pts, 4, 30, 11);
    b.fit(pts, 4, 30, 11);
    c.fit(pts, 4, 30, 12);
    CHECK(a.hash() == b.hash());
    CHECK((a.centroids - b.centroids).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.hash() != c.hash());

    auto t1 = kmeans_tokenize(pts, 4, 30, 11);
    auto t2 = a.predict(pts);
    CHECK(t1 == t2);
}

TEST_CASE("kmeans rejects k larger than the corpus") {
    RealMatrix pts = RealMatrix::Random(3, 2);
    KMeans km;
    CHECK_THROWS_AS(km.fit(pts, 5, 10, 1), std::invalid_argument);
}

TEST_CASE("mask_spans coverage and span structure") {
    // expected coverage of i.i.d. span starts: 1 - (1-p)^span
    const double p = 0.065;
    const int span = 10;
    double covered = 0.0;
    const int trials = 200, T = 400;
    for (int t = 0; t < trials; ++t) {
        auto m = mask_spans(T, p, span, 1000 + t);
        REQUIRE(static_cast<int>(m.size()) == T);
        int c = 0;
        for (char v : m) c += v != 0;
        CHECK(c >= 1);  // never empty
        covered += static_cast<double>(c) / T;
    }
    const double expect = 1.0 - std::pow(1.0 - p, span);
    CHECK(covered / trials == doctest::Approx(expect).epsilon(0.08));
}

TEST_CASE("mask_spans near-zero probability still yields one span") {
    auto m = mask_spans(100, 1e-9, 7, 5);
    int c = 0;
    for (char v : m) c += v != 0;
    CHECK(c == 7);
}

TEST_CASE("utterance_mix holds the requested power ratio") {
    auto primary = synth_utterance(0, 2.0, 16000, 21);
    auto intf = synth_utterance(1, 2.0, 16000, 22);
    for (double ratio : {0.0, 5.0, 10.0}) {
        auto mixed = utterance_mix(primary, intf, ratio, 77);
        REQUIRE(mixed.samples.size() == primary.samples.size());
        // the injected part is the difference
        std::size_t lo = mixed.samples.size(), hi = 0;
        double e_intf = 0.0;
        for (std::size_t i = 0; i < mixed.samples.size(); ++i) {
            double d = mixed.samples[i] - primary.samples[i];
            if (d != 0.0) {
                lo = std::min(lo, i);
                hi = std::max(hi, i + 1);
                e_intf += d * d;
            }
        }
        REQUIRE(lo < hi);
        CHECK(hi - lo <= primary.samples.size() / 2);  // capped at half
        double e_prim = 0.0;
        for (std::size_t i = lo; i < hi; ++i) e_prim += primary.samples[i] * primary.samples[i];
        CHECK(10.0 * std::log10(e_prim / e_intf) == doctest::Approx(ratio).epsilon(0.02));
    }
}

TEST_CASE("relative_position_bucket properties") {
    const int B = 32, half = 16;
    std::set<int> seen;
    for (int rel = -300; rel <= 300; ++rel) {
        int b = relative_position_bucket(rel, B);
        CHECK(b >= 0);
        CHECK(b < B);
        seen.insert(b);
        // sign split: negative and zero offsets use the lower half
        if (rel <= 0) CHECK(b < half);
        if (rel > 0) CHECK(b >= half);
        // mirror symmetry between directions
        if (rel > 0)
            CHECK(relative_position_bucket(-rel, B) == b - half);
    }
    CHECK(relative_position_bucket(0, B) == 0);
    // exact buckets for small offsets
    for (int k = 1; k < half / 2; ++k) CHECK(relative_position_bucket(-k, B) == k);
    // monotone in distance
    for (int rel = 1; rel < 300; ++rel)
        CHECK(relative_position_bucket(rel + 1, B) >= relative_position_bucket(rel, B));
    // far offsets saturate in the last bucket of each half
    CHECK(relative_position_bucket(-10000, B) == half - 1);
    CHECK(relative_position_bucket(10000, B) == B - 1);
}

TEST_CASE("encoder forward shapes and prefix property") {
    EncoderConfig cfg;
    cfg.n_layers = 3;
    cfg.n_heads = 2;
    cfg.model_dim = 32;
    cfg.ff_dim = 64;
    SslEncoder enc(cfg, 5);

    auto audio = synth_utterance(0, 0.6, 16000, 31);
    auto full = enc.encode_layers(audio, 3);
    REQUIRE(full.layers.size() == 3);
    for (const auto& l : full.layers) {
        CHECK(l.rows() == base_features(audio, cfg.frame_shift_ms).rows());
        CHECK(l.cols() == 32);
    }

    // truncated inference reproduces the bottom layers exactly
    auto part = enc.encode_layers(audio, 2);
    REQUIRE(part.layers.size() == 2);
    for (int l = 0; l < 2; ++l)
        CHECK((part.layers[l] - full.layers[l]).cwiseAbs().maxCoeff() == 0.0);

    CHECK_THROWS_AS(enc.encode_layers(audio, 4), std::invalid_argument);
    CHECK_THROWS_AS(enc.encode_layers(audio, 0), std::invalid_argument);
}

TEST_CASE("masked frames do not leak their input content") {
    EncoderConfig cfg;
    cfg.n_layers = 2;
    cfg.model_dim = 32;
    cfg.n_heads = 2;
    cfg.ff_dim = 64;
    SslEncoder enc(cfg, 6);

    RealMatrix f1 = RealMatrix::Random(12, cfg.n_mel);
    RealMatrix f2 = f1;
    std::vector<char> mask(12, 0);
    mask[3] = mask[4] = mask[9] = 1;
    f2.row(3).setConstant(100.0);  // differs only where masked
    f2.row(9).setConstant(-7.0);

    auto o1 = enc.forward(ad::constant(f1), 2, &mask);
    auto o2 = enc.forward(ad::constant(f2), 2, &mask);
    CHECK((o1.back()->val - o2.back()->val).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("encoder presets keep published layer and head counts") {
    auto small = encoder_preset("Small", 0.1);
    CHECK(small.n_layers == 12);
    CHECK(small.n_heads == 12);
    auto base = encoder_preset("Base", 0.1);
    CHECK(base.n_layers == 12);
    CHECK(base.n_heads == 12);
    auto large = encoder_preset("Large", 0.1);
    CHECK(large.n_layers == 24);
    CHECK(large.n_heads == 16);
    CHECK(large.model_dim > base.model_dim);
    CHECK_THROWS_AS(encoder_preset("Gigantic"), std::invalid_argument);
}

TEST_CASE("msp pretraining reduces the masked loss") {
    EncoderConfig cfg;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.model_dim = 24;
    cfg.ff_dim = 48;
    cfg.vocab_k = 4;
    SslEncoder enc(cfg, 9);

    std::vector<PretrainItem> corpus;
    for (int i = 0; i < 4; ++i) {
        PretrainItem item;
        item.utterance_id = "utt" + std::to_string(i);
        item.audio = synth_utterance(i % 2, 0.8, 16000, 40 + i);
        const auto T = base_features(item.audio, cfg.frame_shift_ms).rows();
        // labels keyed to the speaker class: learnable structure
        item.labels.assign(T, i % 2 ? 1 : 2);
        corpus.push_back(std::move(item));
    }

    PretrainConfig hyper;
    hyper.steps = 60;
    hyper.lr = 3e-3;
    hyper.mix_prob = 0.2;
    hyper.seed = 3;
    auto res = msp_pretrain(enc, corpus, hyper);
    REQUIRE(res.loss_history.size() == 60);
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 10; ++i) {
        head += res.loss_history[i];
        tail += res.loss_history[res.loss_history.size() - 1 - i];
    }
    CHECK(tail < head);
    CHECK(res.masked_accuracy_history.back() > 0.5);
    CHECK(enc.train_step == 60);
}

TEST_CASE("fuse_embedding equals the softmax-weighted layer sum") {
    EmbeddingStack stack;
    stack.layers = {RealMatrix::Random(6, 4), RealMatrix::Random(6, 4),
                    RealMatrix::Random(6, 4)};
    LayerWeights w;
    w.logits = Eigen::RowVectorXd(3);
    w.logits << 0.3, -1.0, 2.0;

    auto sm = w.softmax();
    CHECK(sm.sum() == doctest::Approx(1.0).epsilon(1e-12));
    RealMatrix expect = sm(0) * stack.layers[0] + sm(1) * stack.layers[1] +
                        sm(2) * stack.layers[2];
    CHECK((fuse_embedding(stack, w) - expect).cwiseAbs().maxCoeff() < 1e-12);

    w.logits = Eigen::RowVectorXd(2);
    CHECK_THROWS_AS(fuse_embedding(stack, w), std::invalid_argument);
}

TEST_CASE("align_frame_rate repeats and pads to the target") {
    RealMatrix emb(3, 2);
    emb << 1, 2, 3, 4, 5, 6;
    // 20 ms embedding to a 10 ms grid: each row twice
    RealMatrix out = align_frame_rate(emb, 20, 10);
    REQUIRE(out.rows() == 6);
    CHECK(out.row(0) == emb.row(0));
    CHECK(out.row(1) == emb.row(0));
    CHECK(out.row(4) == emb.row(2));

    // padding repeats the last frame; trimming cuts the tail
    CHECK(align_frame_rate(emb, 20, 10, 8).rows() == 8);
    CHECK(align_frame_rate(emb, 20, 10, 8).row(7) == emb.row(2));
    CHECK(align_frame_rate(emb, 20, 10, 5).rows() == 5);

    CHECK_THROWS_AS(align_frame_rate(emb, 25, 10), std::invalid_argument);
}

TEST_CASE("set_trainable toggles every encoder parameter") {
    EncoderConfig cfg;
    cfg.model_dim = 16;
    cfg.ff_dim = 32;
    cfg.n_heads = 2;
    SslEncoder enc(cfg, 13);
    enc.set_trainable(false);
    for (auto& [name, p] : enc.named_params()) CHECK_FALSE(p->requires_grad);
    CHECK_FALSE(enc.trainable());
    enc.set_trainable(true);
    for (auto& [name, p] : enc.named_params()) CHECK(p->requires_grad);
}
