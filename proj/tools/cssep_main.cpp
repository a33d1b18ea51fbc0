// cssep: continuous speech separation pipeline driver.
//
// Subcommands cover the whole workflow: simulate overlapped mixtures,
// tokenize a corpus into pseudo-labels, pretrain the SSL encoder, fine-tune
// the separator, run utterance or continuous separation, score transcripts,
// and benchmark inference cost.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cssep/bench.hpp"
#include "cssep/checkpoint.hpp"
#include "cssep/config.hpp"
#include "cssep/css.hpp"
#include "cssep/scoring.hpp"
#include "cssep/separator.hpp"
#include "cssep/simulate.hpp"
#include "cssep/ssl_encoder.hpp"
#include "cssep/stft.hpp"
#include "cssep/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cssep;

namespace {

struct UserError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// config -> model plumbing

EncoderConfig encoder_from_config(const RunConfig& cfg) {
    EncoderConfig ec;
    const std::string preset = cfg.get<std::string>("encoder.preset", "");
    if (!preset.empty()) ec = encoder_preset(preset, cfg.get<double>("encoder.dim_scale", 1.0));
    ec.n_layers = cfg.get<int>("encoder.n_layers", ec.n_layers);
    ec.n_heads = cfg.get<int>("encoder.n_heads", ec.n_heads);
    ec.model_dim = cfg.get<int>("encoder.model_dim", ec.model_dim);
    ec.ff_dim = cfg.get<int>("encoder.ff_dim", ec.ff_dim);
    ec.frame_shift_ms = cfg.get<int>("encoder.frame_shift_ms", ec.frame_shift_ms);
    ec.vocab_k = cfg.get<int>("encoder.vocab_k", ec.vocab_k);
    ec.n_mel = cfg.get<int>("encoder.n_mel", ec.n_mel);
    ec.check();
    return ec;
}

SeparatorConfig separator_from_config(const RunConfig& cfg) {
    SeparatorConfig sc;
    const std::string preset = cfg.get<std::string>("separator.preset", "");
    if (!preset.empty())
        sc = separator_preset(preset, cfg.get<double>("separator.dim_scale", 1.0));
    sc.n_layers = cfg.get<int>("separator.n_layers", sc.n_layers);
    sc.n_heads = cfg.get<int>("separator.n_heads", sc.n_heads);
    sc.model_dim = cfg.get<int>("separator.model_dim", sc.model_dim);
    sc.ff_dim = cfg.get<int>("separator.ff_dim", sc.ff_dim);
    sc.n_outputs = cfg.get<int>("separator.n_outputs", sc.n_outputs);
    sc.n_bins = cfg.get<int>("separator.n_bins", sc.n_bins);
    sc.embedding_dim = cfg.get<int>("separator.embedding_dim", sc.embedding_dim);
    sc.ssl_layers = cfg.get<int>("separator.ssl_layers", sc.ssl_layers);
    sc.check();
    return sc;
}

json encoder_config_json(const EncoderConfig& c) {
    return json{{"kind", "encoder"},       {"n_layers", c.n_layers},
                {"n_heads", c.n_heads},    {"model_dim", c.model_dim},
                {"ff_dim", c.ff_dim},      {"frame_shift_ms", c.frame_shift_ms},
                {"vocab_k", c.vocab_k},    {"n_mel", c.n_mel},
                {"rel_bias_buckets", c.rel_bias_buckets}};
}

json separator_config_json(const SeparatorConfig& c) {
    return json{{"kind", "separator"},     {"n_layers", c.n_layers},
                {"n_heads", c.n_heads},    {"model_dim", c.model_dim},
                {"ff_dim", c.ff_dim},      {"n_outputs", c.n_outputs},
                {"n_bins", c.n_bins},      {"embedding_dim", c.embedding_dim},
                {"ssl_layers", c.ssl_layers}, {"conv_kernel", c.conv_kernel}};
}

EncoderConfig encoder_config_from_json(const json& j) {
    if (j.value("kind", "") != "encoder")
        throw UserError("checkpoint does not hold an encoder");
    EncoderConfig c;
    c.n_layers = j["n_layers"];
    c.n_heads = j["n_heads"];
    c.model_dim = j["model_dim"];
    c.ff_dim = j["ff_dim"];
    c.frame_shift_ms = j["frame_shift_ms"];
    c.vocab_k = j["vocab_k"];
    c.n_mel = j["n_mel"];
    c.rel_bias_buckets = j["rel_bias_buckets"];
    return c;
}

SeparatorConfig separator_config_from_json(const json& j) {
    if (j.value("kind", "") != "separator")
        throw UserError("checkpoint does not hold a separator");
    SeparatorConfig c;
    c.n_layers = j["n_layers"];
    c.n_heads = j["n_heads"];
    c.model_dim = j["model_dim"];
    c.ff_dim = j["ff_dim"];
    c.n_outputs = j["n_outputs"];
    c.n_bins = j["n_bins"];
    c.embedding_dim = j["embedding_dim"];
    c.ssl_layers = j["ssl_layers"];
    c.conv_kernel = j["conv_kernel"];
    return c;
}

SslEncoder load_encoder(const std::string& path) {
    Checkpoint ckpt = load_checkpoint(path);
    EncoderConfig cfg = encoder_config_from_json(json::parse(ckpt.config_json));
    SslEncoder enc(cfg, 0);
    restore_params(ckpt, enc.named_params());
    enc.train_step = ckpt.step;
    return enc;
}

Separator load_separator(const std::string& path) {
    Checkpoint ckpt = load_checkpoint(path);
    SeparatorConfig cfg = separator_config_from_json(json::parse(ckpt.config_json));
    Separator sep(cfg, 0);
    restore_params(ckpt, sep.named_params());
    return sep;
}

std::string require_out(const std::string& out, const char* what) {
    if (out.empty()) throw UserError(std::string("--out is required for ") + what);
    return out;
}

std::string label_path(const std::string& labels_dir, const std::string& utt_id) {
    return (fs::path(labels_dir) / (utt_id + ".labels")).string();
}

std::vector<int> read_labels(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UserError("cannot open labels: " + path);
    std::vector<int> labels;
    int v;
    while (in >> v) labels.push_back(v);
    return labels;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
    std::string manifest;
    int synth_sources = 0;  // generate a toy source corpus instead
    int n_samples = -1;
};

int cmd_simulate(const RunConfig& cfg, const SimulateArgs& args, const std::string& out) {
    const std::string out_dir = require_out(out, "simulate");
    fs::create_directories(fs::path(out_dir) / "audio");
    std::mt19937_64 rng(cfg.seed());

    std::vector<ManifestEntry> sources;
    if (args.synth_sources > 0) {
        fs::create_directories(fs::path(out_dir) / "sources");
        const double utt_s = cfg.get<double>("simulate.utterance_s", 2.5);
        for (int i = 0; i < args.synth_sources; ++i) {
            const int spk = i % 2;
            AudioBuffer utt = synth_utterance(spk, utt_s, 16000, cfg.seed() * 1000 + i);
            ManifestEntry e;
            e.utterance_id = "synth" + std::to_string(i);
            e.speaker_id = "spk" + std::to_string(spk);
            e.duration_s = utt.duration_s();
            e.wav_path = (fs::path(out_dir) / "sources" / (e.utterance_id + ".wav")).string();
            write_wav(e.wav_path, utt);
            sources.push_back(e);
        }
        write_manifest((fs::path(out_dir) / "sources.tsv").string(), sources);
    } else if (!args.manifest.empty()) {
        sources = read_manifest(args.manifest);
    } else {
        throw UserError("simulate needs --manifest or --synth-sources");
    }
    if (sources.size() < 2) throw UserError("simulate needs at least two source utterances");

    std::vector<std::string> pattern_names =
        cfg.get<std::vector<std::string>>("simulate.patterns",
                                          {"partial_overlap", "full_overlap", "sequential",
                                           "single_speaker"});
    std::vector<MixPattern> patterns;
    for (const auto& p : pattern_names) patterns.push_back(pattern_from_string(p));

    const auto sir_range = cfg.get<std::vector<double>>("simulate.sir_range", {-5.0, 5.0});
    const auto snr_range = cfg.get<std::vector<double>>("simulate.snr_range", {10.0, 30.0});
    const double target_overlap = cfg.get<double>("simulate.target_overlap_ratio", -1.0);
    const bool use_rir = cfg.get<bool>("simulate.use_rir", true);
    const int n_samples = args.n_samples > 0 ? args.n_samples
                                             : cfg.get<int>("simulate.n_samples", 100);
    const auto room_range = cfg.get<std::vector<double>>("simulate.room_size_range", {4.0, 8.0});
    const auto absorb_range =
        cfg.get<std::vector<double>>("simulate.absorption_range", {0.3, 0.7});
    const int max_order = cfg.get<int>("simulate.max_reflection_order", 3);

    std::uniform_real_distribution<double> sir_dist(sir_range.at(0), sir_range.at(1));
    std::uniform_real_distribution<double> snr_dist(snr_range.at(0), snr_range.at(1));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> pick(0, sources.size() - 1);

    std::map<std::string, int> pattern_counts;
    std::vector<double> measured_sirs, measured_snrs;
    int skips = 0;

    for (int i = 0; i < n_samples; ++i) {
        // Pick two utterances from different speakers when possible.
        std::size_t ia = pick(rng), ib = pick(rng);
        for (int tries = 0; tries < 32 && sources[ib].speaker_id == sources[ia].speaker_id;
             ++tries)
            ib = pick(rng);

        AudioBuffer utt_a, utt_b;
        try {
            utt_a = read_wav(sources[ia].wav_path);
            utt_b = read_wav(sources[ib].wav_path);
        } catch (const std::exception& e) {
            std::cerr << "skip sample " << i << ": " << e.what() << "\n";
            ++skips;
            if (skips * 10 > n_samples)
                throw UserError("more than 10% of samples skipped; aborting");
            continue;
        }

        MixtureSpec spec;
        spec.pattern = patterns[static_cast<std::size_t>(unit(rng) * patterns.size()) %
                                patterns.size()];
        spec.sir_db = sir_dist(rng);
        spec.snr_db = snr_dist(rng);
        spec.seed = cfg.seed() * 7919 + static_cast<uint64_t>(i);
        if (target_overlap > 0.0 && spec.pattern == MixPattern::partial_overlap)
            spec.offset_s = offset_for_overlap_ratio(utt_a.duration_s(), utt_b.duration_s(),
                                                     target_overlap);

        std::vector<double> rir_a{1.0}, rir_b{1.0};
        if (use_rir) {
            std::uniform_real_distribution<double> side(room_range.at(0), room_range.at(1));
            std::uniform_real_distribution<double> absorb(absorb_range.at(0),
                                                          absorb_range.at(1));
            RoomSpec room;
            room.dimensions = {side(rng), side(rng), 0.5 * (room_range[0] + room_range[1])};
            room.absorption.fill(absorb(rng));
            room.max_reflection_order = max_order;
            auto pos = [&](double fx, double fy) {
                return Vec3{fx * room.dimensions[0], fy * room.dimensions[1],
                            0.4 * room.dimensions[2]};
            };
            const Vec3 mic = pos(0.5, 0.5);
            rir_a = image_method_rir(room, pos(0.25 + 0.1 * unit(rng), 0.3), mic, 16000);
            rir_b = image_method_rir(room, pos(0.65 + 0.1 * unit(rng), 0.7), mic, 16000);
        }

        // full overlap embeds B inside A, so after reverberation A must be longer
        if (spec.pattern == MixPattern::full_overlap &&
            utt_b.samples.size() + rir_b.size() > utt_a.samples.size() + rir_a.size()) {
            std::swap(utt_a, utt_b);
            std::swap(rir_a, rir_b);
        }

        const AudioBuffer noise =
            white_noise(utt_a.duration_s() + utt_b.duration_s() + 1.0, 1.0, 16000, spec.seed);
        MixtureSample sample = make_mixture(utt_a, utt_b, noise, rir_a, rir_b, spec);

        char stem[32];
        std::snprintf(stem, sizeof(stem), "mix_%05d", i);
        const fs::path base = fs::path(out_dir) / "audio" / stem;
        write_wav(base.string() + ".wav", sample.mixture);
        for (std::size_t r = 0; r < sample.references.size(); ++r)
            write_wav(base.string() + "_ref" + std::to_string(r) + ".wav",
                      sample.references[r]);
        std::ofstream(base.string() + ".json") << mixture_metadata_json(sample) << "\n";

        pattern_counts[to_string(spec.pattern)]++;
        measured_sirs.push_back(spec.sir_db);
        measured_snrs.push_back(spec.snr_db);
    }

    // Summary: pattern counts plus SIR/SNR histograms (1 dB bins).
    auto histogram = [](const std::vector<double>& xs) {
        std::map<int, int> h;
        for (double x : xs) h[static_cast<int>(std::floor(x))]++;
        json out = json::object();
        for (auto [bin, count] : h) out[std::to_string(bin)] = count;
        return out;
    };
    json summary{{"n_requested", n_samples},
                 {"n_written", n_samples - skips},
                 {"skips", skips},
                 {"pattern_counts", pattern_counts},
                 {"sir_histogram_db", histogram(measured_sirs)},
                 {"snr_histogram_db", histogram(measured_snrs)}};
    std::ofstream(fs::path(out_dir) / "summary.json") << summary.dump(2) << "\n";
    std::cout << summary.dump(2) << "\n";
    return 0;
}

// Load simulate output back as training items.
std::vector<TrainItem> load_dataset(const std::string& data_dir) {
    std::vector<TrainItem> items;
    std::vector<fs::path> mixes;
    const fs::path audio_dir = fs::path(data_dir) / "audio";
    if (!fs::is_directory(audio_dir)) throw UserError("no audio/ under " + data_dir);
    for (const auto& ent : fs::directory_iterator(audio_dir)) {
        const std::string name = ent.path().filename().string();
        if (name.size() > 4 && name.ends_with(".wav") && name.find("_ref") == std::string::npos)
            mixes.push_back(ent.path());
    }
    std::sort(mixes.begin(), mixes.end());
    for (const auto& mix : mixes) {
        TrainItem item;
        item.mixture = read_wav(mix.string());
        std::string stem = mix.string();
        stem.resize(stem.size() - 4);
        for (int r = 0;; ++r) {
            const std::string ref = stem + "_ref" + std::to_string(r) + ".wav";
            if (!fs::exists(ref)) break;
            item.references.push_back(read_wav(ref));
        }
        if (item.references.empty())
            throw UserError("no reference stems next to " + mix.string());
        items.push_back(std::move(item));
    }
    if (items.empty()) throw UserError("no mixtures found in " + data_dir);
    return items;
}

// ---------------------------------------------------------------------------
// tokenize / pretrain

int cmd_tokenize(const RunConfig& cfg, const std::string& manifest_path,
                 const std::string& out) {
    const std::string out_dir = require_out(out, "tokenize");
    fs::create_directories(out_dir);
    const auto manifest = read_manifest(manifest_path);
    if (manifest.empty()) throw UserError("empty manifest: " + manifest_path);
    const EncoderConfig ec = encoder_from_config(cfg);

    std::vector<RealMatrix> feats;
    Eigen::Index total = 0;
    for (const auto& e : manifest) {
        feats.push_back(base_features(read_wav(e.wav_path), ec.frame_shift_ms, ec.n_mel));
        total += feats.back().rows();
    }
    RealMatrix all(total, ec.n_mel);
    Eigen::Index row = 0;
    for (const auto& f : feats) {
        all.middleRows(row, f.rows()) = f;
        row += f.rows();
    }

    KMeans km;
    km.fit(all, ec.vocab_k, 25, cfg.seed());
    std::ofstream(fs::path(out_dir) / "tokenizer.txt")
        << "k " << ec.vocab_k << "\nhash " << km.hash() << "\ndistortion "
        << km.distortion(all) << "\n";

    for (std::size_t i = 0; i < manifest.size(); ++i) {
        const auto labels = km.predict(feats[i]);
        std::ofstream lf(label_path(out_dir, manifest[i].utterance_id));
        for (int l : labels) lf << l << "\n";
    }
    std::cout << "tokenized " << manifest.size() << " utterances, k=" << ec.vocab_k
              << ", tokenizer hash " << km.hash() << "\n";
    return 0;
}

int cmd_pretrain(const RunConfig& cfg, const std::string& manifest_path,
                 const std::string& labels_dir, const std::string& out) {
    const std::string out_path = require_out(out, "pretrain");
    const auto manifest = read_manifest(manifest_path);
    if (manifest.empty()) throw UserError("empty manifest: " + manifest_path);

    std::vector<PretrainItem> corpus;
    for (const auto& e : manifest) {
        PretrainItem item;
        item.utterance_id = e.utterance_id;
        item.audio = read_wav(e.wav_path);
        item.labels = read_labels(label_path(labels_dir, e.utterance_id));
        corpus.push_back(std::move(item));
    }

    const EncoderConfig ec = encoder_from_config(cfg);
    SslEncoder encoder(ec, cfg.seed());
    PretrainConfig hyper;
    hyper.steps = cfg.get<int>("pretrain.steps", hyper.steps);
    hyper.lr = cfg.get<double>("pretrain.lr", hyper.lr);
    hyper.mask_prob = cfg.get<double>("pretrain.mask_prob", hyper.mask_prob);
    hyper.span_len = cfg.get<int>("pretrain.span_len", hyper.span_len);
    hyper.mix_prob = cfg.get<double>("pretrain.mix_prob", hyper.mix_prob);
    hyper.mix_ratio_db = cfg.get<double>("pretrain.mix_ratio_db", hyper.mix_ratio_db);
    hyper.seed = cfg.seed();

    PretrainResult res = msp_pretrain(encoder, corpus, hyper);
    save_checkpoint(out_path, snapshot_params(encoder_config_json(ec).dump(), encoder.train_step,
                                              encoder.named_params()));
    std::cout << "pretrained " << hyper.steps << " steps; final loss "
              << res.loss_history.back() << ", masked accuracy "
              << res.masked_accuracy_history.back() << "\n"
              << "saved " << out_path << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train / separate / css

std::vector<TrainStage> stages_from_config(const RunConfig& cfg) {
    std::vector<TrainStage> stages;
    const json& doc = cfg.doc();
    if (doc.contains("train") && doc["train"].contains("stages")) {
        for (const auto& st : doc["train"]["stages"]) {
            TrainStage s;
            s.name = st.value("name", "stage");
            s.learning_rate = st.value("learning_rate", 1e-3);
            s.steps = st.value("steps", 100);
            s.ssl_trainable = st.value("ssl_trainable", false);
            stages.push_back(s);
        }
    } else {
        stages.push_back({"warmup", 1e-3, 200, false});
        stages.push_back({"frozen_ssl", 5e-4, 200, false});
        stages.push_back({"unfrozen_ssl", 2e-4, 100, true});
    }
    return stages;
}

int cmd_train(const RunConfig& cfg, const std::string& data_dir,
              const std::string& encoder_ckpt, const std::string& out) {
    const std::string out_path = require_out(out, "train");
    auto items = load_dataset(data_dir);
    // Hold out every 5th item for model selection.
    std::vector<TrainItem> data, dev;
    for (std::size_t i = 0; i < items.size(); ++i)
        (i % 5 == 4 ? dev : data).push_back(std::move(items[i]));
    if (dev.empty()) dev.push_back(data.back());

    SslEncoder encoder;
    SslEncoder* enc_ptr = nullptr;
    SeparatorConfig sc = separator_from_config(cfg);
    if (!encoder_ckpt.empty()) {
        encoder = load_encoder(encoder_ckpt);
        enc_ptr = &encoder;
        if (sc.embedding_dim == 0) {
            sc.embedding_dim = encoder.config().model_dim;
            sc.ssl_layers = encoder.config().n_layers;
        }
    }
    sc.check();

    Separator model(sc, cfg.seed());
    TrainOptions opts;
    opts.seed = cfg.seed();
    opts.window_len = cfg.get<int>("signal.window_len", 512);
    opts.hop = cfg.get<int>("signal.hop", 160);
    TrainResult res = train(model, enc_ptr, stages_from_config(cfg), data, dev, opts);

    save_checkpoint(out_path, snapshot_params(separator_config_json(sc).dump(),
                                              res.log.empty() ? 0 : res.log.back().step,
                                              model.named_params()));
    if (enc_ptr) {
        const std::string enc_out = out_path + ".encoder";
        save_checkpoint(enc_out,
                        snapshot_params(encoder_config_json(encoder.config()).dump(),
                                        encoder.train_step, encoder.named_params()));
        std::cout << "saved " << enc_out << "\n";
    }
    std::cout << "trained " << data.size() << " items, best dev loss " << res.best_dev_loss
              << "\nsaved " << out_path << "\n";
    return 0;
}

int cmd_separate(const RunConfig& cfg, const std::string& model_path,
                 const std::string& encoder_path, const std::string& input,
                 const std::string& out) {
    const std::string out_dir = require_out(out, "separate");
    fs::create_directories(out_dir);
    Separator model = load_separator(model_path);
    SslEncoder encoder;
    SslEncoder* enc_ptr = nullptr;
    if (!encoder_path.empty()) {
        encoder = load_encoder(encoder_path);
        enc_ptr = &encoder;
    } else if (model.config().embedding_dim > 0) {
        throw UserError("model expects SSL embeddings; pass --encoder");
    }
    const AudioBuffer audio = read_wav(input);
    auto outs = separate_utterance(model, enc_ptr, audio,
                                   cfg.get<int>("signal.window_len", 512),
                                   cfg.get<int>("signal.hop", 160));
    for (std::size_t i = 0; i < outs.size(); ++i)
        write_wav((fs::path(out_dir) / ("stream" + std::to_string(i) + ".wav")).string(),
                  outs[i]);
    std::cout << "wrote " << outs.size() << " streams to " << out_dir << "\n";
    return 0;
}

int cmd_css(const RunConfig& cfg, const std::string& model_path,
            const std::string& encoder_path, const std::string& input,
            const std::string& out) {
    const std::string out_dir = require_out(out, "css");
    fs::create_directories(out_dir);
    Separator model = load_separator(model_path);
    SslEncoder encoder;
    SslEncoder* enc_ptr = nullptr;
    if (!encoder_path.empty()) {
        encoder = load_encoder(encoder_path);
        enc_ptr = &encoder;
    } else if (model.config().embedding_dim > 0) {
        throw UserError("model expects SSL embeddings; pass --encoder");
    }
    CssParams params;
    params.t_h = cfg.get<double>("css.t_h", params.t_h);
    params.t_c = cfg.get<double>("css.t_c", params.t_c);
    params.t_f = cfg.get<double>("css.t_f", params.t_f);
    params.merge_window_s = cfg.get<double>("css.merge_window_s", params.merge_window_s);
    params.merge_ratio_db = cfg.get<double>("css.merge_ratio_db", params.merge_ratio_db);
    params.apply_agc = cfg.get<bool>("css.apply_agc", params.apply_agc);
    params.apply_merger = cfg.get<bool>("css.apply_merger", params.apply_merger);

    CssReport report;
    const AudioBuffer audio = read_wav(input);
    auto streams = css_run(model, enc_ptr, audio, params, &report);
    for (std::size_t i = 0; i < streams.size(); ++i)
        write_wav((fs::path(out_dir) / ("stream" + std::to_string(i) + ".wav")).string(),
                  streams[i]);
    std::ofstream(fs::path(out_dir) / "report.json") << report.to_json() << "\n";
    std::cout << report.to_json() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// score / bench

int cmd_score(const std::string& hyp_path, const std::string& ref_path,
              const std::string& mode) {
    const auto hyps = read_transcripts(hyp_path);
    const auto refs = read_transcripts(ref_path);
    if (hyps.empty() || refs.empty()) throw UserError("empty transcript file");
    WERReport report;
    if (mode == "wer") {
        if (hyps.size() != 1 || refs.size() != 1)
            throw UserError("mode wer expects exactly one stream per file");
        report = wer(hyps[0], refs[0]);
    } else if (mode == "perm") {
        report = best_permutation_wer(hyps, refs);
    } else if (mode == "agnostic") {
        report = speaker_agnostic_wer(hyps, refs);
    } else {
        throw UserError("unknown score mode: " + mode + " (wer|perm|agnostic)");
    }
    std::cout << format_report(report);
    return 0;
}

int cmd_bench(const RunConfig& cfg, const std::string& out) {
    const int runs = cfg.get<int>("bench.runs", 20);
    const AudioBuffer probe = make_probe(cfg.get<double>("bench.probe_s", kRtfProbeSeconds),
                                         16000, cfg.seed());
    const double dim_scale = cfg.get<double>("separator.dim_scale", 0.125);

    std::vector<SweepConfig> sweep;
    // Encoder depth sweep at a fixed small dim: the inference-cost story.
    for (int layers : {12, 8, 6, 4, 2}) {
        EncoderConfig ec = encoder_preset("Base", 0.125);
        ec.n_layers = layers;
        SweepConfig sc;
        sc.name = "enc-L" + std::to_string(layers);
        sc.params = [ec] { return count_params(ec); };
        sc.make_pipeline = [ec, seed = cfg.seed()](const AudioBuffer& p) {
            auto enc = std::make_shared<SslEncoder>(ec, seed);
            return std::function<void()>(
                [enc, p] { enc->encode_layers(p, enc->config().n_layers); });
        };
        sweep.push_back(std::move(sc));
    }
    // Frame-shift sweep.
    for (int shift : {20, 30, 40}) {
        EncoderConfig ec = encoder_preset("Base", 0.125);
        ec.frame_shift_ms = shift;
        SweepConfig sc;
        sc.name = "enc-shift" + std::to_string(shift) + "ms";
        sc.params = [ec] { return count_params(ec); };
        sc.make_pipeline = [ec, seed = cfg.seed()](const AudioBuffer& p) {
            auto enc = std::make_shared<SslEncoder>(ec, seed);
            return std::function<void()>(
                [enc, p] { enc->encode_layers(p, enc->config().n_layers); });
        };
        sweep.push_back(std::move(sc));
    }
    // Separator size sweep.
    for (const char* preset : {"SS-9.5", "SS-26", "SS-59"}) {
        SeparatorConfig pc = separator_preset(preset, dim_scale);
        SweepConfig sc;
        sc.name = preset;
        sc.params = [pc] { return count_params(pc); };
        sc.make_pipeline = [pc, seed = cfg.seed()](const AudioBuffer& p) {
            auto model = std::make_shared<Separator>(pc, seed);
            return std::function<void()>(
                [model, p] { separate_utterance(*model, nullptr, p); });
        };
        sweep.push_back(std::move(sc));
    }

    auto entries = cost_sweep(sweep, probe, runs);
    const std::string text = format_sweep(entries);
    std::cout << text;
    if (!out.empty()) {
        fs::create_directories(out);
        std::ofstream(fs::path(out) / "bench.txt") << text;
        json rows = json::array();
        for (const auto& e : entries)
            rows.push_back({{"name", e.name}, {"params", e.params}, {"rtf", e.rtf}});
        std::ofstream(fs::path(out) / "bench.json") << rows.dump(2) << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cssep: continuous speech separation pipeline"};
    app.require_subcommand(1);

    std::string config_path, out;
    uint64_t seed_override = 0;
    bool seed_set = false, dry_run = false;
    app.add_option("--config", config_path, "run configuration file (JSON)");
    app.add_option("--seed", seed_override, "override the configured seed")
        ->each([&](const std::string&) { seed_set = true; });
    app.add_option("--out", out, "output file or directory");
    app.add_flag("--dry-run", dry_run, "validate config and arguments, no compute");

    SimulateArgs sim_args;
    auto* sim = app.add_subcommand("simulate", "generate overlapped mixtures");
    sim->add_option("--manifest", sim_args.manifest, "source utterance manifest (TSV)");
    sim->add_option("--synth-sources", sim_args.synth_sources,
                    "generate N toy source utterances instead of a manifest");
    sim->add_option("-n,--n-samples", sim_args.n_samples, "number of mixtures");

    std::string manifest_path, labels_dir;
    auto* tok = app.add_subcommand("tokenize", "k-means pseudo-labels for a corpus");
    tok->add_option("--manifest", manifest_path, "utterance manifest (TSV)")->required();

    auto* pre = app.add_subcommand("pretrain", "masked-prediction encoder pretraining");
    pre->add_option("--manifest", manifest_path, "utterance manifest (TSV)")->required();
    pre->add_option("--labels", labels_dir, "directory of .labels files")->required();

    std::string data_dir, encoder_ckpt, model_ckpt, input_wav;
    auto* trn = app.add_subcommand("train", "fine-tune the separator");
    trn->add_option("--data", data_dir, "simulate output directory")->required();
    trn->add_option("--encoder", encoder_ckpt, "pretrained encoder checkpoint");

    auto* sep = app.add_subcommand("separate", "separate one utterance");
    sep->add_option("--model", model_ckpt, "separator checkpoint")->required();
    sep->add_option("--encoder", encoder_ckpt, "encoder checkpoint");
    sep->add_option("input", input_wav, "input WAV")->required();

    auto* css = app.add_subcommand("css", "continuous separation of a long recording");
    css->add_option("--model", model_ckpt, "separator checkpoint")->required();
    css->add_option("--encoder", encoder_ckpt, "encoder checkpoint");
    css->add_option("input", input_wav, "input WAV")->required();

    std::string hyp_path, ref_path, score_mode = "agnostic";
    auto* sco = app.add_subcommand("score", "transcript scoring");
    sco->add_option("--hyp", hyp_path, "hypothesis transcripts")->required();
    sco->add_option("--ref", ref_path, "reference transcripts")->required();
    sco->add_option("--mode", score_mode, "wer | perm | agnostic");

    auto* ben = app.add_subcommand("bench", "inference cost sweep");

    // Let --config/--seed/--out/--dry-run appear after the subcommand too.
    for (auto* sub : {sim, tok, pre, trn, sep, css, sco, ben}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        RunConfig cfg =
            config_path.empty() ? RunConfig::defaults() : RunConfig::load(config_path);
        if (seed_set) cfg.set_seed(seed_override);
        if (out.empty()) out = cfg.get<std::string>("paths.out_dir", "");
        if (sim_args.manifest.empty())
            sim_args.manifest = cfg.get<std::string>("paths.manifest", "");

        if (dry_run) {
            std::cout << "config ok (seed " << cfg.seed() << ")\n";
            return 0;
        }

        if (sim->parsed()) return cmd_simulate(cfg, sim_args, out);
        if (tok->parsed()) return cmd_tokenize(cfg, manifest_path, out);
        if (pre->parsed()) return cmd_pretrain(cfg, manifest_path, labels_dir, out);
        if (trn->parsed()) return cmd_train(cfg, data_dir, encoder_ckpt, out);
        if (sep->parsed()) return cmd_separate(cfg, model_ckpt, encoder_ckpt, input_wav, out);
        if (css->parsed()) return cmd_css(cfg, model_ckpt, encoder_ckpt, input_wav, out);
        if (sco->parsed()) return cmd_score(hyp_path, ref_path, score_mode);
        if (ben->parsed()) return cmd_bench(cfg, out);
        return 1;
    } catch (const UserError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
}
