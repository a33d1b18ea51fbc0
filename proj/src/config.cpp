#include "cssep/config.hpp"

#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

namespace cssep {

namespace {

using nlohmann::json;

const std::map<std::string, std::set<std::string>>& schema() {
    static const std::map<std::string, std::set<std::string>> s = {
        {"", {"version", "seed", "signal", "simulate", "encoder", "separator", "train",
              "pretrain", "css", "bench", "paths"}},
        {"signal", {"window_len", "hop", "sample_rate"}},
        {"simulate", {"n_samples", "patterns", "sir_range", "snr_range", "utterance_s",
                      "target_overlap_ratio", "room_size_range", "absorption_range",
                      "max_reflection_order", "use_rir"}},
        {"encoder", {"preset", "dim_scale", "n_layers", "n_heads", "model_dim", "ff_dim",
                     "frame_shift_ms", "vocab_k", "n_mel"}},
        {"separator", {"preset", "dim_scale", "n_layers", "n_heads", "model_dim", "ff_dim",
                       "n_outputs", "n_bins", "embedding_dim", "ssl_layers"}},
        {"train", {"stages"}},
        {"pretrain", {"steps", "lr", "mask_prob", "span_len", "mix_prob", "mix_ratio_db"}},
        {"css", {"t_h", "t_c", "t_f", "merge_window_s", "merge_ratio_db", "apply_agc",
                 "apply_merger"}},
        {"bench", {"runs", "probe_s"}},
        {"paths", {"out_dir", "manifest", "noise_dir"}},
    };
    return s;
}

void check_keys(const json& node, const std::string& section) {
    if (!node.is_object()) return;
    auto it = schema().find(section);
    if (it == schema().end()) return;
    for (const auto& [key, value] : node.items()) {
        if (!it->second.count(key))
            throw std::invalid_argument("config: unknown key '" +
                                        (section.empty() ? key : section + "." + key) + "'");
        if (schema().count(key)) check_keys(value, key);
    }
}

}  // namespace

RunConfig RunConfig::defaults() {
    RunConfig cfg;
    return from_json(json{{"version", 1}, {"seed", 1}});
}

RunConfig RunConfig::from_json(const nlohmann::json& doc) {
    check_keys(doc, "");
    if (doc.contains("version") && doc["version"].get<int>() != 1)
        throw std::invalid_argument("config: unsupported version");
    if (doc.contains("train") && doc["train"].contains("stages")) {
        for (const auto& st : doc["train"]["stages"])
            for (const auto& [key, value] : st.items())
                if (key != "name" && key != "learning_rate" && key != "steps" &&
                    key != "ssl_trainable")
                    throw std::invalid_argument("config: unknown key 'train.stages." + key + "'");
    }
    RunConfig cfg;
    cfg.doc_ = doc;
    return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::parse_error& e) {
        throw std::runtime_error("config parse error in " + path + ": " + e.what());
    }
    return from_json(doc);
}

uint64_t RunConfig::seed() const { return get<uint64_t>("seed", 1); }

void RunConfig::set_seed(uint64_t seed) { doc_["seed"] = seed; }

}  // namespace cssep
