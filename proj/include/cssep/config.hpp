#pragma once

#include <string>

#include <json.hpp>

namespace cssep {

// Run configuration document. Unknown keys anywhere are rejected with a
// field-precise diagnostic; every accessor has a documented default.
class RunConfig {
public:
    static RunConfig defaults();
    static RunConfig from_json(const nlohmann::json& doc);
    static RunConfig load(const std::string& path);

    const nlohmann::json& doc() const { return doc_; }

    uint64_t seed() const;
    void set_seed(uint64_t seed);

    // dotted path lookup with default, e.g. get("css.t_h", 0.7)
    template <typename T>
    T get(const std::string& dotted, T fallback) const {
        const nlohmann::json* cur = &doc_;
        std::size_t start = 0;
        while (true) {
            std::size_t dot = dotted.find('.', start);
            std::string key = dotted.substr(start, dot - start);
            if (!cur->contains(key)) return fallback;
            cur = &(*cur)[key];
            if (dot == std::string::npos) break;
            start = dot + 1;
        }
        return cur->get<T>();
    }

private:
    nlohmann::json doc_;
};

}  // namespace cssep
