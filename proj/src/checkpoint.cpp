#include "cssep/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

namespace cssep {

namespace {

constexpr char kMagic[8] = {'C', 'S', 'S', 'E', 'P', 'C', 'K', '1'};

template <typename T>
void write_le(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kMagic, 8);
    write_le<uint32_t>(out, 1);  // format version
    write_le<uint32_t>(out, static_cast<uint32_t>(ckpt.config_json.size()));
    out.write(ckpt.config_json.data(), ckpt.config_json.size());
    write_le<int64_t>(out, ckpt.step);
    write_le<uint32_t>(out, static_cast<uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, mat] : ckpt.tensors) {
        write_le<uint32_t>(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), name.size());
        write_le<uint32_t>(out, static_cast<uint32_t>(mat.rows()));
        write_le<uint32_t>(out, static_cast<uint32_t>(mat.cols()));
        for (Eigen::Index i = 0; i < mat.size(); ++i)
            write_le<float>(out, static_cast<float>(mat.data()[i]));
    }
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("not a checkpoint file: " + path);
    uint32_t version = read_le<uint32_t>(in);
    if (version != 1)
        throw std::runtime_error("unsupported checkpoint version: " + std::to_string(version));

    Checkpoint ckpt;
    uint32_t clen = read_le<uint32_t>(in);
    ckpt.config_json.resize(clen);
    in.read(ckpt.config_json.data(), clen);
    ckpt.step = static_cast<long>(read_le<int64_t>(in));
    uint32_t n = read_le<uint32_t>(in);
    for (uint32_t i = 0; i < n; ++i) {
        uint32_t nlen = read_le<uint32_t>(in);
        std::string name(nlen, '\0');
        in.read(name.data(), nlen);
        uint32_t rows = read_le<uint32_t>(in), cols = read_le<uint32_t>(in);
        ad::Mat m(rows, cols);
        for (Eigen::Index j = 0; j < m.size(); ++j) m.data()[j] = read_le<float>(in);
        ckpt.tensors.emplace_back(std::move(name), std::move(m));
    }
    return ckpt;
}

void restore_params(const Checkpoint& ckpt,
                    const std::vector<std::pair<std::string, ad::Var>>& params) {
    std::map<std::string, const ad::Mat*> by_name;
    for (const auto& [name, mat] : ckpt.tensors) by_name[name] = &mat;
    for (const auto& [name, p] : params) {
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw std::runtime_error("checkpoint missing tensor: " + name);
        if (it->second->rows() != p->val.rows() || it->second->cols() != p->val.cols())
            throw std::runtime_error("checkpoint shape mismatch for tensor: " + name);
        p->val = *it->second;
    }
}

Checkpoint snapshot_params(const std::string& config_json, long step,
                           const std::vector<std::pair<std::string, ad::Var>>& params) {
    Checkpoint ckpt;
    ckpt.config_json = config_json;
    ckpt.step = step;
    for (const auto& [name, p] : params) ckpt.tensors.emplace_back(name, p->val);
    return ckpt;
}

}  // namespace cssep
