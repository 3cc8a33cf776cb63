#pragma once

#include <fstream>

#include "revdeblur/model.hpp"

// Checkpoint container: magic, format version, then named tensors
// (name length, UTF-8 name, dtype tag, rank, dims, little-endian payload).
// Round trips are bit-exact.
namespace rvd {

inline constexpr char kCheckpointMagic[8] = {'R', 'V', 'D', 'C', 'K', 'P', 'T', '\0'};
inline constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

inline void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

template <class S>
constexpr uint8_t dtype_tag() {
    static_assert(sizeof(S) == 4 || sizeof(S) == 8, "unsupported scalar type");
    return sizeof(S) == 4 ? 0 : 1;
}

}  // namespace detail

template <class S>
using NamedTensors = std::vector<std::pair<std::string, Tensor<S>>>;

template <class S>
void save_checkpoint(const std::string& path, const NamedTensors<S>& tensors) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    os.write(kCheckpointMagic, 8);
    detail::write_u32(os, kCheckpointVersion);
    detail::write_u32(os, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        detail::write_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        uint8_t tag = detail::dtype_tag<S>();
        os.write(reinterpret_cast<const char*>(&tag), 1);
        uint8_t rank = 4;
        os.write(reinterpret_cast<const char*>(&rank), 1);
        const auto& sh = t.shape();
        for (int64_t d : {sh.b, sh.c, sh.h, sh.w}) detail::write_u32(os, static_cast<uint32_t>(d));
        os.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.bytes()));
    }
    if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

template <class S>
NamedTensors<S> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw std::runtime_error("not a checkpoint file: " + path);
    uint32_t version = detail::read_u32(is);
    if (version != kCheckpointVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    uint32_t count = detail::read_u32(is);
    NamedTensors<S> out;
    out.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t len = detail::read_u32(is);
        std::string name(len, '\0');
        is.read(name.data(), len);
        uint8_t tag = 0, rank = 0;
        is.read(reinterpret_cast<char*>(&tag), 1);
        is.read(reinterpret_cast<char*>(&rank), 1);
        if (tag != detail::dtype_tag<S>())
            throw std::runtime_error("checkpoint dtype mismatch for tensor '" + name + "'");
        if (rank != 4) throw std::runtime_error("unsupported tensor rank in checkpoint");
        int64_t dims[4];
        for (auto& d : dims) d = detail::read_u32(is);
        Tensor<S> t(Shape4(dims[0], dims[1], dims[2], dims[3]));
        is.read(reinterpret_cast<char*>(t.mut()), static_cast<std::streamsize>(t.bytes()));
        if (!is) throw std::runtime_error("truncated checkpoint: " + path);
        out.emplace_back(std::move(name), std::move(t));
    }
    return out;
}

// ---- model <-> checkpoint ----

template <class S>
NamedTensors<S> model_to_tensors(const Model<S>& m) {
    NamedTensors<S> out;
    const auto& cfg = m.cfg;
    auto meta = [&](const std::string& name, double v) {
        out.emplace_back("meta." + name, Tensor<S>::scalar(static_cast<S>(v)));
    };
    meta("base_channels", static_cast<double>(cfg.base_channels));
    meta("levels", cfg.levels);
    meta("columns", cfg.columns);
    meta("num_classes", cfg.num_classes);
    meta("alpha_min", cfg.alpha_min);
    Tensor<S> blocks(Shape4(1, static_cast<int64_t>(cfg.enc_blocks.size()), 1, 1));
    for (size_t i = 0; i < cfg.enc_blocks.size(); ++i) blocks.mut()[i] = static_cast<S>(cfg.enc_blocks[i]);
    out.emplace_back("meta.enc_blocks", std::move(blocks));
    for (const auto* p : const_cast<Model<S>&>(m).params.all()) out.emplace_back(p->name, p->value);
    return out;
}

template <class S>
void save_model(const std::string& path, const Model<S>& m) {
    save_checkpoint(path, model_to_tensors(m));
}

template <class S>
std::unique_ptr<Model<S>> load_model(const std::string& path) {
    NamedTensors<S> tensors = load_checkpoint<S>(path);
    std::map<std::string, Tensor<S>> by_name;
    for (auto& [n, t] : tensors) by_name.emplace(n, std::move(t));

    auto meta = [&](const std::string& name) {
        auto it = by_name.find("meta." + name);
        if (it == by_name.end()) throw std::runtime_error("checkpoint missing meta." + name);
        return static_cast<double>(it->second.ptr()[0]);
    };
    ModelConfig cfg;
    cfg.base_channels = static_cast<int64_t>(meta("base_channels"));
    cfg.levels = static_cast<int>(meta("levels"));
    cfg.columns = static_cast<int>(meta("columns"));
    cfg.num_classes = static_cast<int>(meta("num_classes"));
    cfg.alpha_min = meta("alpha_min");
    auto it = by_name.find("meta.enc_blocks");
    if (it == by_name.end()) throw std::runtime_error("checkpoint missing meta.enc_blocks");
    cfg.enc_blocks.clear();
    for (int64_t i = 0; i < it->second.numel(); ++i)
        cfg.enc_blocks.push_back(static_cast<int>(it->second.ptr()[i]));

    auto m = Model<S>::create(cfg, 0);
    for (auto* p : m->params.all()) {
        auto f = by_name.find(p->name);
        if (f == by_name.end()) throw std::runtime_error("checkpoint missing tensor '" + p->name + "'");
        if (f->second.shape() != p->value.shape())
            throw std::runtime_error("checkpoint tensor '" + p->name + "' has shape " +
                                     f->second.shape().str() + ", expected " + p->value.shape().str());
        p->value = f->second.clone();
    }
    return m;
}

}  // namespace rvd
