#pragma once

// Binary checkpoint format (all integers little-endian):
//
//   "DUCC"                      4 bytes magic
//   u32 version                 currently 1
//   u32 tag_len, tag bytes      variant tag, see variant_tag()
//   u32 tensor_count
//   per tensor:
//     u32 name_len, name bytes
//     u32 rank, u32 dims[rank]
//     f32 payload[prod(dims)]
//   u64 training seed           trailer
//   u32 epoch reached           trailer

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cracknet/errors.hpp"
#include "cracknet/graph.hpp"
#include "cracknet/models.hpp"
#include "cracknet/tensor.hpp"

namespace cracknet {

inline constexpr char kCheckpointMagic[4] = {'D', 'U', 'C', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    Tensor<float> value;
};

struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    std::string variant_tag;
    std::vector<NamedTensor> tensors;
    std::uint64_t seed = 0;
    std::uint32_t epoch = 0;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_str(std::string& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out += s;
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : b_(bytes) {}

    void need(std::size_t n) const {
        if (pos_ + n > b_.size()) throw CheckpointError("truncated checkpoint at byte " + std::to_string(pos_));
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s = b_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::string raw(std::size_t n) {
        need(n);
        std::string s = b_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool at_end() const { return pos_ == b_.size(); }

private:
    const std::string& b_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
    std::string out(kCheckpointMagic, 4);
    detail::put_u32(out, ck.version);
    detail::put_str(out, ck.variant_tag);
    detail::put_u32(out, static_cast<std::uint32_t>(ck.tensors.size()));
    for (const auto& t : ck.tensors) {
        detail::put_str(out, t.name);
        detail::put_u32(out, static_cast<std::uint32_t>(t.value.rank()));
        for (std::size_t d : t.value.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
        for (float f : t.value.data()) detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
    }
    detail::put_u64(out, ck.seed);
    detail::put_u32(out, ck.epoch);
    return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
    detail::Reader r(bytes);
    if (r.raw(4) != std::string(kCheckpointMagic, 4)) throw CheckpointError("bad magic, not a checkpoint");
    Checkpoint ck;
    ck.version = r.u32();
    if (ck.version != kCheckpointVersion) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(ck.version));
    }
    ck.variant_tag = r.str();
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        t.name = r.str();
        const std::uint32_t rank = r.u32();
        if (rank == 0 || rank > 8) throw CheckpointError("tensor '" + t.name + "' has invalid rank");
        Shape shape(rank);
        for (auto& d : shape) {
            d = r.u32();
            if (d == 0) throw CheckpointError("tensor '" + t.name + "' has a zero dimension");
        }
        const std::size_t n = shape_volume(shape);
        r.need(4 * n);
        std::vector<float> data(n);
        for (auto& f : data) f = std::bit_cast<float>(r.u32());
        t.value = Tensor<float>(std::move(shape), std::move(data));
        ck.tensors.push_back(std::move(t));
    }
    ck.seed = r.u64();
    ck.epoch = r.u32();
    if (!r.at_end()) throw CheckpointError("trailing bytes after checkpoint");
    return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write checkpoint " + path.string());
    const std::string bytes = encode_checkpoint(ck);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed for checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

inline Checkpoint make_checkpoint(const LayerGraph<float>& g, const std::string& variant_tag, std::uint64_t seed,
                                  std::uint32_t epoch) {
    Checkpoint ck;
    ck.variant_tag = variant_tag;
    ck.seed = seed;
    ck.epoch = epoch;
    for (const auto& p : g.parameters()) ck.tensors.push_back({p.name, *p.value});
    return ck;
}

// Copies checkpoint tensors into a graph whose parameter list must match by
// name, order and shape.
inline void apply_checkpoint(LayerGraph<float>& g, const Checkpoint& ck) {
    auto params = g.parameters();
    if (params.size() != ck.tensors.size()) {
        throw CheckpointError("checkpoint has " + std::to_string(ck.tensors.size()) + " tensors, graph expects " +
                              std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& t = ck.tensors[i];
        if (t.name != params[i].name || t.value.shape() != params[i].value->shape()) {
            throw CheckpointError("checkpoint tensor '" + t.name + "' " + shape_str(t.value.shape()) +
                                  " does not match graph parameter '" + params[i].name + "' " +
                                  shape_str(params[i].value->shape()));
        }
    }
    for (std::size_t i = 0; i < params.size(); ++i) *params[i].value = ck.tensors[i].value;
}

struct RestoredModel {
    ModelVariant variant;
    ModelGeometry geometry;
    LayerGraph<float> graph;
};

inline RestoredModel restore_model(const Checkpoint& ck) {
    auto [v, geo] = parse_variant_tag(ck.variant_tag);
    RestoredModel m{v, geo, build_variant<float>(v, geo)};
    apply_checkpoint(m.graph, ck);
    return m;
}

}  // namespace cracknet
