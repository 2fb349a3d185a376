#pragma once

// Builders for the single-channel network (SCNN), the dual-channel network
// (DuCCNet) and the ablation variants between them, plus parameter
// accounting and feature-map taps.

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cracknet/errors.hpp"
#include "cracknet/graph.hpp"

namespace cracknet {

enum class ModelVariant { Model1, Model2_SCNN, Model3, Model4, DuCCNet };

inline constexpr std::array<ModelVariant, 5> kAllVariants{ModelVariant::Model1, ModelVariant::Model2_SCNN,
                                                          ModelVariant::Model3, ModelVariant::Model4,
                                                          ModelVariant::DuCCNet};

struct VariantFlags {
    bool channel2;
    bool skip_connection;
    bool conv_block7;
    friend bool operator==(const VariantFlags&, const VariantFlags&) = default;
};

// The ablation matrix.
inline VariantFlags flags_of(ModelVariant v) {
    switch (v) {
        case ModelVariant::Model1: return {false, false, false};
        case ModelVariant::Model2_SCNN: return {false, false, true};
        case ModelVariant::Model3: return {true, true, false};
        case ModelVariant::Model4: return {true, false, true};
        case ModelVariant::DuCCNet: return {true, true, true};
    }
    return {false, false, false};
}

inline std::string variant_name(ModelVariant v) {
    switch (v) {
        case ModelVariant::Model1: return "model1";
        case ModelVariant::Model2_SCNN: return "model2";
        case ModelVariant::Model3: return "model3";
        case ModelVariant::Model4: return "model4";
        case ModelVariant::DuCCNet: return "duccnet";
    }
    return "?";
}

inline std::string variant_display_name(ModelVariant v) {
    switch (v) {
        case ModelVariant::Model1: return "Model 1";
        case ModelVariant::Model2_SCNN: return "Model 2 (SCNN)";
        case ModelVariant::Model3: return "Model 3";
        case ModelVariant::Model4: return "Model 4";
        case ModelVariant::DuCCNet: return "DuCCNet";
    }
    return "?";
}

inline ModelVariant parse_variant(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (s == "model1" || s == "1") return ModelVariant::Model1;
    if (s == "model2" || s == "2" || s == "scnn") return ModelVariant::Model2_SCNN;
    if (s == "model3" || s == "3") return ModelVariant::Model3;
    if (s == "model4" || s == "4") return ModelVariant::Model4;
    if (s == "duccnet" || s == "5") return ModelVariant::DuCCNet;
    throw ConfigError("unknown model variant '" + s + "' (expected model1..model4, scnn or duccnet)");
}

// Reference values published for the two headline networks and the ablation
// accuracies. They are printed for comparison only.
inline std::optional<std::uint64_t> reference_trainable_params(ModelVariant v) {
    if (v == ModelVariant::Model2_SCNN) return 159201;
    if (v == ModelVariant::DuCCNet) return 233441;
    return std::nullopt;
}

inline double reference_accuracy(ModelVariant v) {
    switch (v) {
        case ModelVariant::Model1: return 79.75;
        case ModelVariant::Model2_SCNN: return 82.50;
        case ModelVariant::Model3: return 85.75;
        case ModelVariant::Model4: return 89.00;
        case ModelVariant::DuCCNet: return 92.25;
    }
    return 0.0;
}

// Input resolution and width. The defaults are the full-size networks;
// smaller geometries exist for gradient checking and fast tests.
struct ModelGeometry {
    std::size_t input_size = 64;
    std::size_t channels = 3;
    std::size_t filters = 32;
    std::size_t dense_units = 32;
    double dropout = 0.5;

    friend bool operator==(const ModelGeometry&, const ModelGeometry&) = default;
};

// Checkpoint tag: "duccnet" for the default geometry, otherwise
// "duccnet;in=16;ch=3;f=4;d=32".
inline std::string variant_tag(ModelVariant v, const ModelGeometry& geo = {}) {
    std::string tag = variant_name(v);
    if (geo == ModelGeometry{}) return tag;
    return tag + ";in=" + std::to_string(geo.input_size) + ";ch=" + std::to_string(geo.channels) +
           ";f=" + std::to_string(geo.filters) + ";d=" + std::to_string(geo.dense_units);
}

inline std::pair<ModelVariant, ModelGeometry> parse_variant_tag(const std::string& tag) {
    std::istringstream is(tag);
    std::string part;
    std::getline(is, part, ';');
    const ModelVariant v = parse_variant(part);
    ModelGeometry geo;
    while (std::getline(is, part, ';')) {
        const auto eq = part.find('=');
        if (eq == std::string::npos) throw CheckpointError("malformed variant tag '" + tag + "'");
        const std::string key = part.substr(0, eq);
        const std::size_t val = std::stoul(part.substr(eq + 1));
        if (key == "in") geo.input_size = val;
        else if (key == "ch") geo.channels = val;
        else if (key == "f") geo.filters = val;
        else if (key == "d") geo.dense_units = val;
        else throw CheckpointError("unknown key '" + key + "' in variant tag '" + tag + "'");
    }
    return {v, geo};
}

namespace detail {

template <typename T>
NodeId conv_relu(LayerGraph<T>& g, const std::string& name, NodeId from, std::size_t cin, std::size_t cout) {
    NodeId c = g.conv2d(name, from, ConvSpec::same_padding(3, cin, cout));
    return g.relu(name + "_relu", c);
}

// Pools while the map can still halve evenly; returns whether it pooled.
template <typename T>
bool pool_if_possible(LayerGraph<T>& g, const std::string& name, NodeId& x) {
    const Shape& s = g.node(x).out_shape;
    if (s[0] < 2 || s[0] % 2 != 0 || s[1] % 2 != 0) return false;
    x = g.maxpool2(name, x);
    return true;
}

}  // namespace detail

// Layout (all convs 3x3 "same", ReLU):
//   stem:    conv -> BN
//   deep:    blocks of 3 convs, 2x2 max pool after blocks 1-6, block 7 unpooled
//   shallow: conv1 -> BN -> pool, conv2 -> pool, conv3 -> pool,
//            [+ skip from after pool1 through two pools], conv4..6 each pooled,
//            conv7 unpooled
//   merge:   deep + shallow -> flatten -> dense(32, ReLU) -> dropout -> dense(1)
//            -> sigmoid
// Without block 7 the deep path ends after block 6's pool.
template <typename T = float>
LayerGraph<T> build_variant(ModelVariant v, const ModelGeometry& geo = {}) {
    const VariantFlags f = flags_of(v);
    const std::size_t nf = geo.filters;
    LayerGraph<T> g(Shape{geo.input_size, geo.input_size, geo.channels});

    NodeId stem = detail::conv_relu(g, "stem_conv", g.input(), geo.channels, nf);
    stem = g.batch_norm("stem_bn", stem);

    NodeId deep = stem;
    const std::size_t blocks = f.conv_block7 ? 7 : 6;
    for (std::size_t b = 1; b <= blocks; ++b) {
        for (std::size_t c = 1; c <= 3; ++c) {
            deep = detail::conv_relu(g, "deep_b" + std::to_string(b) + "_c" + std::to_string(c), deep, nf, nf);
        }
        if (b <= 6) detail::pool_if_possible(g, "deep_b" + std::to_string(b) + "_pool", deep);
    }

    NodeId merged = deep;
    if (f.channel2) {
        NodeId s = detail::conv_relu(g, "shallow_c1", stem, nf, nf);
        s = g.batch_norm("shallow_bn", s);
        detail::pool_if_possible(g, "shallow_p1", s);
        const NodeId skip_src = s;
        std::size_t bypassed_pools = 0;
        for (std::size_t c = 2; c <= 3; ++c) {
            s = detail::conv_relu(g, "shallow_c" + std::to_string(c), s, nf, nf);
            bypassed_pools += detail::pool_if_possible(g, "shallow_p" + std::to_string(c), s);
        }
        if (f.skip_connection) {
            NodeId skip = skip_src;
            for (std::size_t p = 1; p <= bypassed_pools; ++p) skip = g.maxpool2("skip_p" + std::to_string(p), skip);
            s = g.add_merge("skip_add", s, skip);
        }
        for (std::size_t c = 4; c <= 7; ++c) {
            s = detail::conv_relu(g, "shallow_c" + std::to_string(c), s, nf, nf);
            if (c <= 6) detail::pool_if_possible(g, "shallow_p" + std::to_string(c), s);
        }
        merged = g.add_merge("merge_add", deep, s);
    }

    NodeId h = g.flatten("flatten", merged);
    h = g.dense("dense1", h, geo.dense_units);
    h = g.relu("dense1_relu", h);
    h = g.dropout("dropout", h, geo.dropout);
    h = g.dense("dense2", h, 1);
    h = g.sigmoid("sigmoid", h);
    g.validate();
    return g;
}

template <typename T = float>
LayerGraph<T> build_scnn(const ModelGeometry& geo = {}) {
    return build_variant<T>(ModelVariant::Model2_SCNN, geo);
}

template <typename T = float>
LayerGraph<T> build_duccnet(const ModelGeometry& geo = {}) {
    return build_variant<T>(ModelVariant::DuCCNet, geo);
}

// Structural fingerprint: node ids, kinds, wiring and shapes.
template <typename T>
std::string structure_signature(const LayerGraph<T>& g) {
    std::ostringstream os;
    for (const auto& n : g.nodes()) {
        os << n.id << ':' << kind_name(n.kind) << '[';
        for (NodeId i : n.inputs) os << i << ',';
        os << ']' << shape_str(n.out_shape) << ';';
    }
    return os.str();
}

struct ParamRow {
    std::string name;
    std::string kind;
    std::string shape;
    std::uint64_t trainable = 0;
    std::uint64_t non_trainable = 0;
};

struct ParamReport {
    std::string model;
    std::vector<ParamRow> rows;
    std::uint64_t total_trainable = 0;
    std::uint64_t total_non_trainable = 0;
    std::size_t conv_layers = 0;
    std::size_t bn_layers = 0;
    std::size_t maxpools = 0;
    std::size_t add_merges = 0;
    std::size_t dense_layers = 0;
    std::optional<std::uint64_t> reference_trainable;
};

// Per-layer counts from the layer geometry: conv (K*K*Cin + 1) * Nk,
// dense (in + 1) * out, BN 2C trainable + 2C moving statistics.
template <typename T>
ParamReport count_params(const LayerGraph<T>& g) {
    ParamReport r;
    for (const auto& n : g.nodes()) {
        ParamRow row;
        row.name = n.id;
        row.kind = std::string(kind_name(n.kind));
        switch (n.kind) {
            case LayerKind::Conv2D: {
                const auto& c = n.conv;
                row.shape = std::to_string(c.kernel) + "x" + std::to_string(c.kernel) + "x" +
                            std::to_string(c.in_channels) + "x" + std::to_string(c.out_channels);
                row.trainable = (c.kernel * c.kernel * c.in_channels + 1) * c.out_channels;
                ++r.conv_layers;
                break;
            }
            case LayerKind::Dense: {
                const std::size_t in = n.weight.dim(0), out = n.weight.dim(1);
                row.shape = std::to_string(in) + "x" + std::to_string(out);
                row.trainable = (in + 1) * out;
                ++r.dense_layers;
                break;
            }
            case LayerKind::BatchNorm: {
                const std::size_t c = n.bn.channels();
                row.shape = std::to_string(c);
                row.trainable = 2 * c;
                row.non_trainable = 2 * c;
                ++r.bn_layers;
                break;
            }
            case LayerKind::MaxPool2: ++r.maxpools; continue;
            case LayerKind::AddMerge: ++r.add_merges; continue;
            default: continue;
        }
        r.total_trainable += row.trainable;
        r.total_non_trainable += row.non_trainable;
        r.rows.push_back(std::move(row));
    }
    return r;
}

inline ParamReport count_params(ModelVariant v, const ModelGeometry& geo = {}) {
    ParamReport r = count_params(build_variant<float>(v, geo));
    r.model = variant_display_name(v);
    if (geo == ModelGeometry{}) r.reference_trainable = reference_trainable_params(v);
    return r;
}

inline std::string format_param_table(const ParamReport& r) {
    std::ostringstream os;
    os << "model: " << r.model << '\n';
    os << std::left << std::setw(22) << "layer" << std::setw(11) << "kind" << std::setw(12) << "shape" << std::right
       << std::setw(11) << "trainable" << std::setw(15) << "non-trainable" << '\n';
    for (const auto& row : r.rows) {
        os << std::left << std::setw(22) << row.name << std::setw(11) << row.kind << std::setw(12) << row.shape
           << std::right << std::setw(11) << row.trainable << std::setw(15) << row.non_trainable << '\n';
    }
    os << "total trainable:      " << r.total_trainable << '\n';
    os << "total non-trainable:  " << r.total_non_trainable << '\n';
    os << "conv layers: " << r.conv_layers << "  batch norms: " << r.bn_layers << "  max pools: " << r.maxpools
       << "  add merges: " << r.add_merges << "  dense layers: " << r.dense_layers << '\n';
    if (r.reference_trainable) {
        const auto ref = static_cast<long long>(*r.reference_trainable);
        const auto delta = static_cast<long long>(r.total_trainable) - ref;
        os << "published trainable:  " << ref << "  (engine - published = " << (delta >= 0 ? "+" : "") << delta
           << ")\n";
    }
    return os.str();
}

// Machine-readable rows: kind of record first, comma separated.
inline std::string format_param_csv(const ParamReport& r) {
    std::ostringstream os;
    os << "record,name,kind,shape,trainable,non_trainable\n";
    for (const auto& row : r.rows) {
        os << "layer," << row.name << ',' << row.kind << ',' << row.shape << ',' << row.trainable << ','
           << row.non_trainable << '\n';
    }
    os << "total,,,," << r.total_trainable << ',' << r.total_non_trainable << '\n';
    if (r.reference_trainable) {
        os << "published,,,," << *r.reference_trainable << ",\n";
        os << "delta,,,,"
           << static_cast<long long>(r.total_trainable) - static_cast<long long>(*r.reference_trainable) << ",\n";
    }
    return os.str();
}

// Short names for the taps most often inspected.
inline std::string resolve_tap_alias(const std::string& tap) {
    if (tap == "stem") return "stem_bn";
    if (tap == "deep1") return "deep_b1_c1_relu";
    if (tap == "shallow1") return "shallow_c1_relu";
    return tap;
}

// Infer-mode activation of every filter at `tap` for one (H,W,C) image, each
// min-max normalized to [0,1]. A map whose values are all equal becomes
// all zeros.
template <typename T>
std::vector<Tensor<float>> extract_feature_maps(const LayerGraph<T>& g, const Tensor<T>& image, const std::string& tap) {
    const std::string id = resolve_tap_alias(tap);
    const auto node = g.find(id);
    if (!node || *node == 0 || g.node(*node).out_shape.size() != 3) {
        throw ConfigError("unknown tap id '" + tap + "' (needs a spatial layer such as stem, deep1, shallow1)");
    }
    Shape bs{1};
    bs.insert(bs.end(), image.shape().begin(), image.shape().end());
    const Tensor<T> act = g.activations(image.reshaped(bs), *node);
    const std::size_t h = act.dim(1), w = act.dim(2), c = act.dim(3);
    std::vector<Tensor<float>> maps;
    maps.reserve(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
        Tensor<float> m(Shape{h, w});
        double lo = act[ch], hi = act[ch];
        for (std::size_t p = 0; p < h * w; ++p) {
            lo = std::min<double>(lo, act[p * c + ch]);
            hi = std::max<double>(hi, act[p * c + ch]);
        }
        if (hi > lo) {
            for (std::size_t p = 0; p < h * w; ++p) m[p] = static_cast<float>((act[p * c + ch] - lo) / (hi - lo));
        }
        maps.push_back(std::move(m));
    }
    return maps;
}

}  // namespace cracknet
