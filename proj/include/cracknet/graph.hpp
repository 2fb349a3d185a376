#pragma once

// LayerGraph: a DAG of layer nodes with forward evaluation and reverse-mode
// backward. Nodes are stored in insertion order, which is a topological
// order because every node may only consume nodes added before it.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cracknet/errors.hpp"
#include "cracknet/layers.hpp"
#include "cracknet/ops.hpp"
#include "cracknet/rng.hpp"
#include "cracknet/tensor.hpp"

namespace cracknet {

enum class LayerKind { Input, Conv2D, BatchNorm, ReLU, Sigmoid, MaxPool2, Dense, Dropout, Flatten, AddMerge };

inline std::string_view kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Input: return "Input";
        case LayerKind::Conv2D: return "Conv2D";
        case LayerKind::BatchNorm: return "BatchNorm";
        case LayerKind::ReLU: return "ReLU";
        case LayerKind::Sigmoid: return "Sigmoid";
        case LayerKind::MaxPool2: return "MaxPool2";
        case LayerKind::Dense: return "Dense";
        case LayerKind::Dropout: return "Dropout";
        case LayerKind::Flatten: return "Flatten";
        case LayerKind::AddMerge: return "AddMerge";
    }
    return "?";
}

using NodeId = std::size_t;

template <typename T>
struct LayerNode {
    std::string id;
    LayerKind kind = LayerKind::Input;
    std::vector<NodeId> inputs;
    Shape out_shape;  // per sample, without the batch dimension

    ConvSpec conv;                 // Conv2D
    Tensor<T> weight;              // Conv2D (K,K,Cin,Cout) or Dense (in,out)
    Tensor<T> bias;                // Conv2D / Dense
    BatchNormState<T> bn;          // BatchNorm
    double dropout_rate = 0.5;     // Dropout
};

template <typename T>
struct ParamRef {
    std::string name;
    Tensor<T>* value;
    bool trainable;
};

template <typename T>
struct ConstParamRef {
    std::string name;
    const Tensor<T>* value;
    bool trainable;
};

// Cached forward state for one batch.
template <typename T>
struct GradTape {
    std::uint64_t graph_version = 0;
    Mode mode = Mode::infer;
    std::vector<Tensor<T>> outputs;                     // per node, with batch dim
    std::vector<std::vector<std::uint32_t>> argmax;     // MaxPool2 nodes
    std::vector<BatchNormCache<T>> bn;                  // BatchNorm nodes (train)
    std::vector<Tensor<T>> dropout_mask;                // Dropout nodes
};

template <typename T>
struct ForwardResult {
    Tensor<T> output;  // (B, 1)
    GradTape<T> tape;
};

template <typename T>
struct Gradients {
    std::vector<Tensor<T>> params;  // aligned with LayerGraph::trainable_names()
    Tensor<T> input;
};

template <typename T>
class LayerGraph {
public:
    explicit LayerGraph(Shape input_shape) {
        if (input_shape.empty()) throw ShapeError("graph input shape must be non-empty");
        LayerNode<T> n;
        n.id = "input";
        n.kind = LayerKind::Input;
        n.out_shape = std::move(input_shape);
        nodes_.push_back(std::move(n));
    }

    NodeId input() const { return 0; }

    NodeId conv2d(std::string id, NodeId from, const ConvSpec& spec) {
        const Shape& in = shape_of(from);
        if (in.size() != 3) throw ShapeError(id + ": Conv2D needs (H,W,C) input, got " + shape_str(in));
        if (in[2] != spec.in_channels) {
            throw ShapeError(id + ": Conv2D in_channels " + std::to_string(spec.in_channels) + " != input channels " +
                             std::to_string(in[2]));
        }
        LayerNode<T> n = make(std::move(id), LayerKind::Conv2D, {from});
        n.conv = spec;
        n.out_shape = {spec.output_size(in[0]), spec.output_size(in[1]), spec.out_channels};
        n.weight = Tensor<T>(Shape{spec.kernel, spec.kernel, spec.in_channels, spec.out_channels});
        n.bias = Tensor<T>(Shape{spec.out_channels});
        return push(std::move(n));
    }

    NodeId batch_norm(std::string id, NodeId from, double epsilon = 1e-3, double momentum = 0.99) {
        const Shape& in = shape_of(from);
        LayerNode<T> n = make(std::move(id), LayerKind::BatchNorm, {from});
        n.bn = BatchNormState<T>::identity(in.back(), epsilon, momentum);
        n.out_shape = in;
        return push(std::move(n));
    }

    NodeId relu(std::string id, NodeId from) { return passthrough(std::move(id), LayerKind::ReLU, from); }
    NodeId sigmoid(std::string id, NodeId from) { return passthrough(std::move(id), LayerKind::Sigmoid, from); }

    NodeId dropout(std::string id, NodeId from, double rate) {
        if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError(id + ": dropout rate must be in [0, 1)");
        NodeId k = passthrough(std::move(id), LayerKind::Dropout, from);
        nodes_[k].dropout_rate = rate;
        return k;
    }

    NodeId maxpool2(std::string id, NodeId from) {
        const Shape& in = shape_of(from);
        if (in.size() != 3 || in[0] % 2 != 0 || in[1] % 2 != 0) {
            throw ShapeError(id + ": MaxPool2 needs (H,W,C) with even H and W, got " + shape_str(in));
        }
        LayerNode<T> n = make(std::move(id), LayerKind::MaxPool2, {from});
        n.out_shape = {in[0] / 2, in[1] / 2, in[2]};
        return push(std::move(n));
    }

    NodeId flatten(std::string id, NodeId from) {
        LayerNode<T> n = make(std::move(id), LayerKind::Flatten, {from});
        n.out_shape = {shape_volume(shape_of(from))};
        return push(std::move(n));
    }

    NodeId dense(std::string id, NodeId from, std::size_t units) {
        const Shape& in = shape_of(from);
        if (in.size() != 1) throw ShapeError(id + ": Dense needs a flat input, got " + shape_str(in));
        LayerNode<T> n = make(std::move(id), LayerKind::Dense, {from});
        n.out_shape = {units};
        n.weight = Tensor<T>(Shape{in[0], units});
        n.bias = Tensor<T>(Shape{units});
        return push(std::move(n));
    }

    NodeId add_merge(std::string id, NodeId a, NodeId b) {
        if (shape_of(a) != shape_of(b)) {
            throw ShapeError(id + ": AddMerge shape mismatch " + shape_str(shape_of(a)) + " vs " + shape_str(shape_of(b)));
        }
        LayerNode<T> n = make(std::move(id), LayerKind::AddMerge, {a, b});
        n.out_shape = shape_of(a);
        return push(std::move(n));
    }

    const std::vector<LayerNode<T>>& nodes() const { return nodes_; }
    const LayerNode<T>& node(NodeId k) const { return nodes_.at(k); }
    NodeId terminal() const { return nodes_.size() - 1; }
    const Shape& input_shape() const { return nodes_.front().out_shape; }

    std::optional<NodeId> find(std::string_view id) const {
        for (NodeId k = 0; k < nodes_.size(); ++k)
            if (nodes_[k].id == id) return k;
        return std::nullopt;
    }

    std::size_t count(LayerKind kind) const {
        std::size_t c = 0;
        for (const auto& n : nodes_) c += n.kind == kind;
        return c;
    }

    // Checks the whole-graph invariants: a single terminal node producing one
    // value per sample, and every other node consumed by someone.
    void validate() const {
        std::vector<std::size_t> consumers(nodes_.size(), 0);
        for (const auto& n : nodes_)
            for (NodeId i : n.inputs) ++consumers[i];
        for (NodeId k = 0; k + 1 < nodes_.size(); ++k) {
            if (consumers[k] == 0) throw ShapeError(nodes_[k].id + ": node output is never consumed");
        }
        if (nodes_.back().out_shape != Shape{1}) {
            throw ShapeError(nodes_.back().id + ": terminal node must produce one value per sample, got " +
                             shape_str(nodes_.back().out_shape));
        }
    }

    // Parameter enumeration order is fixed: node order, then weight, bias /
    // gamma, beta, moving_mean, moving_var. Mutable access bumps the version
    // so tapes recorded before it are rejected by backward().
    std::vector<ParamRef<T>> parameters() {
        ++version_;
        std::vector<ParamRef<T>> out;
        for (auto& n : nodes_) collect(n, out);
        return out;
    }

    std::vector<ConstParamRef<T>> parameters() const {
        std::vector<ConstParamRef<T>> out;
        for (const auto& n : nodes_) collect_const(n, out);
        return out;
    }

    std::vector<Tensor<T>*> trainable() {
        std::vector<Tensor<T>*> out;
        for (auto& p : parameters())
            if (p.trainable) out.push_back(p.value);
        return out;
    }

    std::vector<std::string> trainable_names() const {
        std::vector<std::string> out;
        for (const auto& p : parameters())
            if (p.trainable) out.push_back(p.name);
        return out;
    }

    std::uint64_t version() const { return version_; }
    void touch() { ++version_; }

    // He-uniform weights (limit sqrt(6 / fan_in)), zero biases, gamma = 1,
    // beta = 0, moving statistics (0, 1).
    void initialize(std::uint64_t seed) {
        ++version_;
        for (NodeId k = 0; k < nodes_.size(); ++k) {
            auto& n = nodes_[k];
            if (n.kind == LayerKind::Conv2D || n.kind == LayerKind::Dense) {
                const std::size_t fan_in = n.kind == LayerKind::Conv2D
                                               ? n.conv.kernel * n.conv.kernel * n.conv.in_channels
                                               : n.weight.dim(0);
                const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
                Rng rng(derive_seed(seed, {k, 1}));
                for (auto& w : n.weight.data()) w = static_cast<T>(rng.uniform(-limit, limit));
                n.bias.fill(T{0});
            } else if (n.kind == LayerKind::BatchNorm) {
                n.bn = BatchNormState<T>::identity(n.bn.channels(), n.bn.epsilon, n.bn.momentum);
            }
        }
    }

    // Train-mode forward also folds batch statistics into the BN moving
    // averages. Dropout masks derive from `seed` and the node index.
    ForwardResult<T> forward(const Tensor<T>& batch, Mode mode, std::uint64_t seed = 0) {
        ForwardResult<T> r;
        r.tape = run(batch, mode, seed, true);
        if (mode == Mode::train) {
            for (NodeId k = 0; k < nodes_.size(); ++k)
                if (nodes_[k].kind == LayerKind::BatchNorm) update_moving_stats(nodes_[k].bn, r.tape.bn[k]);
        }
        r.output = r.tape.outputs.back();
        return r;
    }

    // Infer-mode forward that keeps no tape. Safe to call concurrently on a
    // graph nobody is mutating.
    Tensor<T> infer(const Tensor<T>& batch) const {
        GradTape<T> t = run(batch, Mode::infer, 0, false);
        return std::move(t.outputs.back());
    }

    // Infer-mode activations of one node.
    Tensor<T> activations(const Tensor<T>& batch, NodeId tap) const {
        GradTape<T> t = run(batch, Mode::infer, 0, true);
        return std::move(t.outputs.at(tap));
    }

    // Gradients of the loss whose derivative w.r.t. the terminal output is
    // loss_grad, for every trainable parameter and for the graph input.
    Gradients<T> backward(const GradTape<T>& tape, const Tensor<T>& loss_grad) const {
        if (tape.mode != Mode::train) throw StaleTapeError("backward needs a train-mode tape");
        if (tape.graph_version != version_) {
            throw StaleTapeError("graph parameters changed since the forward pass (tape version " +
                                 std::to_string(tape.graph_version) + ", graph version " + std::to_string(version_) +
                                 ")");
        }
        if (loss_grad.shape() != tape.outputs.back().shape()) {
            throw ShapeError("loss gradient shape " + shape_str(loss_grad.shape()) + " != output shape " +
                             shape_str(tape.outputs.back().shape()));
        }
        std::vector<Tensor<T>> d(nodes_.size());
        d.back() = loss_grad;

        std::vector<std::size_t> first_param(nodes_.size(), 0);
        std::size_t n_trainable = 0;
        for (NodeId k = 0; k < nodes_.size(); ++k) {
            first_param[k] = n_trainable;
            n_trainable += trainable_count(nodes_[k]);
        }
        Gradients<T> g;
        g.params.resize(n_trainable);

        for (NodeId k = nodes_.size(); k-- > 1;) {
            if (d[k].empty()) continue;
            const auto& n = nodes_[k];
            const Tensor<T>& dy = d[k];
            const Tensor<T>& x = tape.outputs[n.inputs.front()];
            switch (n.kind) {
                case LayerKind::Conv2D: {
                    auto cg = conv2d_backward(x, n.weight, n.conv, dy);
                    g.params[first_param[k]] = std::move(cg.d_kernels);
                    g.params[first_param[k] + 1] = std::move(cg.d_bias);
                    accumulate(d[n.inputs[0]], std::move(cg.d_input));
                    break;
                }
                case LayerKind::Dense: {
                    auto dg = dense_backward(x, n.weight, dy);
                    g.params[first_param[k]] = std::move(dg.d_weight);
                    g.params[first_param[k] + 1] = std::move(dg.d_bias);
                    accumulate(d[n.inputs[0]], std::move(dg.d_input));
                    break;
                }
                case LayerKind::BatchNorm: {
                    auto bg = batchnorm_backward(n.bn, tape.bn[k], dy);
                    g.params[first_param[k]] = std::move(bg.d_gamma);
                    g.params[first_param[k] + 1] = std::move(bg.d_beta);
                    accumulate(d[n.inputs[0]], std::move(bg.d_input));
                    break;
                }
                case LayerKind::ReLU:
                    accumulate(d[n.inputs[0]], activation_backward(x, tape.outputs[k], dy, Activation::relu));
                    break;
                case LayerKind::Sigmoid:
                    accumulate(d[n.inputs[0]], activation_backward(x, tape.outputs[k], dy, Activation::sigmoid));
                    break;
                case LayerKind::MaxPool2:
                    accumulate(d[n.inputs[0]], maxpool2_backward(x.shape(), tape.argmax[k], dy));
                    break;
                case LayerKind::Dropout: {
                    Tensor<T> dx(dy.shape());
                    const auto& m = tape.dropout_mask[k];
                    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * m[i];
                    accumulate(d[n.inputs[0]], std::move(dx));
                    break;
                }
                case LayerKind::Flatten:
                    accumulate(d[n.inputs[0]], dy.reshaped(x.shape()));
                    break;
                case LayerKind::AddMerge:
                    accumulate(d[n.inputs[0]], Tensor<T>(dy));
                    accumulate(d[n.inputs[1]], Tensor<T>(dy));
                    break;
                case LayerKind::Input:
                    break;
            }
        }
        // Parameters whose node received no gradient (unreachable from the
        // output) still get a zero tensor of the right shape.
        std::size_t i = 0;
        for (const auto& p : parameters()) {
            if (!p.trainable) continue;
            if (g.params[i].empty()) g.params[i] = Tensor<T>(p.value->shape());
            ++i;
        }
        g.input = d.front().empty() ? Tensor<T>(tape.outputs.front().shape()) : std::move(d.front());
        return g;
    }

private:
    LayerNode<T> make(std::string id, LayerKind kind, std::vector<NodeId> inputs) const {
        if (find(id)) throw ConfigError("duplicate node id '" + id + "'");
        for (NodeId i : inputs) {
            if (i >= nodes_.size()) throw ConfigError(id + ": unknown upstream node " + std::to_string(i));
        }
        LayerNode<T> n;
        n.id = std::move(id);
        n.kind = kind;
        n.inputs = std::move(inputs);
        return n;
    }

    NodeId push(LayerNode<T> n) {
        nodes_.push_back(std::move(n));
        ++version_;
        return nodes_.size() - 1;
    }

    NodeId passthrough(std::string id, LayerKind kind, NodeId from) {
        LayerNode<T> n = make(std::move(id), kind, {from});
        n.out_shape = shape_of(from);
        return push(std::move(n));
    }

    const Shape& shape_of(NodeId k) const {
        if (k >= nodes_.size()) throw ConfigError("unknown node index " + std::to_string(k));
        return nodes_[k].out_shape;
    }

    static std::size_t trainable_count(const LayerNode<T>& n) {
        switch (n.kind) {
            case LayerKind::Conv2D:
            case LayerKind::Dense:
            case LayerKind::BatchNorm: return 2;
            default: return 0;
        }
    }

    static void collect(LayerNode<T>& n, std::vector<ParamRef<T>>& out) {
        if (n.kind == LayerKind::Conv2D || n.kind == LayerKind::Dense) {
            out.push_back({n.id + ".weight", &n.weight, true});
            out.push_back({n.id + ".bias", &n.bias, true});
        } else if (n.kind == LayerKind::BatchNorm) {
            out.push_back({n.id + ".gamma", &n.bn.gamma, true});
            out.push_back({n.id + ".beta", &n.bn.beta, true});
            out.push_back({n.id + ".moving_mean", &n.bn.moving_mean, false});
            out.push_back({n.id + ".moving_var", &n.bn.moving_var, false});
        }
    }

    static void collect_const(const LayerNode<T>& n, std::vector<ConstParamRef<T>>& out) {
        if (n.kind == LayerKind::Conv2D || n.kind == LayerKind::Dense) {
            out.push_back({n.id + ".weight", &n.weight, true});
            out.push_back({n.id + ".bias", &n.bias, true});
        } else if (n.kind == LayerKind::BatchNorm) {
            out.push_back({n.id + ".gamma", &n.bn.gamma, true});
            out.push_back({n.id + ".beta", &n.bn.beta, true});
            out.push_back({n.id + ".moving_mean", &n.bn.moving_mean, false});
            out.push_back({n.id + ".moving_var", &n.bn.moving_var, false});
        }
    }

    static void accumulate(Tensor<T>& into, Tensor<T> g) {
        if (into.empty()) {
            into = std::move(g);
            return;
        }
        for (std::size_t i = 0; i < into.size(); ++i) into[i] += g[i];
    }

    GradTape<T> run(const Tensor<T>& batch, Mode mode, std::uint64_t seed, bool keep_all) const {
        const Shape& in = input_shape();
        if (batch.rank() != in.size() + 1 || !std::equal(in.begin(), in.end(), batch.shape().begin() + 1)) {
            throw ShapeError("input: expected batch of " + shape_str(in) + " samples, got " + shape_str(batch.shape()));
        }
        const std::size_t nb = batch.dim(0);
        GradTape<T> t;
        t.graph_version = version_;
        t.mode = mode;
        t.outputs.resize(nodes_.size());
        if (keep_all) {
            t.argmax.resize(nodes_.size());
            t.bn.resize(nodes_.size());
            t.dropout_mask.resize(nodes_.size());
        }
        std::vector<std::size_t> remaining(nodes_.size(), 0);
        for (const auto& n : nodes_)
            for (NodeId i : n.inputs) ++remaining[i];

        t.outputs[0] = batch;
        for (NodeId k = 1; k < nodes_.size(); ++k) {
            const auto& n = nodes_[k];
            const Tensor<T>& x = t.outputs[n.inputs.front()];
            Tensor<T> y;
            try {
                switch (n.kind) {
                    case LayerKind::Conv2D: y = cracknet::conv2d(x, n.weight, n.bias, n.conv); break;
                    case LayerKind::Dense: y = dense_forward(x, n.weight, n.bias); break;
                    case LayerKind::BatchNorm:
                        y = batchnorm_apply(x, n.bn, mode, mode == Mode::train ? &t.bn.at(k) : nullptr);
                        break;
                    case LayerKind::ReLU: y = activation(x, Activation::relu); break;
                    case LayerKind::Sigmoid: y = activation(x, Activation::sigmoid); break;
                    case LayerKind::MaxPool2: {
                        auto p = maxpool2_with_argmax(x);
                        y = std::move(p.output);
                        if (keep_all) t.argmax[k] = std::move(p.argmax);
                        break;
                    }
                    case LayerKind::Dropout: {
                        Rng rng(derive_seed(seed, {k}));
                        y = cracknet::dropout(x, n.dropout_rate, mode, rng, keep_all ? &t.dropout_mask[k] : nullptr);
                        break;
                    }
                    case LayerKind::Flatten: y = x.reshaped(Shape{nb, shape_volume(n.out_shape)}); break;
                    case LayerKind::AddMerge: y = add(x, t.outputs[n.inputs[1]]); break;
                    case LayerKind::Input: break;
                }
            } catch (const Error& e) {
                throw ShapeError(n.id + ": " + e.what());
            }
            t.outputs[k] = std::move(y);
            if (!keep_all) {
                for (NodeId i : n.inputs)
                    if (--remaining[i] == 0) t.outputs[i] = Tensor<T>();
            }
        }
        return t;
    }

    std::vector<LayerNode<T>> nodes_;
    std::uint64_t version_ = 0;
};

}  // namespace cracknet
