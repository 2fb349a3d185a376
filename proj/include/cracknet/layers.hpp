#pragma once

// Functional forms of the non-convolutional layer kinds: activations,
// inverted dropout, batch normalization and the fully connected layer.

#include <cmath>
#include <string>
#include <vector>

#include "cracknet/errors.hpp"
#include "cracknet/rng.hpp"
#include "cracknet/tensor.hpp"

namespace cracknet {

enum class Mode { train, infer };

enum class Activation { relu, sigmoid };

template <typename T>
T sigmoid_scalar(T x) {
    if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
    const T e = std::exp(x);
    return e / (T{1} + e);
}

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation kind) {
    Tensor<T> out(x.shape());
    if (kind == Activation::relu) {
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] < T{0} ? T{0} : x[i];
    } else {
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = sigmoid_scalar(x[i]);
    }
    return out;
}

// Gradient of an activation given its input x and output y.
template <typename T>
Tensor<T> activation_backward(const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& dy, Activation kind) {
    Tensor<T> dx(x.shape());
    if (kind == Activation::relu) {
        for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > T{0} ? dy[i] : T{0};
    } else {
        for (std::size_t i = 0; i < x.size(); ++i) dx[i] = dy[i] * y[i] * (T{1} - y[i]);
    }
    return dx;
}

// Inverted dropout. In train mode every element is zeroed with probability
// `rate` and survivors are scaled by 1 / (1 - rate); infer mode is identity.
// When `mask` is given it receives the per-element multiplier.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Mode mode, Rng& rng, Tensor<T>* mask = nullptr) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must be in [0, 1), got " + std::to_string(rate));
    if (mode == Mode::infer || rate == 0.0) {
        if (mask) *mask = Tensor<T>(x.shape(), T{1});
        return x;
    }
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    Tensor<T> m(x.shape());
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        m[i] = rng.bernoulli(rate) ? T{0} : keep_scale;
        out[i] = x[i] * m[i];
    }
    if (mask) *mask = std::move(m);
    return out;
}

template <typename T>
struct BatchNormState {
    Tensor<T> gamma;
    Tensor<T> beta;
    Tensor<T> moving_mean;
    Tensor<T> moving_var;
    double epsilon = 1e-3;
    double momentum = 0.99;

    static BatchNormState identity(std::size_t channels, double epsilon = 1e-3, double momentum = 0.99) {
        return BatchNormState{Tensor<T>(Shape{channels}, T{1}), Tensor<T>(Shape{channels}, T{0}),
                              Tensor<T>(Shape{channels}, T{0}), Tensor<T>(Shape{channels}, T{1}), epsilon,
                              momentum};
    }

    std::size_t channels() const { return gamma.size(); }
};

// Everything backward needs from a train-mode normalization, plus the batch
// statistics used to update the moving averages.
template <typename T>
struct BatchNormCache {
    Tensor<T> x_hat;
    std::vector<T> mean;
    std::vector<T> var;  // biased (population) variance
    std::vector<T> inv_std;
};

namespace detail {

template <typename T>
void bn_check(const Tensor<T>& x, const BatchNormState<T>& s) {
    if (x.rank() < 2) throw ShapeError("batch_norm input needs a batch dimension, got " + shape_str(x.shape()));
    if (x.shape().back() != s.channels()) {
        throw ShapeError("batch_norm channel count " + std::to_string(x.shape().back()) + " != state channels " +
                         std::to_string(s.channels()));
    }
}

}  // namespace detail

// Per-channel normalization over every axis except the last. Train mode uses
// the batch mean and biased variance; infer mode uses the moving statistics.
// Moving statistics are not touched here (see update_moving_stats).
template <typename T>
Tensor<T> batchnorm_apply(const Tensor<T>& x, const BatchNormState<T>& s, Mode mode, BatchNormCache<T>* cache = nullptr) {
    detail::bn_check(x, s);
    const std::size_t c = s.channels();
    const std::size_t n = x.size() / c;
    Tensor<T> out(x.shape());
    if (mode == Mode::infer) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(s.moving_var[ch]) + s.epsilon));
            const T scale = s.gamma[ch] * inv;
            const T shift = s.beta[ch] - s.moving_mean[ch] * scale;
            for (std::size_t i = 0; i < n; ++i) out[i * c + ch] = x[i * c + ch] * scale + shift;
        }
        return out;
    }
    if (x.dim(0) < 2) throw ShapeError("batch_norm in train mode needs batch size >= 2, got " + std::to_string(x.dim(0)));

    // Two-pass statistics, accumulated in double.
    std::vector<double> mean(c, 0.0), var(c, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) mean[ch] += x[i * c + ch];
    for (auto& m : mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double d = x[i * c + ch] - mean[ch];
            var[ch] += d * d;
        }
    }
    for (auto& v : var) v /= static_cast<double>(n);

    BatchNormCache<T> local;
    BatchNormCache<T>& cc = cache ? *cache : local;
    cc.x_hat = Tensor<T>(x.shape());
    cc.mean.assign(c, T{0});
    cc.var.assign(c, T{0});
    cc.inv_std.assign(c, T{0});
    for (std::size_t ch = 0; ch < c; ++ch) {
        cc.mean[ch] = static_cast<T>(mean[ch]);
        cc.var[ch] = static_cast<T>(var[ch]);
        cc.inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var[ch] + s.epsilon));
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t k = i * c + ch;
            const T xh = static_cast<T>((x[k] - mean[ch]) * static_cast<double>(cc.inv_std[ch]));
            cc.x_hat[k] = xh;
            out[k] = s.gamma[ch] * xh + s.beta[ch];
        }
    }
    return out;
}

template <typename T>
void update_moving_stats(BatchNormState<T>& s, const BatchNormCache<T>& cache) {
    const T mom = static_cast<T>(s.momentum);
    for (std::size_t ch = 0; ch < s.channels(); ++ch) {
        s.moving_mean[ch] = mom * s.moving_mean[ch] + (T{1} - mom) * cache.mean[ch];
        s.moving_var[ch] = mom * s.moving_var[ch] + (T{1} - mom) * cache.var[ch];
    }
}

// Normalize and, in train mode, fold the batch statistics into the moving
// averages.
template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, BatchNormState<T>& s, Mode mode, BatchNormCache<T>* cache = nullptr) {
    BatchNormCache<T> local;
    BatchNormCache<T>* cc = cache ? cache : &local;
    Tensor<T> out = batchnorm_apply(x, s, mode, mode == Mode::train ? cc : nullptr);
    if (mode == Mode::train) update_moving_stats(s, *cc);
    return out;
}

template <typename T>
struct BatchNormGrads {
    Tensor<T> d_input;
    Tensor<T> d_gamma;
    Tensor<T> d_beta;
};

template <typename T>
BatchNormGrads<T> batchnorm_backward(const BatchNormState<T>& s, const BatchNormCache<T>& cache, const Tensor<T>& dy) {
    const std::size_t c = s.channels();
    const std::size_t n = dy.size() / c;
    BatchNormGrads<T> g{Tensor<T>(dy.shape()), Tensor<T>(Shape{c}), Tensor<T>(Shape{c})};
    std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t k = i * c + ch;
            sum_dy[ch] += dy[k];
            sum_dy_xhat[ch] += static_cast<double>(dy[k]) * cache.x_hat[k];
        }
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t ch = 0; ch < c; ++ch) {
        g.d_gamma[ch] = static_cast<T>(sum_dy_xhat[ch]);
        g.d_beta[ch] = static_cast<T>(sum_dy[ch]);
    }
    // dx = gamma * inv_std / n * (n * dy - sum(dy) - x_hat * sum(dy * x_hat))
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t k = i * c + ch;
            const double scale = static_cast<double>(s.gamma[ch]) * cache.inv_std[ch];
            g.d_input[k] = static_cast<T>(scale * (dy[k] - inv_n * sum_dy[ch] - cache.x_hat[k] * inv_n * sum_dy_xhat[ch]));
        }
    }
    return g;
}

// Fully connected layer: x (B, in), weight (in, out), bias (out).
template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(0) || bias.shape() != Shape{weight.dim(1)}) {
        throw ShapeError("dense shape mismatch: x " + shape_str(x.shape()) + ", weight " + shape_str(weight.shape()) +
                         ", bias " + shape_str(bias.shape()));
    }
    const std::size_t b = x.dim(0), in = weight.dim(0), out = weight.dim(1);
    Tensor<T> y(Shape{b, out});
    for (std::size_t s = 0; s < b; ++s) {
        T* yr = y.raw() + s * out;
        for (std::size_t o = 0; o < out; ++o) yr[o] = bias[o];
        for (std::size_t i = 0; i < in; ++i) {
            const T xv = x[s * in + i];
            const T* wr = weight.raw() + i * out;
            for (std::size_t o = 0; o < out; ++o) yr[o] += xv * wr[o];
        }
    }
    return y;
}

template <typename T>
struct DenseGrads {
    Tensor<T> d_input;
    Tensor<T> d_weight;
    Tensor<T> d_bias;
};

template <typename T>
DenseGrads<T> dense_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy) {
    const std::size_t b = x.dim(0), in = weight.dim(0), out = weight.dim(1);
    DenseGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(weight.shape()), Tensor<T>(Shape{out})};
    for (std::size_t s = 0; s < b; ++s) {
        const T* gy = dy.raw() + s * out;
        for (std::size_t o = 0; o < out; ++o) g.d_bias[o] += gy[o];
        for (std::size_t i = 0; i < in; ++i) {
            const T xv = x[s * in + i];
            const T* wr = weight.raw() + i * out;
            T* dwr = g.d_weight.raw() + i * out;
            T acc{0};
            for (std::size_t o = 0; o < out; ++o) {
                dwr[o] += xv * gy[o];
                acc += wr[o] * gy[o];
            }
            g.d_input[s * in + i] = acc;
        }
    }
    return g;
}

}  // namespace cracknet
