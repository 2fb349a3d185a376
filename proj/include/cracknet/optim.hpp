#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cracknet/errors.hpp"
#include "cracknet/tensor.hpp"

namespace cracknet {

inline constexpr double kProbClamp = 1e-7;
inline constexpr double kDecisionThreshold = 0.5;

template <typename T>
struct LossResult {
    double loss = 0.0;
    Tensor<T> grad;  // d(mean loss) / d(pred), same shape as pred
};

// Mean binary cross-entropy. Predictions are clamped to
// [1e-7, 1 - 1e-7] before the logs; the gradient is zero where the clamp is
// active.
template <typename T>
LossResult<T> bce_loss(const Tensor<T>& pred, const Tensor<T>& labels) {
    if (pred.shape() != labels.shape()) {
        throw ShapeError("bce_loss shape mismatch: " + shape_str(pred.shape()) + " vs " + shape_str(labels.shape()));
    }
    const std::size_t n = pred.size();
    LossResult<T> r{0.0, Tensor<T>(pred.shape())};
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double y = labels[i];
        if (y != 0.0 && y != 1.0) throw DataError("bce_loss label must be 0 or 1, got " + std::to_string(y));
        const double raw = pred[i];
        const double p = std::clamp(raw, kProbClamp, 1.0 - kProbClamp);
        sum += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
        const bool clamped = raw < kProbClamp || raw > 1.0 - kProbClamp;
        r.grad[i] = clamped ? T{0} : static_cast<T>((-(y / p) + (1.0 - y) / (1.0 - p)) / static_cast<double>(n));
    }
    r.loss = sum / static_cast<double>(n);
    return r;
}

struct AdamConfig {
    double lr = 0.0005;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-7;
};

template <typename T>
struct AdamState {
    AdamConfig cfg;
    std::uint64_t t = 0;
    std::vector<Tensor<T>> m;
    std::vector<Tensor<T>> v;

    explicit AdamState(AdamConfig c = {}) : cfg(c) {}
};

// One bias-corrected ADAM update. Moment buffers are created on the first
// call to mirror the parameter shapes.
template <typename T>
void adam_step(AdamState<T>& s, std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads) {
    if (params.size() != grads.size()) {
        throw ShapeError("adam_step: " + std::to_string(params.size()) + " params vs " +
                         std::to_string(grads.size()) + " grads");
    }
    if (s.m.empty()) {
        for (const Tensor<T>* p : params) {
            s.m.emplace_back(p->shape());
            s.v.emplace_back(p->shape());
        }
    }
    if (s.m.size() != params.size()) throw ShapeError("adam_step: parameter count changed between steps");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i]->shape() != grads[i].shape() || s.m[i].shape() != grads[i].shape()) {
            throw ShapeError("adam_step: shape mismatch at parameter " + std::to_string(i) + ": " +
                             shape_str(params[i]->shape()) + " vs grad " + shape_str(grads[i].shape()));
        }
    }
    ++s.t;
    const double b1 = s.cfg.beta1, b2 = s.cfg.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(s.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<T>& p = *params[i];
        Tensor<T>& m = s.m[i];
        Tensor<T>& v = s.v[i];
        const Tensor<T>& g = grads[i];
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double gk = g[k];
            const double mk = b1 * m[k] + (1.0 - b1) * gk;
            const double vk = b2 * v[k] + (1.0 - b2) * gk * gk;
            m[k] = static_cast<T>(mk);
            v[k] = static_cast<T>(vk);
            const double m_hat = mk / c1;
            const double v_hat = vk / c2;
            p[k] = static_cast<T>(p[k] - s.cfg.lr * m_hat / (std::sqrt(v_hat) + s.cfg.eps));
        }
    }
}

// Counts behind the validation-accuracy formula. "crack" is label 1.
struct Metrics {
    std::uint64_t n_crack_total = 0;
    std::uint64_t n_nocrack_total = 0;
    std::uint64_t n_crack_correct = 0;
    std::uint64_t n_nocrack_correct = 0;

    Metrics& operator+=(const Metrics& o) {
        n_crack_total += o.n_crack_total;
        n_nocrack_total += o.n_nocrack_total;
        n_crack_correct += o.n_crack_correct;
        n_nocrack_correct += o.n_nocrack_correct;
        return *this;
    }

    std::uint64_t total() const { return n_crack_total + n_nocrack_total; }

    // Confusion matrix, positive class = crack.
    std::uint64_t true_positive() const { return n_crack_correct; }
    std::uint64_t false_negative() const { return n_crack_total - n_crack_correct; }
    std::uint64_t true_negative() const { return n_nocrack_correct; }
    std::uint64_t false_positive() const { return n_nocrack_total - n_nocrack_correct; }

    friend bool operator==(const Metrics&, const Metrics&) = default;
};

// A sample is crack-detected iff p > 0.5; p == 0.5 counts as non-crack.
inline bool detects_crack(double probability) { return probability > kDecisionThreshold; }

inline void record_prediction(Metrics& m, double probability, int label) {
    const bool predicted = detects_crack(probability);
    if (label == 1) {
        ++m.n_crack_total;
        m.n_crack_correct += predicted;
    } else {
        ++m.n_nocrack_total;
        m.n_nocrack_correct += !predicted;
    }
}

// VA = (N_C^D + N_NC^D) / (N_C^T + N_NC^T) * 100.
inline double validation_accuracy(const Metrics& m) {
    if (m.total() == 0) throw DataError("validation accuracy of an empty test set");
    if (m.n_crack_correct > m.n_crack_total || m.n_nocrack_correct > m.n_nocrack_total) {
        throw DataError("metrics have more correct detections than samples");
    }
    return static_cast<double>(m.n_crack_correct + m.n_nocrack_correct) / static_cast<double>(m.total()) * 100.0;
}

}  // namespace cracknet
