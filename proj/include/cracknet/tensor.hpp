#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cracknet/errors.hpp"

namespace cracknet {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_volume(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ')';
    return os.str();
}

// Dense row-major tensor. Images are (H, W, C), batches (B, H, W, C), kernel
// banks (K, K, Cin, Cout). Every dimension is positive and data().size() is
// always the product of the shape.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
        check_dims();
        data_.assign(shape_volume(shape_), fill);
    }

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_dims();
        if (data_.size() != shape_volume(shape_)) {
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
        }
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    T* raw() noexcept { return data_.data(); }
    const T* raw() const noexcept { return data_.data(); }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    template <typename... Idx>
    T& at(Idx... idx) {
        return data_[offset({static_cast<std::size_t>(idx)...})];
    }
    template <typename... Idx>
    const T& at(Idx... idx) const {
        return data_[offset({static_cast<std::size_t>(idx)...})];
    }

    // Same data, new shape of equal volume.
    Tensor reshaped(Shape shape) const {
        return Tensor(std::move(shape), data_);
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    void check_dims() const {
        for (std::size_t d : shape_) {
            if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape_));
        }
    }

    std::size_t offset(std::initializer_list<std::size_t> idx) const {
        if (idx.size() != shape_.size()) throw ShapeError("index rank mismatch for shape " + shape_str(shape_));
        std::size_t off = 0;
        std::size_t i = 0;
        for (std::size_t v : idx) {
            if (v >= shape_[i]) throw ShapeError("index out of range on dim " + std::to_string(i));
            off = off * shape_[i] + v;
            ++i;
        }
        return off;
    }

    Shape shape_;
    std::vector<T> data_;
};

// Leading batch dimension of a rank-4 tensor, or 1 for a single rank-3 image.
template <typename T>
std::size_t batch_of(const Tensor<T>& t) {
    return t.rank() == 4 ? t.dim(0) : 1;
}

// Stacks equally-shaped tensors along a new leading dimension.
template <typename T>
Tensor<T> stack(std::span<const Tensor<T>* const> items) {
    if (items.empty()) throw ShapeError("stack of zero tensors");
    const Shape& inner = items.front()->shape();
    Shape shape{items.size()};
    shape.insert(shape.end(), inner.begin(), inner.end());
    std::vector<T> data;
    data.reserve(shape_volume(shape));
    for (const Tensor<T>* t : items) {
        if (t->shape() != inner) {
            throw ShapeError("stack shape mismatch: " + shape_str(t->shape()) + " vs " + shape_str(inner));
        }
        data.insert(data.end(), t->data().begin(), t->data().end());
    }
    return Tensor<T>(std::move(shape), std::move(data));
}

// Slice i of the leading dimension.
template <typename T>
Tensor<T> unstack_one(const Tensor<T>& batch, std::size_t i) {
    Shape inner(batch.shape().begin() + 1, batch.shape().end());
    const std::size_t n = shape_volume(inner);
    std::vector<T> data(batch.data().begin() + static_cast<std::ptrdiff_t>(i * n),
                        batch.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * n));
    return Tensor<T>(std::move(inner), std::move(data));
}

}  // namespace cracknet
