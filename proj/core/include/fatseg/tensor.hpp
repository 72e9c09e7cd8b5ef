#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fatseg {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor. Copies are shallow handles onto shared storage;
// autodiff closures capture handles and accumulate into the shared grad
// buffer. Gradient buffers are allocated lazily and zero-filled.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape)
        : shape_(std::move(shape)),
          st_(std::make_shared<Storage>(Storage{std::vector<T>(static_cast<std::size_t>(shape_numel(shape_))), {}, false})) {}

    static Tensor full(Shape shape, T value) {
        Tensor t(std::move(shape));
        for (auto& v : t.st_->data) v = value;
        return t;
    }

    static Tensor from(Shape shape, std::vector<T> data) {
        if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
            throw std::invalid_argument("Tensor::from: shape " + shape_str(shape) + " does not match " +
                                        std::to_string(data.size()) + " data elements");
        Tensor t;
        t.shape_ = std::move(shape);
        t.st_ = std::make_shared<Storage>(Storage{std::move(data), {}, false});
        return t;
    }

    static Tensor scalar(T value) { return from({1}, {value}); }

    bool defined() const { return st_ != nullptr; }
    const Shape& shape() const { return shape_; }
    std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
    std::int64_t numel() const { return st_ ? static_cast<std::int64_t>(st_->data.size()) : 0; }
    std::int64_t extent(std::int64_t axis) const { return shape_[static_cast<std::size_t>(axis)]; }

    std::span<T> data() { return st_->data; }
    std::span<const T> data() const { return st_->data; }

    bool requires_grad() const { return st_ && st_->requires_grad; }
    void set_requires_grad(bool v) { st_->requires_grad = v; }

    bool has_grad() const { return st_ && !st_->grad.empty(); }

    // Allocates the grad buffer (zero-filled) on first use.
    std::span<T> grad() {
        if (st_->grad.empty()) st_->grad.assign(st_->data.size(), T(0));
        return st_->grad;
    }

    std::span<const T> grad() const { return st_->grad; }

    void zero_grad() {
        if (st_ && !st_->grad.empty()) std::fill(st_->grad.begin(), st_->grad.end(), T(0));
    }

    // Deep copy of data (grad not copied).
    Tensor clone() const {
        Tensor t;
        t.shape_ = shape_;
        t.st_ = std::make_shared<Storage>(Storage{st_->data, {}, st_->requires_grad});
        return t;
    }

    // Same storage viewed under a different shape.
    Tensor reshape(Shape new_shape) const {
        if (shape_numel(new_shape) != numel())
            throw std::invalid_argument("reshape: " + shape_str(shape_) + " -> " + shape_str(new_shape) +
                                        " changes element count");
        Tensor t(*this);
        t.shape_ = std::move(new_shape);
        return t;
    }

    bool same_storage(const Tensor& other) const { return st_ == other.st_; }

    // Convenience indexed access for tests and small utilities.
    template <typename... Ix>
    T& at(Ix... ix) {
        return st_->data[flat_index({static_cast<std::int64_t>(ix)...})];
    }
    template <typename... Ix>
    const T& at(Ix... ix) const {
        return st_->data[flat_index({static_cast<std::int64_t>(ix)...})];
    }

private:
    struct Storage {
        std::vector<T> data;
        std::vector<T> grad;
        bool requires_grad = false;
    };

    std::size_t flat_index(std::initializer_list<std::int64_t> ix) const {
        std::int64_t flat = 0;
        std::size_t axis = 0;
        for (auto i : ix) {
            flat = flat * shape_[axis] + i;
            ++axis;
        }
        return static_cast<std::size_t>(flat);
    }

    Shape shape_;
    std::shared_ptr<Storage> st_;
};

// Reverse-mode tape. Nodes are appended in execution order; backward replays
// them in strict reverse insertion order, which fixes the gradient
// accumulation order and keeps results bit-reproducible.
template <typename T>
class Tape {
public:
    void record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }

    std::size_t size() const { return nodes_.size(); }

    void backward(Tensor<T> loss) {
        if (loss.numel() != 1)
            throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
        loss.grad()[0] = T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

private:
    std::vector<std::function<void()>> nodes_;
};

// Fixed-order pairwise reduction; deterministic and more accurate than a
// plain left fold on long inputs.
template <typename T>
T pairwise_sum(std::span<const T> v) {
    if (v.size() <= 8) {
        T s = 0;
        for (const T& x : v) s += x;
        return s;
    }
    const std::size_t half = v.size() / 2;
    return pairwise_sum(v.subspan(0, half)) + pairwise_sum(v.subspan(half));
}

// Copy of a contiguous range along one axis (inverse of concat).
template <typename T>
Tensor<T> narrow(const Tensor<T>& t, std::int64_t axis, std::int64_t start, std::int64_t length);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace fatseg
