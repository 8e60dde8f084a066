#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "rainnet/errors.hpp"

namespace rainnet {

// Two precision modes share one implementation: Standard (float) carries
// training and inference, Verification (double) carries finite-difference
// gradient checks. A computation graph never mixes the two; the template
// parameter enforces it.
enum class Precision { Standard, Verification };

struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::int64_t numel() const {
        return static_cast<std::int64_t>(n) * c * h * w;
    }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

namespace detail {

// One vertex of the computation graph. `backprop` scatters an upstream
// gradient into the parents' upstream buffers; persistent `grad` accumulates
// across backward() calls until zero_grad().
template <typename T>
struct Node {
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;  // sized on creation when requires_grad, else empty
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // parent_upstream slots are null when no gradient is needed there.
    std::function<void(const Node& self, const std::vector<T>& upstream,
                       std::span<std::vector<T>*> parent_upstream)>
        backprop;
};

}  // namespace detail

// Dense 4-D tensor (batch, channel, height, width), row-major, with reverse
// mode automatic differentiation over the fixed operation set below. A Tensor
// is a cheap shared handle onto its graph node.
template <typename T>
class Tensor {
    static_assert(std::is_floating_point_v<T>);

public:
    Tensor() = default;

    static Tensor zeros(Shape s, bool requires_grad = false);
    static Tensor full(Shape s, T value, bool requires_grad = false);
    static Tensor from_vector(Shape s, std::vector<T> values,
                              bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::int64_t size() const { return node_->shape.numel(); }

    std::span<const T> values() const { return node_->values; }
    // Mutating a leaf's values invalidates any graph already built on it;
    // callers rebuild the forward pass afterwards (optimizer, finite diff).
    std::span<T> values_mut() { return node_->values; }

    bool requires_grad() const { return node_->requires_grad; }
    std::span<const T> grad() const { return node_->grad; }
    void zero_grad();

    // Value of a single-element tensor.
    T item() const;

    // Internal: graph plumbing for the operations in this module.
    const std::shared_ptr<detail::Node<T>>& impl() const { return node_; }
    static Tensor wrap(std::shared_ptr<detail::Node<T>> node) {
        Tensor t;
        t.node_ = std::move(node);
        return t;
    }

private:
    std::shared_ptr<detail::Node<T>> node_;
};

// Cross-correlation with zero padding, stride 1. kernel is [Cout,Cin,kh,kw]
// with kh, kw odd; bias is [1,Cout,1,1]. Differentiable in input, kernel and
// bias.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel,
                 const Tensor<T>& bias, int padding);

// Elementwise max(0, v). Gradient at exactly 0 is 0.
template <typename T>
Tensor<T> relu(const Tensor<T>& input);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);

// a's channels first, then b's. N, H, W must match.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

// Space-to-depth: out(n, c*r*r + dy*r + dx, y, x) = in(n, c, y*r+dy, x*r+dx).
template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& input, int r);

// Depth-to-space, exact inverse of pixel_unshuffle.
template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& input, int r);

// Mean over all elements of (a-b)^2, as a scalar [1,1,1,1] tensor.
template <typename T>
Tensor<T> mean_squared(const Tensor<T>& a, const Tensor<T>& b);

// Reverse-mode sweep from a scalar loss. Gradients of every requires_grad
// ancestor accumulate (+=) until explicitly reset via zero_grad().
template <typename T>
void backward(const Tensor<T>& loss);

// Central finite differences (f(x+h e_i) - f(x-h e_i)) / 2h per element of
// `at`. Verification precision only; `f` re-evaluates the full forward pass
// against the mutated values.
std::vector<double> finite_diff_grad(const std::function<double()>& f,
                                     Tensor<double>& at, double h);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace rainnet
