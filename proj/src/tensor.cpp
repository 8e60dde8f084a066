#include "rainnet/tensor.hpp"

#include <algorithm>
#include <cstdio>
#include <unordered_map>
#include <unordered_set>

namespace rainnet {

std::string Shape::str() const {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "[%d,%d,%d,%d]", n, c, h, w);
    return buf;
}

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw ContractError(msg);
}

template <typename T>
using NodePtr = std::shared_ptr<detail::Node<T>>;

template <typename T>
NodePtr<T> make_leaf(Shape s, bool requires_grad) {
    auto node = std::make_shared<detail::Node<T>>();
    node->shape = s;
    node->values.assign(static_cast<size_t>(s.numel()), T(0));
    node->requires_grad = requires_grad;
    if (requires_grad) node->grad.assign(node->values.size(), T(0));
    return node;
}

template <typename T>
NodePtr<T> make_result(Shape s, std::vector<NodePtr<T>> parents) {
    auto node = std::make_shared<detail::Node<T>>();
    node->shape = s;
    node->values.assign(static_cast<size_t>(s.numel()), T(0));
    node->parents = std::move(parents);
    for (const auto& p : node->parents) {
        if (p->requires_grad) node->requires_grad = true;
    }
    if (node->requires_grad) node->grad.assign(node->values.size(), T(0));
    return node;
}

}  // namespace

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape s, bool requires_grad) {
    require(s.n >= 0 && s.c >= 0 && s.h >= 0 && s.w >= 0,
            "tensor extents must be non-negative, got " + s.str());
    return wrap(make_leaf<T>(s, requires_grad));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape s, T value, bool requires_grad) {
    Tensor t = zeros(s, requires_grad);
    std::fill(t.node_->values.begin(), t.node_->values.end(), value);
    return t;
}

template <typename T>
Tensor<T> Tensor<T>::from_vector(Shape s, std::vector<T> values,
                                 bool requires_grad) {
    require(static_cast<std::int64_t>(values.size()) == s.numel(),
            "value count does not match shape " + s.str());
    Tensor t = zeros(s, requires_grad);
    t.node_->values = std::move(values);
    return t;
}

template <typename T>
void Tensor<T>::zero_grad() {
    std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
T Tensor<T>::item() const {
    require(node_ && node_->shape.numel() == 1,
            "item() needs a single-element tensor");
    return node_->values[0];
}

// ---------------------------------------------------------------------------
// conv2d

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel,
                 const Tensor<T>& bias, int padding) {
    const Shape in = input.shape();
    const Shape ks = kernel.shape();
    const Shape bs = bias.shape();
    require(ks.h % 2 == 1 && ks.w % 2 == 1,
            "kernel extents must be odd, got " + ks.str());
    require(padding >= 0, "padding must be >= 0");
    require(ks.c == in.c, "kernel input channels " + std::to_string(ks.c) +
                              " do not match input channels " +
                              std::to_string(in.c));
    require(bs == Shape{1, ks.n, 1, 1},
            "bias must be [1,Cout,1,1], got " + bs.str());

    const int N = in.n, Ci = in.c, H = in.h, W = in.w;
    const int Co = ks.n, kh = ks.h, kw = ks.w, p = padding;
    const int Ho = H + 2 * p - kh + 1;
    const int Wo = W + 2 * p - kw + 1;
    require(Ho >= 1 && Wo >= 1, "conv2d output extent would be " +
                                    std::to_string(Ho) + "x" +
                                    std::to_string(Wo));

    auto node = make_result<T>(Shape{N, Co, Ho, Wo},
                               {input.impl(), kernel.impl(), bias.impl()});
    const T* x = input.impl()->values.data();
    const T* k = kernel.impl()->values.data();
    const T* b = bias.impl()->values.data();
    T* out = node->values.data();

    for (int n = 0; n < N; ++n) {
        for (int co = 0; co < Co; ++co) {
            T* out_plane = out + (static_cast<std::int64_t>(n) * Co + co) * Ho * Wo;
            std::fill(out_plane, out_plane + static_cast<std::int64_t>(Ho) * Wo, b[co]);
            for (int ci = 0; ci < Ci; ++ci) {
                const T* in_plane =
                    x + (static_cast<std::int64_t>(n) * Ci + ci) * H * W;
                const T* k_plane = k + ((static_cast<std::int64_t>(co) * Ci + ci) * kh) * kw;
                for (int ky = 0; ky < kh; ++ky) {
                    for (int kx = 0; kx < kw; ++kx) {
                        const T wv = k_plane[ky * kw + kx];
                        const int oy0 = std::max(0, p - ky);
                        const int oy1 = std::min(Ho, H + p - ky);
                        const int ox0 = std::max(0, p - kx);
                        const int ox1 = std::min(Wo, W + p - kx);
                        for (int oy = oy0; oy < oy1; ++oy) {
                            const T* src =
                                in_plane + (oy + ky - p) * W + (ox0 + kx - p);
                            T* dst = out_plane + oy * Wo + ox0;
                            for (int i = 0; i < ox1 - ox0; ++i) {
                                dst[i] += wv * src[i];
                            }
                        }
                    }
                }
            }
        }
    }

    node->backprop = [p](const detail::Node<T>& self,
                         const std::vector<T>& upstream,
                         std::span<std::vector<T>*> parent_up) {
        const auto& in_node = *self.parents[0];
        const auto& k_node = *self.parents[1];
        const int N = in_node.shape.n, Ci = in_node.shape.c;
        const int H = in_node.shape.h, W = in_node.shape.w;
        const int Co = k_node.shape.n, kh = k_node.shape.h, kw = k_node.shape.w;
        const int Ho = self.shape.h, Wo = self.shape.w;
        const T* up = upstream.data();
        const T* x = in_node.values.data();
        const T* k = k_node.values.data();

        for (int n = 0; n < N; ++n) {
            for (int co = 0; co < Co; ++co) {
                const T* up_plane =
                    up + (static_cast<std::int64_t>(n) * Co + co) * Ho * Wo;
                if (parent_up[2]) {
                    T acc = 0;
                    for (std::int64_t i = 0; i < static_cast<std::int64_t>(Ho) * Wo; ++i)
                        acc += up_plane[i];
                    (*parent_up[2])[co] += acc;
                }
                for (int ci = 0; ci < Ci; ++ci) {
                    const T* in_plane =
                        x + (static_cast<std::int64_t>(n) * Ci + ci) * H * W;
                    const std::int64_t k_base =
                        ((static_cast<std::int64_t>(co) * Ci + ci) * kh) * kw;
                    for (int ky = 0; ky < kh; ++ky) {
                        for (int kx = 0; kx < kw; ++kx) {
                            const int oy0 = std::max(0, p - ky);
                            const int oy1 = std::min(Ho, H + p - ky);
                            const int ox0 = std::max(0, p - kx);
                            const int ox1 = std::min(Wo, W + p - kx);
                            const int len = ox1 - ox0;
                            if (len <= 0) continue;
                            if (parent_up[0]) {
                                const T wv = k[k_base + ky * kw + kx];
                                T* gin = parent_up[0]->data() +
                                         (static_cast<std::int64_t>(n) * Ci + ci) * H * W;
                                for (int oy = oy0; oy < oy1; ++oy) {
                                    T* dst = gin + (oy + ky - p) * W + (ox0 + kx - p);
                                    const T* src = up_plane + oy * Wo + ox0;
                                    for (int i = 0; i < len; ++i) dst[i] += wv * src[i];
                                }
                            }
                            if (parent_up[1]) {
                                T acc = 0;
                                for (int oy = oy0; oy < oy1; ++oy) {
                                    const T* xin =
                                        in_plane + (oy + ky - p) * W + (ox0 + kx - p);
                                    const T* src = up_plane + oy * Wo + ox0;
                                    for (int i = 0; i < len; ++i) acc += xin[i] * src[i];
                                }
                                (*parent_up[1])[k_base + ky * kw + kx] += acc;
                            }
                        }
                    }
                }
            }
        }
    };
    return Tensor<T>::wrap(node);
}

// ---------------------------------------------------------------------------
// elementwise ops

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
    auto node = make_result<T>(input.shape(), {input.impl()});
    const auto& x = input.impl()->values;
    for (size_t i = 0; i < x.size(); ++i) {
        node->values[i] = x[i] > T(0) ? x[i] : T(0);
    }
    node->backprop = [](const detail::Node<T>& self,
                        const std::vector<T>& upstream,
                        std::span<std::vector<T>*> parent_up) {
        if (!parent_up[0]) return;
        const auto& x = self.parents[0]->values;
        auto& g = *parent_up[0];
        for (size_t i = 0; i < x.size(); ++i) {
            if (x[i] > T(0)) g[i] += upstream[i];
        }
    };
    return Tensor<T>::wrap(node);
}

namespace {

template <typename T>
Tensor<T> add_or_sub(const Tensor<T>& a, const Tensor<T>& b, bool subtract) {
    require(a.shape() == b.shape(), "shape mismatch: " + a.shape().str() +
                                        " vs " + b.shape().str());
    auto node = make_result<T>(a.shape(), {a.impl(), b.impl()});
    const auto& av = a.impl()->values;
    const auto& bv = b.impl()->values;
    if (subtract) {
        for (size_t i = 0; i < av.size(); ++i) node->values[i] = av[i] - bv[i];
    } else {
        for (size_t i = 0; i < av.size(); ++i) node->values[i] = av[i] + bv[i];
    }
    node->backprop = [subtract](const detail::Node<T>&,
                                const std::vector<T>& upstream,
                                std::span<std::vector<T>*> parent_up) {
        if (parent_up[0]) {
            auto& g = *parent_up[0];
            for (size_t i = 0; i < upstream.size(); ++i) g[i] += upstream[i];
        }
        if (parent_up[1]) {
            auto& g = *parent_up[1];
            if (subtract) {
                for (size_t i = 0; i < upstream.size(); ++i) g[i] -= upstream[i];
            } else {
                for (size_t i = 0; i < upstream.size(); ++i) g[i] += upstream[i];
            }
        }
    };
    return Tensor<T>::wrap(node);
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return add_or_sub(a, b, false);
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return add_or_sub(a, b, true);
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    const Shape sa = a.shape(), sb = b.shape();
    require(sa.n == sb.n && sa.h == sb.h && sa.w == sb.w,
            "concat_channels needs matching N,H,W: " + sa.str() + " vs " +
                sb.str());
    const Shape out{sa.n, sa.c + sb.c, sa.h, sa.w};
    auto node = make_result<T>(out, {a.impl(), b.impl()});
    const std::int64_t plane = static_cast<std::int64_t>(sa.h) * sa.w;
    const auto& av = a.impl()->values;
    const auto& bv = b.impl()->values;
    for (int n = 0; n < out.n; ++n) {
        T* dst = node->values.data() + n * out.c * plane;
        std::copy_n(av.data() + n * sa.c * plane, sa.c * plane, dst);
        std::copy_n(bv.data() + n * sb.c * plane, sb.c * plane,
                    dst + sa.c * plane);
    }
    node->backprop = [sa, sb, plane](const detail::Node<T>& self,
                                     const std::vector<T>& upstream,
                                     std::span<std::vector<T>*> parent_up) {
        const int oc = sa.c + sb.c;
        for (int n = 0; n < sa.n; ++n) {
            const T* up = upstream.data() + static_cast<std::int64_t>(n) * oc * plane;
            if (parent_up[0]) {
                T* g = parent_up[0]->data() + static_cast<std::int64_t>(n) * sa.c * plane;
                for (std::int64_t i = 0; i < sa.c * plane; ++i) g[i] += up[i];
            }
            if (parent_up[1]) {
                T* g = parent_up[1]->data() + static_cast<std::int64_t>(n) * sb.c * plane;
                const T* u = up + sa.c * plane;
                for (std::int64_t i = 0; i < sb.c * plane; ++i) g[i] += u[i];
            }
        }
    };
    return Tensor<T>::wrap(node);
}

// ---------------------------------------------------------------------------
// pixel shuffle pair

namespace {

// The shuffle pair moves data between a full layout [N,C,H,W] and a packed
// layout [N,C*r*r,H/r,W/r] under the fixed index map
// packed(n, c*r*r + dy*r + dx, y, x) = full(n, c, y*r+dy, x*r+dx).

template <typename T>
void gather_packed(const Shape& full, int r, const T* full_side,
                   T* packed_side) {
    const int C = full.c, H = full.h, W = full.w;
    const int Hp = H / r, Wp = W / r;
    for (int n = 0; n < full.n; ++n) {
        for (int c = 0; c < C; ++c) {
            const std::int64_t full_base =
                (static_cast<std::int64_t>(n) * C + c) * H * W;
            for (int dy = 0; dy < r; ++dy) {
                for (int dx = 0; dx < r; ++dx) {
                    const int cp = (c * r + dy) * r + dx;
                    const std::int64_t packed_base =
                        (static_cast<std::int64_t>(n) * C * r * r + cp) * Hp * Wp;
                    for (int y = 0; y < Hp; ++y) {
                        const std::int64_t frow = full_base + (static_cast<std::int64_t>(y) * r + dy) * W + dx;
                        const std::int64_t prow = packed_base + static_cast<std::int64_t>(y) * Wp;
                        for (int x = 0; x < Wp; ++x) {
                            packed_side[prow + x] = full_side[frow + static_cast<std::int64_t>(x) * r];
                        }
                    }
                }
            }
        }
    }
}
template <typename T>
void scatter_full(const Shape& full, int r, const T* packed_side,
                  T* full_side, bool accumulate) {
    const int C = full.c, H = full.h, W = full.w;
    const int Hp = H / r, Wp = W / r;
    for (int n = 0; n < full.n; ++n) {
        for (int c = 0; c < C; ++c) {
            const std::int64_t full_base =
                (static_cast<std::int64_t>(n) * C + c) * H * W;
            for (int dy = 0; dy < r; ++dy) {
                for (int dx = 0; dx < r; ++dx) {
                    const int cp = (c * r + dy) * r + dx;
                    const std::int64_t packed_base =
                        (static_cast<std::int64_t>(n) * C * r * r + cp) * Hp * Wp;
                    for (int y = 0; y < Hp; ++y) {
                        const std::int64_t frow = full_base + (static_cast<std::int64_t>(y) * r + dy) * W + dx;
                        const std::int64_t prow = packed_base + static_cast<std::int64_t>(y) * Wp;
                        for (int x = 0; x < Wp; ++x) {
                            if (accumulate) {
                                full_side[frow + static_cast<std::int64_t>(x) * r] += packed_side[prow + x];
                            } else {
                                full_side[frow + static_cast<std::int64_t>(x) * r] = packed_side[prow + x];
                            }
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& input, int r) {
    const Shape s = input.shape();
    require(r >= 1, "shuffle factor must be >= 1");
    require(s.h % r == 0 && s.w % r == 0,
            "extents of " + s.str() + " not divisible by r=" + std::to_string(r));
    const Shape out{s.n, s.c * r * r, s.h / r, s.w / r};
    auto node = make_result<T>(out, {input.impl()});
    gather_packed<T>(s, r, input.impl()->values.data(), node->values.data());
    node->backprop = [s, r](const detail::Node<T>&,
                            const std::vector<T>& upstream,
                            std::span<std::vector<T>*> parent_up) {
        if (!parent_up[0]) return;
        scatter_full<T>(s, r, upstream.data(), parent_up[0]->data(), true);
    };
    return Tensor<T>::wrap(node);
}

template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& input, int r) {
    const Shape s = input.shape();
    require(r >= 1, "shuffle factor must be >= 1");
    require(s.c % (r * r) == 0, "channels of " + s.str() +
                                    " not divisible by r^2=" +
                                    std::to_string(r * r));
    const Shape out{s.n, s.c / (r * r), s.h * r, s.w * r};
    auto node = make_result<T>(out, {input.impl()});
    scatter_full<T>(out, r, input.impl()->values.data(), node->values.data(),
                    false);
    node->backprop = [out, r](const detail::Node<T>&,
                              const std::vector<T>& upstream,
                              std::span<std::vector<T>*> parent_up) {
        if (!parent_up[0]) return;
        // gradient of depth-to-space is space-to-depth of the upstream
        std::vector<T> packed(parent_up[0]->size());
        gather_packed<T>(out, r, upstream.data(), packed.data());
        auto& g = *parent_up[0];
        for (size_t i = 0; i < g.size(); ++i) g[i] += packed[i];
    };
    return Tensor<T>::wrap(node);
}

// ---------------------------------------------------------------------------
// loss and backward

template <typename T>
Tensor<T> mean_squared(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.shape() == b.shape(), "shape mismatch: " + a.shape().str() +
                                        " vs " + b.shape().str());
    require(a.size() > 0, "mean_squared needs a non-empty tensor");
    auto node = make_result<T>(Shape{1, 1, 1, 1}, {a.impl(), b.impl()});
    const auto& av = a.impl()->values;
    const auto& bv = b.impl()->values;
    double acc = 0.0;
    for (size_t i = 0; i < av.size(); ++i) {
        const double d = static_cast<double>(av[i]) - static_cast<double>(bv[i]);
        acc += d * d;
    }
    node->values[0] = static_cast<T>(acc / static_cast<double>(av.size()));
    node->backprop = [](const detail::Node<T>& self,
                        const std::vector<T>& upstream,
                        std::span<std::vector<T>*> parent_up) {
        const auto& av = self.parents[0]->values;
        const auto& bv = self.parents[1]->values;
        const T scale = upstream[0] * T(2) / static_cast<T>(av.size());
        if (parent_up[0]) {
            auto& g = *parent_up[0];
            for (size_t i = 0; i < av.size(); ++i) g[i] += scale * (av[i] - bv[i]);
        }
        if (parent_up[1]) {
            auto& g = *parent_up[1];
            for (size_t i = 0; i < av.size(); ++i) g[i] -= scale * (av[i] - bv[i]);
        }
    };
    return Tensor<T>::wrap(node);
}

template <typename T>
void backward(const Tensor<T>& loss) {
    require(loss.defined() && loss.size() == 1,
            "backward needs a scalar loss tensor");

    using Node = detail::Node<T>;
    // Post-order over parent edges; reversing it yields an order where every
    // node is visited before its parents, i.e. after all of its consumers.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(loss.impl().get(), 0);
    seen.insert(loss.impl().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (seen.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // A node needs an upstream buffer iff a gradient can come to rest in it
    // or pass through it. Post-order lists parents first.
    std::unordered_map<Node*, bool> needs;
    needs.reserve(order.size());
    for (Node* node : order) {
        bool n = node->requires_grad;
        for (const auto& p : node->parents) {
            if (needs[p.get()]) n = true;
        }
        needs[node] = n;
    }

    std::unordered_map<Node*, std::vector<T>> upstream;
    upstream[loss.impl().get()] = {T(1)};

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        auto found = upstream.find(node);
        if (found == upstream.end()) continue;
        std::vector<T>& up = found->second;
        if (node->requires_grad) {
            for (size_t i = 0; i < up.size(); ++i) node->grad[i] += up[i];
        }
        if (node->backprop && !node->parents.empty()) {
            std::vector<std::vector<T>*> parent_up(node->parents.size(), nullptr);
            bool any = false;
            for (size_t i = 0; i < node->parents.size(); ++i) {
                Node* parent = node->parents[i].get();
                if (!needs[parent]) continue;
                auto [slot, inserted] = upstream.try_emplace(parent);
                if (inserted) slot->second.assign(parent->values.size(), T(0));
                parent_up[i] = &slot->second;
                any = true;
            }
            if (any) node->backprop(*node, up, parent_up);
        }
        upstream.erase(found);
    }
}

std::vector<double> finite_diff_grad(const std::function<double()>& f,
                                     Tensor<double>& at, double h) {
    if (h <= 0) throw ContractError("finite difference step must be > 0");
    auto vals = at.values_mut();
    std::vector<double> grad(vals.size());
    for (size_t i = 0; i < vals.size(); ++i) {
        const double saved = vals[i];
        vals[i] = saved + h;
        const double f_plus = f();
        vals[i] = saved - h;
        const double f_minus = f();
        vals[i] = saved;
        grad[i] = (f_plus - f_minus) / (2.0 * h);
    }
    return grad;
}

// ---------------------------------------------------------------------------

template class Tensor<float>;
template class Tensor<double>;

#define RAINNET_INSTANTIATE_OPS(T)                                            \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&,            \
                              const Tensor<T>&, int);                         \
    template Tensor<T> relu(const Tensor<T>&);                                \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);               \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);               \
    template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);   \
    template Tensor<T> pixel_unshuffle(const Tensor<T>&, int);                \
    template Tensor<T> pixel_shuffle(const Tensor<T>&, int);                  \
    template Tensor<T> mean_squared(const Tensor<T>&, const Tensor<T>&);      \
    template void backward(const Tensor<T>&);

RAINNET_INSTANTIATE_OPS(float)
RAINNET_INSTANTIATE_OPS(double)

#undef RAINNET_INSTANTIATE_OPS

}  // namespace rainnet
