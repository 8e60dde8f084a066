#include "rainnet/model.hpp"

#include <cmath>
#include <limits>

#include "rainnet/rng.hpp"

namespace rainnet {

BranchConfig default_rain_config() { return {32, 4, 2, 3}; }
BranchConfig default_noise_config() { return {16, 2, 2, 6}; }

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw ContractError(msg);
}

template <typename T>
ConvParams<T> init_conv(int out_channels, int in_channels, Rng& rng) {
    const double s = std::sqrt(1.0 / (in_channels * 3 * 3));
    auto kernel =
        Tensor<T>::zeros({out_channels, in_channels, 3, 3}, true);
    for (auto& v : kernel.values_mut()) {
        v = static_cast<T>(rng.uniform(-s, s));
    }
    auto bias = Tensor<T>::zeros({1, out_channels, 1, 1}, true);
    return {kernel, bias};
}

template <typename T>
BranchParams<T> init_branch(const BranchConfig& cfg, Rng& rng) {
    const int r2 = cfg.shuffle_factor * cfg.shuffle_factor;
    BranchParams<T> branch;
    branch.head = init_conv<T>(cfg.hidden_channels, cfg.input_channels * r2, rng);
    branch.blocks.resize(cfg.num_blocks);
    for (auto& block : branch.blocks) {
        block.conv1 = init_conv<T>(cfg.hidden_channels, cfg.hidden_channels, rng);
        block.conv2 = init_conv<T>(cfg.hidden_channels, cfg.hidden_channels, rng);
    }
    branch.tail = init_conv<T>(3 * r2, cfg.hidden_channels, rng);
    return branch;
}

// Head and tail convolutions are linear; activations live only inside the
// residual blocks.
template <typename T>
Tensor<T> branch_forward(const BranchParams<T>& params, const BranchConfig& cfg,
                         const Tensor<T>& input) {
    auto z = pixel_unshuffle(input, cfg.shuffle_factor);
    z = conv2d(z, params.head.kernel, params.head.bias, 1);
    for (const auto& block : params.blocks) {
        z = residual_block_forward(z, block);
    }
    z = conv2d(z, params.tail.kernel, params.tail.bias, 1);
    return pixel_shuffle(z, cfg.shuffle_factor);
}

template <typename T>
void collect_branch(const char* prefix, BranchParams<T>& branch,
                    std::vector<NamedParam<T>>& out) {
    const std::string base(prefix);
    out.push_back({base + ".head.kernel", branch.head.kernel});
    out.push_back({base + ".head.bias", branch.head.bias});
    for (size_t i = 0; i < branch.blocks.size(); ++i) {
        const std::string b = base + ".block" + std::to_string(i);
        out.push_back({b + ".conv1.kernel", branch.blocks[i].conv1.kernel});
        out.push_back({b + ".conv1.bias", branch.blocks[i].conv1.bias});
        out.push_back({b + ".conv2.kernel", branch.blocks[i].conv2.kernel});
        out.push_back({b + ".conv2.bias", branch.blocks[i].conv2.bias});
    }
    out.push_back({base + ".tail.kernel", branch.tail.kernel});
    out.push_back({base + ".tail.bias", branch.tail.bias});
}

// --- exact additive reconstruction -----------------------------------------
//
// The recovery is the rounded subtraction x = (y - r) - n, so re-adding the
// layers misses y by rounding in roughly a third of the elements. The triple
// is therefore snapped so that (x + r) + n == y bit for bit: x is walked onto
// the preimage of y, and where the value grids of the intermediate sums make
// y unreachable from x alone (they can be coarser than y's own grid, which
// also flips reachable parity classes), r and n are allowed to move by a few
// ulp as well. A preimage exists whenever y lies on a value grid no finer
// than the coarsest intermediate, e.g. for dyadic-quantized observations.

template <typename T>
bool walk_recovered(T y, T r, T n, T& x) {
    const auto recon = [r, n](T v) { return (v + r) + n; };
    if (recon(x) == y) return true;
    for (int iter = 0; iter < 6; ++iter) {
        const T err = y - recon(x);
        const T next = x + err;
        if (err == T(0) || next == x) break;
        x = next;
        if (recon(x) == y) return true;
    }
    T lo = x, hi = x;
    for (int step = 0; step < 12; ++step) {
        hi = std::nextafter(hi, std::numeric_limits<T>::infinity());
        if (recon(hi) == y) {
            x = hi;
            return true;
        }
        lo = std::nextafter(lo, -std::numeric_limits<T>::infinity());
        if (recon(lo) == y) {
            x = lo;
            return true;
        }
    }
    return false;
}

template <typename T>
T stepped(T v, int k) {
    const T toward = k > 0 ? std::numeric_limits<T>::infinity()
                           : -std::numeric_limits<T>::infinity();
    for (int i = 0; i < std::abs(k); ++i) v = std::nextafter(v, toward);
    return v;
}

template <typename T>
void snap_triple(T y, T& r, T& n, T& x) {
    if (walk_recovered(y, r, n, x)) return;
    const T r0 = r, n0 = n, x0 = x;

    // Fold the remaining reconstruction residual into the noise layer and
    // re-derive x, a few rounds; this closes the coarse part of the gap.
    for (int round = 0; round < 4; ++round) {
        const T e = y - ((x + r) + n);
        const T n2 = n + e;
        if (e == T(0) || n2 == n) break;
        n = n2;
        x = (y - r) - n;
        if (walk_recovered(y, r, n, x)) return;
    }

    // Parity rescue: single-ulp steps of both layers, at their own grid and
    // at the coarsest operand's grid.
    const T scale = std::max(std::max(std::fabs(y), std::fabs(x)),
                             std::max(std::fabs(r), std::fabs(n)));
    const T delta =
        (std::nextafter(scale, std::numeric_limits<T>::infinity()) - scale) / 2;
    static constexpr int kSteps[] = {0, 1, -1, 2, -2};
    for (int dr : kSteps) {
        for (int dn : kSteps) {
            if (dr == 0 && dn == 0) continue;
            T r2 = stepped(r, dr);
            T n2 = stepped(n, dn);
            T x2 = (y - r2) - n2;
            if (walk_recovered(y, r2, n2, x2)) {
                r = r2, n = n2, x = x2;
                return;
            }
            if (delta > T(0)) {
                r2 = r + static_cast<T>(dr) * delta;
                n2 = n + static_cast<T>(dn) * delta;
                x2 = (y - r2) - n2;
                if (walk_recovered(y, r2, n2, x2)) {
                    r = r2, n = n2, x = x2;
                    return;
                }
            }
        }
    }
    r = r0, n = n0, x = x0;  // no exact preimage; keep the raw subtraction
}

// Value-adjusted view of `raw` with an identity backprop: the snap moves
// values by at most a few ulp, below the working precision of the gradient.
template <typename T>
Tensor<T> passthrough_node(const Tensor<T>& raw, std::vector<T> values) {
    auto node = std::make_shared<detail::Node<T>>();
    node->shape = raw.shape();
    node->values = std::move(values);
    node->parents = {raw.impl()};
    node->requires_grad = raw.impl()->requires_grad;
    if (node->requires_grad)
        node->grad.assign(node->values.size(), T(0));
    node->backprop = [](const detail::Node<T>&, const std::vector<T>& upstream,
                        std::span<std::vector<T>*> parent_up) {
        if (!parent_up[0]) return;
        auto& g = *parent_up[0];
        for (size_t i = 0; i < upstream.size(); ++i) g[i] += upstream[i];
    };
    return Tensor<T>::wrap(node);
}

}  // namespace

template <typename T>
std::vector<NamedParam<T>> DerainModel<T>::parameters() {
    std::vector<NamedParam<T>> out;
    collect_branch("rain", rain, out);
    collect_branch("noise", noise, out);
    return out;
}

template <typename T>
void DerainModel<T>::zero_grads() {
    for (auto& p : parameters()) p.tensor.zero_grad();
}

template <typename T>
Tensor<T> residual_block_forward(const Tensor<T>& x,
                                 const ResidualBlockParams<T>& params) {
    require(x.shape().c == params.conv1.kernel.shape().c,
            "residual block expects " +
                std::to_string(params.conv1.kernel.shape().c) +
                " channels, got " + std::to_string(x.shape().c));
    auto f = conv2d(relu(conv2d(x, params.conv1.kernel, params.conv1.bias, 1)),
                    params.conv2.kernel, params.conv2.bias, 1);
    return relu(add(f, x));
}

template <typename T>
DerainModel<T> init_model(const BranchConfig& rain_cfg,
                          const BranchConfig& noise_cfg, std::uint64_t seed) {
    require(rain_cfg.hidden_channels > 0 && rain_cfg.num_blocks > 0 &&
                rain_cfg.shuffle_factor > 0 && noise_cfg.hidden_channels > 0 &&
                noise_cfg.num_blocks > 0 && noise_cfg.shuffle_factor > 0,
            "branch config values must be positive");
    DerainModel<T> model;
    model.rain_cfg = rain_cfg;
    model.noise_cfg = noise_cfg;
    model.seed = seed;
    Rng rng(seed);
    model.rain = init_branch<T>(rain_cfg, rng);
    model.noise = init_branch<T>(noise_cfg, rng);
    return model;
}

template <typename T>
Tensor<T> rain_branch_forward(const DerainModel<T>& model, const Tensor<T>& y) {
    require(y.shape().c == model.rain_cfg.input_channels,
            "rain branch expects " +
                std::to_string(model.rain_cfg.input_channels) +
                " channels, got " + std::to_string(y.shape().c));
    return branch_forward(model.rain, model.rain_cfg, y);
}

template <typename T>
Tensor<T> noise_branch_forward(const DerainModel<T>& model, const Tensor<T>& y,
                               const Tensor<T>& r_hat) {
    auto derained = sub(y, r_hat);
    auto stacked = concat_channels(derained, y);  // cross-layer skip
    require(stacked.shape().c == model.noise_cfg.input_channels,
            "noise branch expects " +
                std::to_string(model.noise_cfg.input_channels) +
                " input channels, got " + std::to_string(stacked.shape().c));
    return branch_forward(model.noise, model.noise_cfg, stacked);
}

template <typename T>
ModelOutput<T> model_forward(const DerainModel<T>& model, const Tensor<T>& y) {
    auto r_raw = rain_branch_forward(model, y);
    auto n_raw = noise_branch_forward(model, y, r_raw);
    auto x_raw = sub(sub(y, r_raw), n_raw);

    const auto yv = y.values();
    std::vector<T> rv(r_raw.values().begin(), r_raw.values().end());
    std::vector<T> nv(n_raw.values().begin(), n_raw.values().end());
    std::vector<T> xv(x_raw.values().begin(), x_raw.values().end());
    for (size_t i = 0; i < xv.size(); ++i) {
        snap_triple(yv[i], rv[i], nv[i], xv[i]);
    }

    return {passthrough_node(r_raw, std::move(rv)),
            passthrough_node(n_raw, std::move(nv)),
            passthrough_node(x_raw, std::move(xv))};
}

#define RAINNET_INSTANTIATE_MODEL(T)                                          \
    template struct DerainModel<T>;                                           \
    template Tensor<T> residual_block_forward(const Tensor<T>&,              \
                                              const ResidualBlockParams<T>&); \
    template DerainModel<T> init_model(const BranchConfig&,                   \
                                       const BranchConfig&, std::uint64_t);   \
    template Tensor<T> rain_branch_forward(const DerainModel<T>&,             \
                                           const Tensor<T>&);                 \
    template Tensor<T> noise_branch_forward(                                  \
        const DerainModel<T>&, const Tensor<T>&, const Tensor<T>&);           \
    template ModelOutput<T> model_forward(const DerainModel<T>&,              \
                                          const Tensor<T>&);

RAINNET_INSTANTIATE_MODEL(float)
RAINNET_INSTANTIATE_MODEL(double)

#undef RAINNET_INSTANTIATE_MODEL

}  // namespace rainnet
