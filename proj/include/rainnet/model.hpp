#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rainnet/tensor.hpp"

namespace rainnet {

// Shape of one branch. The rain branch sees the 3-channel observation, the
// noise branch sees the 6-channel cross-layer concatenation.
struct BranchConfig {
    int hidden_channels = 32;
    int num_blocks = 4;
    int shuffle_factor = 2;
    int input_channels = 3;

    bool operator==(const BranchConfig&) const = default;
};

BranchConfig default_rain_config();
BranchConfig default_noise_config();

template <typename T>
struct ConvParams {
    Tensor<T> kernel;  // [Cout,Cin,3,3]
    Tensor<T> bias;    // [1,Cout,1,1]
};

template <typename T>
struct ResidualBlockParams {
    ConvParams<T> conv1;
    ConvParams<T> conv2;
};

template <typename T>
struct BranchParams {
    ConvParams<T> head;
    std::vector<ResidualBlockParams<T>> blocks;
    ConvParams<T> tail;
};

template <typename T>
struct NamedParam {
    std::string name;
    Tensor<T> tensor;  // shared handle onto the model's parameter
};

// The two cascaded branches: rain estimates R from Y, noise estimates N from
// concat(Y - R, Y), and the recovery is X = Y - R - N.
template <typename T>
struct DerainModel {
    BranchConfig rain_cfg;
    BranchConfig noise_cfg;
    std::uint64_t seed = 0;
    BranchParams<T> rain;
    BranchParams<T> noise;

    std::vector<NamedParam<T>> parameters();
    void zero_grads();
};

template <typename T>
struct ModelOutput {
    Tensor<T> r_hat;  // estimated rain layer
    Tensor<T> n_hat;  // estimated noise layer
    Tensor<T> x_hat;  // recovered image, y - r_hat - n_hat
};

// relu(conv2(relu(conv1(x))) + x); both convolutions are 3x3, padding 1.
template <typename T>
Tensor<T> residual_block_forward(const Tensor<T>& x,
                                 const ResidualBlockParams<T>& params);

// Deterministic init: kernels uniform in [-s, s] with s = sqrt(1/(Cin*kh*kw)),
// biases zero.
template <typename T>
DerainModel<T> init_model(const BranchConfig& rain_cfg,
                          const BranchConfig& noise_cfg, std::uint64_t seed);

template <typename T>
Tensor<T> rain_branch_forward(const DerainModel<T>& model, const Tensor<T>& y);

template <typename T>
Tensor<T> noise_branch_forward(const DerainModel<T>& model, const Tensor<T>& y,
                               const Tensor<T>& r_hat);

// Full cascade. The returned layers reconstruct the observation exactly:
// (x_hat + r_hat) + n_hat == y bit for bit, elementwise in that order.
template <typename T>
ModelOutput<T> model_forward(const DerainModel<T>& model, const Tensor<T>& y);

extern template struct DerainModel<float>;
extern template struct DerainModel<double>;

}  // namespace rainnet
