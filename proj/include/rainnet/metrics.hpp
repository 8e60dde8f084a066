#pragma once

#include "rainnet/tensor.hpp"

namespace rainnet {

// Constants and window of the structural similarity index. Defaults are the
// standard reference formulation; dynamic_range is 1.0 for normalized images
// and 255 for 8-bit scale.
struct SsimParams {
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;
    int window_size = 11;
    double window_sigma = 1.5;
    double alpha = 1.0;  // luminance exponent
    double beta = 1.0;   // contrast exponent
    double gamma = 1.0;  // structure exponent
};

// Mean over every element (all channels) of the squared difference.
double mse_image(const Tensor<float>& x, const Tensor<float>& y);

// 10*log10(peak^2 / MSE); +infinity when the images are identical.
double psnr(const Tensor<float>& x, const Tensor<float>& y, double peak);

// Mean over all valid Gaussian-window positions and channels of
// l^alpha * c^beta * s^gamma. Windows never cross the image border.
double ssim(const Tensor<float>& x, const Tensor<float>& y,
            const SsimParams& params = {});

}  // namespace rainnet
