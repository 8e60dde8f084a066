#pragma once

#include <cstdint>

#include "rainnet/rng.hpp"
#include "rainnet/tensor.hpp"

namespace rainnet {

// Knobs of the synthetic rain/noise generator. Streaks only ever brighten
// (intensity >= 0); raindrops act as small lenses that refract light toward
// the camera.
struct RainConfig {
    int streak_count = 40;          // per image
    double length_min = 8.0;        // pixels
    double length_max = 20.0;
    double angle_min_deg = -15.0;   // degrees from vertical
    double angle_max_deg = 15.0;
    double width = 1.5;             // cross-profile width, pixels
    double intensity_min = 0.1;     // normalized units
    double intensity_max = 0.4;
    double noise_sigma = 0.02;      // normalized units
    std::uint64_t seed = 0;

    void validate() const;
};

// Paired sample: y == x + r + noise elementwise in working precision,
// r >= 0 everywhere, noise zero-mean.
struct SyntheticPair {
    Tensor<float> x;      // clean image in [0,1]
    Tensor<float> y;      // observed rainy image, NOT clamped
    Tensor<float> r;      // rain layer
    Tensor<float> noise;  // noise layer
};

// Sum of anti-aliased bright streaks with a Gaussian cross profile,
// identical across the three channels.
Tensor<float> render_rain_layer(int height, int width, const RainConfig& cfg,
                                Rng& rng);

// i.i.d. Gaussian(0, sigma^2) per element.
Tensor<float> render_noise_layer(int height, int width, double sigma, Rng& rng);

// Renders both layers with cfg.seed and composes the observation.
SyntheticPair synthesize(const Tensor<float>& x, const RainConfig& cfg);

}  // namespace rainnet
