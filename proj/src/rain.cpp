#include "rainnet/rain.hpp"

#include <algorithm>
#include <cmath>

namespace rainnet {

void RainConfig::validate() const {
    if (streak_count < 0) throw ContractError("streak_count must be >= 0");
    if (intensity_min < 0)
        throw ContractError("streak intensity must be >= 0, streaks brighten");
    if (length_min > length_max || angle_min_deg > angle_max_deg ||
        intensity_min > intensity_max)
        throw ContractError("rain config ranges need min <= max");
    if (width < 1.0) throw ContractError("streak width must be >= 1 pixel");
    if (noise_sigma < 0) throw ContractError("noise_sigma must be >= 0");
}

Tensor<float> render_rain_layer(int height, int width, const RainConfig& cfg,
                                Rng& rng) {
    if (height <= 0 || width <= 0)
        throw ContractError("rain layer extents must be positive");
    cfg.validate();

    std::vector<float> plane(static_cast<size_t>(height) * width, 0.0f);
    const double sigma = cfg.width / 2.0;
    const double reach = 3.0 * sigma;
    const double deg = 3.14159265358979323846 / 180.0;

    for (int s = 0; s < cfg.streak_count; ++s) {
        const double cx = rng.uniform(0.0, width);
        const double cy = rng.uniform(0.0, height);
        const double len = rng.uniform(cfg.length_min, cfg.length_max);
        const double angle = rng.uniform(cfg.angle_min_deg, cfg.angle_max_deg) * deg;
        const double intensity = rng.uniform(cfg.intensity_min, cfg.intensity_max);

        // direction measured from vertical; streaks fall downward
        const double dx = std::sin(angle), dy = std::cos(angle);
        const double x0 = cx - dx * len / 2, y0 = cy - dy * len / 2;
        const double x1 = cx + dx * len / 2, y1 = cy + dy * len / 2;

        const int ylo = std::max(0, static_cast<int>(std::floor(std::min(y0, y1) - reach)));
        const int yhi = std::min(height - 1, static_cast<int>(std::ceil(std::max(y0, y1) + reach)));
        const int xlo = std::max(0, static_cast<int>(std::floor(std::min(x0, x1) - reach)));
        const int xhi = std::min(width - 1, static_cast<int>(std::ceil(std::max(x0, x1) + reach)));

        const double seg_x = x1 - x0, seg_y = y1 - y0;
        const double seg_len2 = seg_x * seg_x + seg_y * seg_y;
        for (int py = ylo; py <= yhi; ++py) {
            for (int px = xlo; px <= xhi; ++px) {
                // distance from pixel center to the segment
                const double rx = px + 0.5 - x0, ry = py + 0.5 - y0;
                double t = seg_len2 > 0 ? (rx * seg_x + ry * seg_y) / seg_len2 : 0.0;
                t = std::clamp(t, 0.0, 1.0);
                const double ex = rx - t * seg_x, ey = ry - t * seg_y;
                const double d2 = ex * ex + ey * ey;
                if (d2 > reach * reach) continue;
                plane[static_cast<size_t>(py) * width + px] +=
                    static_cast<float>(intensity * std::exp(-d2 / (2.0 * sigma * sigma)));
            }
        }
    }

    // achromatic: the same layer on all three channels
    std::vector<float> data;
    data.reserve(plane.size() * 3);
    for (int c = 0; c < 3; ++c) data.insert(data.end(), plane.begin(), plane.end());
    return Tensor<float>::from_vector({1, 3, height, width}, std::move(data));
}

Tensor<float> render_noise_layer(int height, int width, double sigma, Rng& rng) {
    if (height <= 0 || width <= 0)
        throw ContractError("noise layer extents must be positive");
    if (sigma < 0) throw ContractError("noise sigma must be >= 0");
    auto out = Tensor<float>::zeros({1, 3, height, width});
    if (sigma > 0) {
        for (auto& v : out.values_mut()) {
            v = static_cast<float>(sigma * rng.gaussian());
        }
    }
    return out;
}

SyntheticPair synthesize(const Tensor<float>& x, const RainConfig& cfg) {
    const Shape s = x.shape();
    if (s.n != 1 || s.c != 3)
        throw ContractError("synthesize expects a [1,3,H,W] image, got " + s.str());
    for (float v : x.values()) {
        if (!(v >= 0.0f && v <= 1.0f))
            throw ContractError("clean image values must lie in [0,1]");
    }
    Rng rng(cfg.seed);
    auto r = render_rain_layer(s.h, s.w, cfg, rng);
    auto noise = render_noise_layer(s.h, s.w, cfg.noise_sigma, rng);
    auto y = add(add(x, r), noise);
    return {x, y, r, noise};
}

}  // namespace rainnet
