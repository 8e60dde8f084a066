#include "rainnet/metrics.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace rainnet {

namespace {

void check_same_shape(const Tensor<float>& x, const Tensor<float>& y) {
    if (!(x.shape() == y.shape()))
        throw ContractError("metric inputs differ in shape: " + x.shape().str() +
                            " vs " + y.shape().str());
}

}  // namespace

double mse_image(const Tensor<float>& x, const Tensor<float>& y) {
    check_same_shape(x, y);
    if (x.size() == 0) throw ContractError("metric inputs must be non-empty");
    double acc = 0.0;
    const auto xv = x.values(), yv = y.values();
    for (size_t i = 0; i < xv.size(); ++i) {
        const double d = static_cast<double>(xv[i]) - yv[i];
        acc += d * d;
    }
    return acc / static_cast<double>(xv.size());
}

double psnr(const Tensor<float>& x, const Tensor<float>& y, double peak) {
    if (peak <= 0) throw ContractError("psnr peak must be > 0");
    const double mse = mse_image(x, y);
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const Tensor<float>& x, const Tensor<float>& y,
            const SsimParams& p) {
    check_same_shape(x, y);
    const Shape s = x.shape();
    const int win = p.window_size;
    if (win < 1 || win % 2 == 0)
        throw ContractError("ssim window size must be odd and positive");
    if (s.h < win || s.w < win)
        throw ContractError("image " + s.str() + " is smaller than the " +
                            std::to_string(win) + "x" + std::to_string(win) +
                            " ssim window");

    // normalized Gaussian window
    std::vector<double> weight(static_cast<size_t>(win) * win);
    {
        const double c = (win - 1) / 2.0;
        double total = 0.0;
        for (int i = 0; i < win; ++i) {
            for (int j = 0; j < win; ++j) {
                const double d2 = (i - c) * (i - c) + (j - c) * (j - c);
                const double w = std::exp(-d2 / (2.0 * p.window_sigma * p.window_sigma));
                weight[static_cast<size_t>(i) * win + j] = w;
                total += w;
            }
        }
        for (auto& w : weight) w /= total;
    }

    const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
    const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
    const double c3 = c2 / 2.0;
    const bool unit_exponents = p.alpha == 1.0 && p.beta == 1.0 && p.gamma == 1.0;

    const auto xv = x.values(), yv = y.values();
    const std::int64_t plane = static_cast<std::int64_t>(s.h) * s.w;
    double acc = 0.0;
    std::int64_t positions = 0;

    for (int img = 0; img < s.n; ++img) {
        for (int ch = 0; ch < s.c; ++ch) {
            const float* xp = xv.data() + (static_cast<std::int64_t>(img) * s.c + ch) * plane;
            const float* yp = yv.data() + (static_cast<std::int64_t>(img) * s.c + ch) * plane;
            for (int oy = 0; oy + win <= s.h; ++oy) {
                for (int ox = 0; ox + win <= s.w; ++ox) {
                    double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
                    for (int i = 0; i < win; ++i) {
                        const float* xr = xp + static_cast<std::int64_t>(oy + i) * s.w + ox;
                        const float* yr = yp + static_cast<std::int64_t>(oy + i) * s.w + ox;
                        const double* wr = weight.data() + static_cast<size_t>(i) * win;
                        for (int j = 0; j < win; ++j) {
                            const double w = wr[j], a = xr[j], b = yr[j];
                            mx += w * a;
                            my += w * b;
                            mxx += w * (a * a);
                            myy += w * (b * b);
                            mxy += w * (a * b);  // grouping keeps x<->y symmetric
                        }
                    }
                    const double vx = std::max(0.0, mxx - mx * mx);
                    const double vy = std::max(0.0, myy - my * my);
                    const double cov = mxy - mx * my;
                    const double sx = std::sqrt(vx), sy = std::sqrt(vy);
                    const double l = (2 * mx * my + c1) / (mx * mx + my * my + c1);
                    const double c = (2 * sx * sy + c2) / (vx + vy + c2);
                    const double st = (cov + c3) / (sx * sy + c3);
                    acc += unit_exponents ? l * c * st
                                          : std::pow(l, p.alpha) *
                                                std::pow(c, p.beta) *
                                                std::pow(st, p.gamma);
                    ++positions;
                }
            }
        }
    }
    return acc / static_cast<double>(positions);
}

}  // namespace rainnet
