#pragma once

// Reference implementations written directly from the textbook formulas with
// plain loops. They share no code with the library.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

/// KL(N(mq, exp(lq)) || N(mp, exp(lp))) summed over dimensions.
inline double gaussian_kl(const std::vector<double>& mq, const std::vector<double>& lq, const std::vector<double>& mp,
                          const std::vector<double>& lp) {
    long double kl = 0.0L;
    for (size_t i = 0; i < mq.size(); ++i) {
        const long double vq = std::exp(static_cast<long double>(lq[i]));
        const long double vp = std::exp(static_cast<long double>(lp[i]));
        const long double d = static_cast<long double>(mq[i]) - mp[i];
        kl += 0.5L * (std::log(vp / vq) + (vq + d * d) / vp - 1.0L);
    }
    return static_cast<double>(kl);
}

/// Frame stored as [c][y][x] flattened.
struct Frame {
    int c = 1, h = 0, w = 0;
    std::vector<double> v;
    double at(int ch, int y, int x) const { return v[(static_cast<size_t>(ch) * h + y) * w + x]; }
};

inline double psnr(const Frame& a, const Frame& b, double range = 1.0) {
    double se = 0.0;
    for (size_t i = 0; i < a.v.size(); ++i) se += (a.v[i] - b.v[i]) * (a.v[i] - b.v[i]);
    const double mse = se / static_cast<double>(a.v.size());
    if (mse == 0.0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(range * range / mse));
}

/// Gaussian-weighted SSIM (11x11, sigma 1.5), windows fully inside the
/// image, averaged over positions and channels.
inline double ssim(const Frame& a, const Frame& b, double range = 1.0) {
    const int win = 11;
    const double sigma = 1.5;
    std::vector<double> g1(win);
    double gs = 0.0;
    for (int i = 0; i < win; ++i) {
        const double x = i - (win - 1) / 2.0;
        g1[static_cast<size_t>(i)] = std::exp(-x * x / (2 * sigma * sigma));
        gs += g1[static_cast<size_t>(i)];
    }
    for (auto& g : g1) g /= gs;
    const double c1 = (0.01 * range) * (0.01 * range);
    const double c2 = (0.03 * range) * (0.03 * range);
    double total = 0.0;
    int count = 0;
    for (int ch = 0; ch < a.c; ++ch) {
        for (int y0 = 0; y0 + win <= a.h; ++y0) {
            for (int x0 = 0; x0 + win <= a.w; ++x0) {
                double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
                for (int dy = 0; dy < win; ++dy)
                    for (int dx = 0; dx < win; ++dx) {
                        const double wgt = g1[static_cast<size_t>(dy)] * g1[static_cast<size_t>(dx)];
                        const double p = a.at(ch, y0 + dy, x0 + dx);
                        const double q = b.at(ch, y0 + dy, x0 + dx);
                        mx += wgt * p;
                        my += wgt * q;
                        sxx += wgt * p * p;
                        syy += wgt * q * q;
                        sxy += wgt * p * q;
                    }
                sxx -= mx * mx;
                syy -= my * my;
                sxy -= mx * my;
                total += ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
                ++count;
            }
        }
    }
    return total / count;
}

} // namespace oracle
