#pragma once
// Procedural test images: smooth colour fields plus blobs and gratings, so
// neighbouring fragments share texture across the cut.

#include "fragmenta/raster.hpp"
#include "fragmenta/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace fragmenta::synth {

inline RgbImage procedural_image(int width, int height, std::uint64_t seed) {
    Rng rng(seed);
    struct Blob {
        double x, y, r, col[3];
    };
    struct Wave {
        double kx, ky, phase, amp[3];
    };
    std::vector<Blob> blobs(static_cast<std::size_t>(uniform_int(rng, 6, 12)));
    for (auto& b : blobs) {
        b.x = uniform(rng, 0, width);
        b.y = uniform(rng, 0, height);
        b.r = uniform(rng, 0.08, 0.3) * std::min(width, height);
        for (double& c : b.col) c = uniform(rng, -90, 90);
    }
    std::vector<Wave> waves(3);
    for (auto& w : waves) {
        const double ang = uniform(rng, 0, std::numbers::pi);
        const double freq = 2 * std::numbers::pi / uniform(rng, 20, 120);
        w.kx = freq * std::cos(ang);
        w.ky = freq * std::sin(ang);
        w.phase = uniform(rng, 0, 2 * std::numbers::pi);
        for (double& a : w.amp) a = uniform(rng, 5, 35);
    }
    double base[3], gx[3], gy[3];
    for (int c = 0; c < 3; ++c) {
        base[c] = uniform(rng, 70, 180);
        gx[c] = uniform(rng, -60, 60) / width;
        gy[c] = uniform(rng, -60, 60) / height;
    }
    RgbImage img(width, height);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            double v[3];
            for (int c = 0; c < 3; ++c) v[c] = base[c] + gx[c] * x + gy[c] * y;
            for (const auto& b : blobs) {
                const double d2 = ((x - b.x) * (x - b.x) + (y - b.y) * (y - b.y)) / (b.r * b.r);
                const double wgt = std::exp(-d2);
                for (int c = 0; c < 3; ++c) v[c] += wgt * b.col[c];
            }
            for (const auto& w : waves) {
                const double s = std::sin(w.kx * x + w.ky * y + w.phase);
                for (int c = 0; c < 3; ++c) v[c] += w.amp[c] * s;
            }
            for (int c = 0; c < 3; ++c) {
                const double noisy = v[c] + gaussian(rng, 0.0, 3.0);
                img.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(noisy), 0L, 255L));
            }
        }
    }
    return img;
}

} // namespace fragmenta::synth
