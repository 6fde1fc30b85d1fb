#pragma once
// Oracles and random inputs shared by the network tests and the acceptance run.

#include "fragmenta/nn/model.hpp"
#include "fragmenta/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace nn_support {

using namespace fragmenta;
using namespace fragmenta::nn;

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(rng, lo, hi);
    return m;
}

// Random linear functional of an op output, so every output entry matters.
inline Var weighted_sum(Tape& t, Var v, std::uint64_t seed) {
    Rng rng(seed);
    return sum_all(hadamard(v, t.constant(random_matrix(v.rows(), v.cols(), rng))));
}

// Dual softmax written out entry by entry.
inline Matrix dual_softmax_oracle(const Matrix& s) {
    Matrix out(s.rows(), s.cols());
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        for (Eigen::Index j = 0; j < s.cols(); ++j) {
            long double col = 0, row = 0;
            for (Eigen::Index k = 0; k < s.rows(); ++k) col += std::exp((long double)s(k, j));
            for (Eigen::Index k = 0; k < s.cols(); ++k) row += std::exp((long double)s(i, k));
            const long double e = std::exp((long double)s(i, j));
            out(i, j) = static_cast<double>((e / col) * (e / row));
        }
    }
    return out;
}

inline double focal_oracle(const Matrix& s, const Matrix& gt, double b1, double g) {
    long double l = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        const long double p = std::clamp(s.data()[i], 1e-12, 1.0 - 1e-12);
        const long double y = gt.data()[i];
        l -= b1 * std::pow(1 - p, (long double)g) * std::log(p) * y;
        l -= (1 - b1) * std::pow(p, (long double)g) * std::log(1 - p) * (1 - y);
    }
    return static_cast<double>(l);
}

inline double info_nce_oracle(const Matrix& e, const PositiveSets& pos, double tau) {
    const auto n = e.rows();
    auto cos = [&](Eigen::Index a, Eigen::Index b) { return e.row(a).dot(e.row(b)) / (e.row(a).norm() * e.row(b).norm()); };
    long double total = 0;
    int anchors = 0;
    for (Eigen::Index a = 0; a < n; ++a) {
        if (pos[a].empty()) continue;
        long double num = 0, den = 0;
        for (Eigen::Index k = 0; k < n; ++k) {
            if (k == a) continue;
            const long double v = std::exp((long double)cos(a, k) / tau);
            den += v;
            if (std::find(pos[a].begin(), pos[a].end(), (std::size_t)k) != pos[a].end()) num += v;
        }
        total += -std::log(num / den);
        ++anchors;
    }
    return static_cast<double>(total / anchors);
}

inline ContourEmbedWeights contour_weights(Tape& t, int c_in, int ch, int d, Rng& rng) {
    return {t.input(random_matrix(9 * c_in, ch, rng)), t.input(random_matrix(1, ch, rng)),
            t.input(random_matrix(ch, d, rng)), t.input(random_matrix(1, d, rng))};
}

inline ModelConfig tiny_config() {
    ModelConfig c;
    c.d_feat = 8;
    c.d_search = 6;
    c.conv_channels = 3;
    c.ff_hidden = 8;
    c.gcn_layers = 2;
    c.attn_layers = 1;
    c.ring_k = 2;
    return c;
}

inline FragmentInput random_input(std::size_t m, const ModelConfig& cfg, Rng& rng) {
    FragmentInput in;
    const int c = codec::channels_for(cfg.contour_mode);
    in.contour_patches = random_matrix(m, cfg.patch_size * cfg.patch_size * c, rng, 0.0, 1.0);
    in.texture_patches = random_matrix(m, cfg.texture_patch_size * cfg.texture_patch_size * 3, rng, 0.0, 1.0);
    in.source.resize(m);
    std::iota(in.source.begin(), in.source.end(), std::size_t{0});
    in.contour_length = m;
    return in;
}

} // namespace nn_support
