#pragma once
// Shared fixtures and oracles for the unit tests and the acceptance runner.

#include "fragmenta/geometry.hpp"
#include "fragmenta/matching.hpp"
#include "fragmenta/rng.hpp"
#include "fragmenta/tearing.hpp"

#include <array>
#include <cmath>
#include <vector>

namespace support {

using fragmenta::Point2;
using fragmenta::Rng;
using fragmenta::nn::Matrix;

// The two structuring elements written out as 3x3 arrays, row-down /
// column-right, centre at [1][1].
inline constexpr std::array<std::array<int, 3>, 3> kErodeKernel{{{0, 0, 1}, {0, 0, 0}, {1, 0, 0}}};
inline constexpr std::array<std::array<int, 3>, 3> kDilateKernel{{{0, 0, 1}, {0, 1, 0}, {1, 0, 0}}};

inline double cell(const Matrix& s, long i, long j) {
    if (i < 0 || j < 0 || i >= s.rows() || j >= s.cols()) return 0.0;
    return s(i, j);
}

inline Matrix oracle_threshold(const Matrix& s, double eps) {
    Matrix out = s;
    for (long i = 0; i < s.rows(); ++i)
        for (long j = 0; j < s.cols(); ++j)
            if (s(i, j) < eps) out(i, j) = 0.0;
    return out;
}

inline Matrix oracle_erode(const Matrix& s) {
    Matrix out = Matrix::Zero(s.rows(), s.cols());
    for (long i = 0; i < s.rows(); ++i) {
        for (long j = 0; j < s.cols(); ++j) {
            if (s(i, j) == 0.0) continue;
            bool keep = true;
            for (int a = 0; a < 3; ++a)
                for (int b = 0; b < 3; ++b)
                    if (kErodeKernel[a][b] && cell(s, i + a - 1, j + b - 1) == 0.0) keep = false;
            if (keep) out(i, j) = s(i, j);
        }
    }
    return out;
}

inline Matrix oracle_dilate(const Matrix& s) {
    Matrix out = Matrix::Zero(s.rows(), s.cols());
    for (long i = 0; i < s.rows(); ++i) {
        for (long j = 0; j < s.cols(); ++j) {
            double v = 0.0;
            for (int a = 0; a < 3; ++a)
                for (int b = 0; b < 3; ++b)
                    if (kDilateKernel[a][b]) v = std::max(v, cell(s, i + a - 1, j + b - 1));
            out(i, j) = v;
        }
    }
    return out;
}

inline Matrix oracle_chain(const Matrix& s, double eps) { return oracle_dilate(oracle_erode(oracle_threshold(s, eps))); }

struct PlantedMatrix {
    Matrix s;
    std::vector<std::array<long, 2>> stair; ///< (i, i0 + j0 - i) cells, top to bottom
    std::vector<std::array<long, 2>> noise;
    long gap = -1; ///< index into stair that was left empty, or -1
};

/// Background below eps, one anti-diagonal run of length >= 5 above eps, and
/// up to 20 noise entries above eps with an empty 3x3 neighbourhood.
inline PlantedMatrix planted_staircase(Rng& rng, double eps, bool with_gap = false) {
    using fragmenta::uniform;
    std::uniform_int_distribution<long> dim(24, 64);
    PlantedMatrix p;
    const long rows = dim(rng), cols = dim(rng);
    p.s = Matrix(rows, cols);
    for (long i = 0; i < rows; ++i)
        for (long j = 0; j < cols; ++j) p.s(i, j) = uniform(rng, 0.0, 0.99 * eps);

    const long len = std::uniform_int_distribution<long>(5, std::min(rows, cols) - 4)(rng);
    const long i0 = std::uniform_int_distribution<long>(0, rows - len)(rng);
    const long j0 = std::uniform_int_distribution<long>(len - 1, cols - 1)(rng);
    if (with_gap) p.gap = std::uniform_int_distribution<long>(2, len - 3)(rng);
    Matrix support = Matrix::Zero(rows, cols);
    for (long k = 0; k < len; ++k) {
        const long i = i0 + k, j = j0 - k;
        p.stair.push_back({i, j});
        support(i, j) = 1.0;
        p.s(i, j) = k == p.gap ? 0.0 : uniform(rng, 2.0 * eps, 1.0);
    }
    const long n_noise = std::uniform_int_distribution<long>(0, 20)(rng);
    std::uniform_int_distribution<long> ri(0, rows - 1), cj(0, cols - 1);
    for (int attempt = 0; attempt < 10000 && static_cast<long>(p.noise.size()) < n_noise; ++attempt) {
        const long i = ri(rng), j = cj(rng);
        bool clear = true;
        for (long di = -2; di <= 2 && clear; ++di)
            for (long dj = -2; dj <= 2; ++dj)
                if (cell(support, i + di, j + dj) != 0.0) clear = false;
        if (!clear) continue;
        support(i, j) = 1.0;
        p.s(i, j) = uniform(rng, eps, 1.0);
        p.noise.push_back({i, j});
    }
    return p;
}

struct SyntheticCorrespondences {
    std::vector<Point2> contour_m;
    std::vector<Point2> contour_n;
    std::vector<fragmenta::matching::Correspondence> corr;
};

/// `inliers` points mapped by `t` plus Gaussian noise, then `outliers`
/// unrelated point pairs; correspondence k pairs index k with index k.
inline SyntheticCorrespondences synthetic_correspondences(const fragmenta::RigidTransform2D& t, int inliers,
                                                          int outliers, double sigma, Rng& rng) {
    using fragmenta::gaussian;
    using fragmenta::uniform;
    SyntheticCorrespondences s;
    for (int k = 0; k < inliers + outliers; ++k) {
        const Point2 pn{uniform(rng, 0.0, 200.0), uniform(rng, 0.0, 200.0)};
        Point2 pm;
        if (k < inliers) {
            pm = t.apply(pn);
            pm.x += gaussian(rng, 0.0, sigma);
            pm.y += gaussian(rng, 0.0, sigma);
        } else {
            pm = {uniform(rng, -100.0, 300.0), uniform(rng, -100.0, 300.0)};
        }
        s.contour_n.push_back(pn);
        s.contour_m.push_back(pm);
        s.corr.push_back({static_cast<std::size_t>(k), static_cast<std::size_t>(k), 1.0});
    }
    return s;
}

// Independent walk along the matched m-run: the n-index must step backwards
// (mod M_n) by less than half the contour, and the total n span must stay
// below one full turn.
inline bool is_anti_staircase(const std::vector<fragmenta::tearing::IndexMatch>& matches, std::size_t size_m, std::size_t size_n) {
    if (matches.size() < 2) return true;
    std::size_t total_m = 0, total_n = 0;
    for (std::size_t k = 0; k + 1 < matches.size(); ++k) {
        const std::size_t dm = (matches[k + 1].m + size_m - matches[k].m) % size_m;
        const std::size_t dn = (matches[k].n + size_n - matches[k + 1].n) % size_n;
        if (dn >= size_n / 2) return false;
        total_m += dm;
        total_n += dn;
    }
    return total_m < size_m && total_n < size_n;
}

} // namespace support
