#pragma once
// Dense similarity -> correspondences -> rigid transform: threshold, one pass
// of staircase erosion and dilation, extraction, RANSAC.

#include "fragmenta/errors.hpp"
#include "fragmenta/geometry.hpp"
#include "fragmenta/nn/losses.hpp"
#include "fragmenta/rng.hpp"

#include <algorithm>
#include <array>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace fragmenta::matching {

using nn::Matrix;

/// Which diagonal the matched segments run along. Counter-clockwise contours
/// on both sides of a cut give anti-diagonal staircases.
enum class Orientation { AntiDiagonal, Diagonal };

/// Masking keeps only entries that are themselves set; Pure may switch on an
/// empty centre whose two kernel neighbours are set.
enum class ErosionMode { Masking, Pure };
enum class DilationMode { Grayscale, Binary };

struct MatchingConfig {
    double eps = 0.006;
    Orientation orientation = Orientation::AntiDiagonal;
    ErosionMode erosion = ErosionMode::Masking;
    DilationMode dilation = DilationMode::Grayscale;
    int ransac_iterations = 500;
    double inlier_tol_px = 5.0;
    double early_exit_ratio = 0.8;

    void validate() const {
        if (!(eps >= 0.0)) throw ConfigError("matching: eps must be >= 0");
        if (ransac_iterations < 1) throw ConfigError("matching: ransac_iterations must be >= 1");
        if (!(inlier_tol_px > 0.0)) throw ConfigError("matching: inlier_tol_px must be > 0");
        if (!(early_exit_ratio > 0.0 && early_exit_ratio <= 1.0)) {
            throw ConfigError("matching: early_exit_ratio must lie in (0,1]");
        }
    }
};

struct Correspondence {
    std::size_t i = 0; ///< index on fragment m
    std::size_t j = 0; ///< index on fragment n
    double score = 0.0;
    friend bool operator==(const Correspondence&, const Correspondence&) = default;
};

struct MatchResult {
    std::vector<Correspondence> correspondences;
    RigidTransform2D transform; ///< fragment-n local frame -> fragment-m local frame
    std::vector<std::size_t> inliers; ///< positions in `correspondences`
    std::size_t inlier_count = 0;
    double match_score = 0.0;
};

inline Matrix threshold_filter(const Matrix& s, double eps) {
    if (!(eps >= 0.0)) throw InvalidInput("threshold_filter: eps must be >= 0");
    return s.unaryExpr([eps](double v) { return v >= eps ? v : 0.0; });
}

/// (row, column) offsets of the two off-centre kernel ones.
inline std::array<std::array<int, 2>, 2> kernel_offsets(Orientation o) {
    if (o == Orientation::AntiDiagonal) return {{{-1, +1}, {+1, -1}}};
    return {{{-1, -1}, {+1, +1}}};
}

namespace detail {
inline double at_or_zero(const Matrix& s, Eigen::Index i, Eigen::Index j) {
    return i < 0 || j < 0 || i >= s.rows() || j >= s.cols() ? 0.0 : s(i, j);
}
} // namespace detail

inline Matrix erode_antidiagonal(const Matrix& s, Orientation o = Orientation::AntiDiagonal,
                                 ErosionMode mode = ErosionMode::Masking) {
    const auto off = kernel_offsets(o);
    Matrix out = Matrix::Zero(s.rows(), s.cols());
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        for (Eigen::Index j = 0; j < s.cols(); ++j) {
            const double a = detail::at_or_zero(s, i + off[0][0], j + off[0][1]);
            const double b = detail::at_or_zero(s, i + off[1][0], j + off[1][1]);
            if (a == 0.0 || b == 0.0) continue;
            if (s(i, j) != 0.0) {
                out(i, j) = s(i, j);
            } else if (mode == ErosionMode::Pure) {
                out(i, j) = std::min(a, b);
            }
        }
    }
    return out;
}

inline Matrix dilate_antidiagonal(const Matrix& s, Orientation o = Orientation::AntiDiagonal,
                                  DilationMode mode = DilationMode::Grayscale) {
    const auto off = kernel_offsets(o);
    Matrix out(s.rows(), s.cols());
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        for (Eigen::Index j = 0; j < s.cols(); ++j) {
            double v = std::max({s(i, j), detail::at_or_zero(s, i + off[0][0], j + off[0][1]),
                                 detail::at_or_zero(s, i + off[1][0], j + off[1][1])});
            if (mode == DilationMode::Binary) v = v != 0.0 ? 1.0 : 0.0;
            out(i, j) = v;
        }
    }
    return out;
}

/// threshold -> erode once -> dilate once.
inline Matrix morphology_chain(const Matrix& s, const MatchingConfig& cfg) {
    return dilate_antidiagonal(erode_antidiagonal(threshold_filter(s, cfg.eps), cfg.orientation, cfg.erosion),
                               cfg.orientation, cfg.dilation);
}

inline std::vector<Correspondence> extract_correspondences(const Matrix& s) {
    std::vector<Correspondence> out;
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        for (Eigen::Index j = 0; j < s.cols(); ++j) {
            if (s(i, j) != 0.0) out.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j), s(i, j)});
        }
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const Correspondence& a, const Correspondence& b) { return a.score > b.score; });
    return out;
}

struct RansacResult {
    RigidTransform2D transform;
    std::vector<std::size_t> inliers;
};

/// Two-point RANSAC for the map contour_n -> contour_m, refined by a
/// least-squares fit over the best consensus set.
inline RansacResult ransac_rigid(const std::vector<Correspondence>& corr, std::span<const Point2> contour_m,
                                 std::span<const Point2> contour_n, const MatchingConfig& cfg, Rng& rng) {
    if (corr.size() < 2) throw NoModel("ransac: fewer than two correspondences");
    std::vector<Point2> pm, pn;
    pm.reserve(corr.size());
    pn.reserve(corr.size());
    for (const auto& c : corr) {
        if (c.i >= contour_m.size() || c.j >= contour_n.size()) throw InvalidInput("ransac: index outside contour");
        pm.push_back(contour_m[c.i]);
        pn.push_back(contour_n[c.j]);
    }
    const std::size_t n = corr.size();
    auto inliers_of = [&](const RigidTransform2D& t) {
        std::vector<std::size_t> in;
        for (std::size_t k = 0; k < n; ++k) {
            if (distance(t.apply(pn[k]), pm[k]) < cfg.inlier_tol_px) in.push_back(k);
        }
        return in;
    };

    std::vector<std::size_t> best;
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (int it = 0; it < cfg.ransac_iterations; ++it) {
        const std::size_t a = pick(rng);
        std::size_t b = pick(rng);
        if (n == 2) b = 1 - a;
        if (a == b) continue;
        const std::array<Point2, 2> src{pn[a], pn[b]};
        const std::array<Point2, 2> dst{pm[a], pm[b]};
        RigidTransform2D t;
        try {
            t = rigid_fit(src, dst);
        } catch (const DegenerateConfiguration&) {
            continue;
        }
        auto in = inliers_of(t);
        if (in.size() > best.size()) best = std::move(in);
        if (static_cast<double>(best.size()) > cfg.early_exit_ratio * static_cast<double>(n)) break;
    }
    if (best.size() < 2) throw NoModel("ransac: no two-point sample produced a model");

    std::vector<Point2> src, dst;
    for (auto k : best) {
        src.push_back(pn[k]);
        dst.push_back(pm[k]);
    }
    RansacResult res;
    try {
        res.transform = rigid_fit(src, dst);
    } catch (const DegenerateConfiguration&) {
        throw NoModel("ransac: consensus set is degenerate");
    }
    res.inliers = std::move(best);
    return res;
}

/// Fused features -> MatchResult. Feature rows may be a subsample of the
/// contours; `rows_m`/`rows_n` map each row to its contour index (empty means identity).
inline MatchResult match_pair(const Matrix& f_m, const Matrix& f_n, std::span<const Point2> contour_m,
                              std::span<const Point2> contour_n, const MatchingConfig& cfg, Rng& rng,
                              std::span<const std::size_t> rows_m = {}, std::span<const std::size_t> rows_n = {}) {
    cfg.validate();
    const Matrix s = nn::dual_softmax(nn::similarity_logits(f_m, f_n));
    MatchResult r;
    r.correspondences = extract_correspondences(morphology_chain(s, cfg));
    for (auto& c : r.correspondences) {
        r.match_score += c.score;
        if (!rows_m.empty()) c.i = rows_m[c.i];
        if (!rows_n.empty()) c.j = rows_n[c.j];
    }
    if (r.correspondences.empty()) throw NoModel("match_pair: nothing survives the morphology chain");
    auto fit = ransac_rigid(r.correspondences, contour_m, contour_n, cfg, rng);
    r.transform = fit.transform;
    r.inliers = std::move(fit.inliers);
    r.inlier_count = r.inliers.size();
    return r;
}

} // namespace fragmenta::matching
