#include "fragmenta/matching.hpp"
#include "fragmenta/synth.hpp"
#include "fragmenta/tearing.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace fragmenta;
using namespace fragmenta::matching;
using support::planted_staircase;

namespace {

Matrix from_support(long rows, long cols, std::initializer_list<std::array<long, 2>> cells, double v = 1.0) {
    Matrix s = Matrix::Zero(rows, cols);
    for (auto [i, j] : cells) s(i, j) = v;
    return s;
}

std::set<std::pair<long, long>> nonzero(const Matrix& s) {
    std::set<std::pair<long, long>> out;
    for (long i = 0; i < s.rows(); ++i)
        for (long j = 0; j < s.cols(); ++j)
            if (s(i, j) != 0.0) out.insert({i, j});
    return out;
}

Matrix random_sparse(Rng& rng, long rows, long cols, double density) {
    Matrix s(rows, cols);
    for (long i = 0; i < rows; ++i)
        for (long j = 0; j < cols; ++j) s(i, j) = uniform01(rng) < density ? uniform(rng, 0.0, 1.0) : 0.0;
    return s;
}

// A generated pair whose GT run is long enough to be interesting.
struct GenPair {
    tearing::GenerationResult gen;
    std::size_t index = 0;
    const tearing::PairGroundTruth& gt() const { return gen.pairs[index]; }
};

GenPair generated_pair(std::uint64_t seed) {
    tearing::GeneratorConfig g;
    g.t_max = 3;
    const auto img = synth::procedural_image(480, 360, seed);
    for (std::uint64_t s = seed;; ++s) {
        Rng rng(s);
        GenPair p{tearing::generate(img, g, rng), 0};
        for (; p.index < p.gen.pairs.size(); ++p.index) {
            if (p.gen.pairs[p.index].matches.size() >= 30) return p;
        }
    }
}

} // namespace

TEST(Threshold, BelowEpsZeroed) {
    const Matrix s = Matrix::Constant(4, 5, 0.005);
    EXPECT_TRUE(threshold_filter(s, 0.006).isZero(0.0));
}

TEST(Threshold, EntryAtEpsSurvives) {
    Matrix s = Matrix::Zero(2, 2);
    s(0, 1) = 0.006;
    EXPECT_EQ(threshold_filter(s, 0.006)(0, 1), 0.006);
}

TEST(Threshold, ZeroEpsIsIdentity) {
    Rng rng(3);
    const Matrix s = random_sparse(rng, 7, 9, 0.5);
    EXPECT_EQ(threshold_filter(s, 0.0), s);
    EXPECT_THROW(threshold_filter(s, -1.0), InvalidInput);
}

TEST(Erode, ThreePointRunKeepsMiddle) {
    const Matrix s = from_support(8, 8, {{3, 5}, {4, 4}, {5, 3}}, 0.7);
    const auto out = nonzero(erode_antidiagonal(s));
    EXPECT_EQ(out, (std::set<std::pair<long, long>>{{4, 4}}));
    EXPECT_EQ(erode_antidiagonal(s)(4, 4), 0.7);
}

TEST(Erode, IsolatedEntryRemoved) {
    EXPECT_TRUE(erode_antidiagonal(from_support(5, 5, {{2, 2}})).isZero(0.0));
}

TEST(Erode, FullAntiDiagonalKeepsInterior) {
    Matrix s = Matrix::Zero(9, 9);
    for (long k = 0; k < 9; ++k) s(k, 8 - k) = 1.0;
    const auto out = nonzero(erode_antidiagonal(s));
    EXPECT_EQ(out.size(), 7u);
    EXPECT_FALSE(out.count({0, 8}));
    EXPECT_FALSE(out.count({8, 0}));
}

TEST(Erode, MainDiagonalNeedsFlippedOrientation) {
    Matrix s = Matrix::Zero(6, 6);
    for (long k = 0; k < 6; ++k) s(k, k) = 1.0;
    EXPECT_TRUE(erode_antidiagonal(s).isZero(0.0));
    EXPECT_EQ(nonzero(erode_antidiagonal(s, Orientation::Diagonal)).size(), 4u);
}

TEST(Erode, PureModeFillsEmptyCentre) {
    const Matrix s = from_support(5, 5, {{1, 3}, {3, 1}}, 0.4);
    EXPECT_TRUE(erode_antidiagonal(s).isZero(0.0));
    EXPECT_EQ(erode_antidiagonal(s, Orientation::AntiDiagonal, ErosionMode::Pure)(2, 2), 0.4);
}

TEST(Dilate, BridgesGap) {
    Matrix s = Matrix::Zero(8, 8);
    s(2, 6) = 0.3;
    s(4, 4) = 0.8;
    EXPECT_EQ(dilate_antidiagonal(s)(3, 5), 0.8);
}

TEST(Dilate, ZeroStaysZero) { EXPECT_TRUE(dilate_antidiagonal(Matrix::Zero(4, 6)).isZero(0.0)); }

TEST(Dilate, NeverDecreases) {
    Rng rng(5);
    for (int t = 0; t < 50; ++t) {
        const Matrix s = random_sparse(rng, 10, 13, 0.3);
        const Matrix d = dilate_antidiagonal(s);
        EXPECT_TRUE(((d - s).array() >= 0.0).all());
    }
}

TEST(Dilate, BinaryModeBinarizes) {
    const Matrix d = dilate_antidiagonal(from_support(4, 4, {{1, 2}}, 0.25), Orientation::AntiDiagonal,
                                         DilationMode::Binary);
    EXPECT_EQ(d(1, 2), 1.0);
    EXPECT_EQ(d(2, 1), 1.0);
    EXPECT_EQ(d(0, 3), 1.0);
    EXPECT_EQ(d.sum(), 3.0);
}

TEST(Morphology, MatchesKernelOracleOnRandomMatrices) {
    Rng rng(7);
    for (int t = 0; t < 200; ++t) {
        const Matrix s = random_sparse(rng, 5 + t % 17, 4 + t % 23, 0.05 + 0.9 * uniform01(rng));
        EXPECT_EQ(erode_antidiagonal(s), support::oracle_erode(s));
        EXPECT_EQ(dilate_antidiagonal(s), support::oracle_dilate(s));
        EXPECT_EQ(morphology_chain(s, MatchingConfig{}), support::oracle_chain(s, 0.006));
    }
}

TEST(Morphology, NeverCreatesEntriesInEmptyNeighbourhood) {
    Rng rng(8);
    const MatchingConfig cfg;
    for (int t = 0; t < 200; ++t) {
        const Matrix s = random_sparse(rng, 20, 20, 0.15);
        const Matrix th = threshold_filter(s, cfg.eps);
        const Matrix out = morphology_chain(s, cfg);
        for (long i = 0; i < 20; ++i) {
            for (long j = 0; j < 20; ++j) {
                bool empty = true;
                for (long di = -1; di <= 1; ++di)
                    for (long dj = -1; dj <= 1; ++dj)
                        if (support::cell(th, i + di, j + dj) != 0.0) empty = false;
                if (empty) {
                    EXPECT_EQ(out(i, j), 0.0);
                }
            }
        }
    }
}

TEST(Morphology, UnbrokenStaircaseKeepsInteriorWithinOriginal) {
    for (long len = 3; len <= 12; ++len) {
        Matrix s = Matrix::Zero(len + 4, len + 4);
        for (long k = 0; k < len; ++k) s(2 + k, len + 1 - k) = 0.5;
        const auto orig = nonzero(s);
        const auto out = nonzero(dilate_antidiagonal(erode_antidiagonal(s)));
        for (const auto& c : out) EXPECT_TRUE(orig.count(c));
        for (long k = 1; k + 1 < len; ++k) EXPECT_TRUE(out.count({2 + k, len + 1 - k}));
    }
}

TEST(Morphology, PlantedStaircaseSurvivesNoiseDoesNot) {
    Rng rng(9);
    const MatchingConfig cfg;
    for (int t = 0; t < 100; ++t) {
        const auto p = planted_staircase(rng, cfg.eps);
        const Matrix out = morphology_chain(p.s, cfg);
        for (auto [i, j] : p.noise) EXPECT_EQ(out(i, j), 0.0);
        std::size_t kept = 0;
        for (auto [i, j] : p.stair) kept += out(i, j) != 0.0;
        EXPECT_GE(kept + 2, p.stair.size());
    }
}

TEST(Morphology, GapBridgedByDilationAndByPureChain) {
    Rng rng(10);
    MatchingConfig pure;
    pure.erosion = ErosionMode::Pure;
    for (int t = 0; t < 100; ++t) {
        const auto p = planted_staircase(rng, pure.eps, true);
        const auto [gi, gj] = p.stair[static_cast<std::size_t>(p.gap)];
        EXPECT_GT(dilate_antidiagonal(threshold_filter(p.s, pure.eps))(gi, gj), 0.0);
        EXPECT_GT(morphology_chain(p.s, pure)(gi, gj), 0.0);
    }
}

TEST(Morphology, GtSimilaritySurvivesAsOneAntiDiagonalRun) {
    for (std::uint64_t seed : {21u, 22u, 23u}) {
        const auto gp = generated_pair(seed);
        const auto& gt = gp.gt();
        const auto& fm = gp.gen.fragments[static_cast<std::size_t>(gt.id_m)];
        const auto& fn = gp.gen.fragments[static_cast<std::size_t>(gt.id_n)];
        const auto flat = tearing::gt_similarity(gt, fm.contour.size(), fn.contour.size());
        Matrix s(static_cast<long>(fm.contour.size()), static_cast<long>(fn.contour.size()));
        for (long i = 0; i < s.rows(); ++i)
            for (long j = 0; j < s.cols(); ++j) s(i, j) = flat[static_cast<std::size_t>(i * s.cols() + j)];
        MatchingConfig cfg;
        cfg.eps = 0.5;
        const auto out = nonzero(morphology_chain(s, cfg));
        ASSERT_FALSE(out.empty());
        // Connected under 8-neighbourhood with wrap-around on both contours.
        std::set<std::pair<long, long>> seen{*out.begin()};
        std::vector<std::pair<long, long>> stack{*out.begin()};
        while (!stack.empty()) {
            auto [i, j] = stack.back();
            stack.pop_back();
            for (long di = -1; di <= 1; ++di) {
                for (long dj = -1; dj <= 1; ++dj) {
                    const std::pair<long, long> q{(i + di + s.rows()) % s.rows(), (j + dj + s.cols()) % s.cols()};
                    if (out.count(q) && seen.insert(q).second) stack.push_back(q);
                }
            }
        }
        EXPECT_EQ(seen.size(), out.size()) << "seed " << seed;
        // Anti-diagonal: stepping forward along m never steps forward along n.
        std::size_t anti = 0, diag = 0;
        for (auto [i, j] : out) {
            anti += out.count({i + 1, j - 1});
            diag += out.count({i + 1, j + 1});
        }
        EXPECT_GT(anti, 0u);
        EXPECT_EQ(diag, 0u);
    }
}

TEST(Extract, OrderAndCount) {
    EXPECT_TRUE(extract_correspondences(Matrix::Zero(3, 3)).empty());
    Matrix s = Matrix::Zero(3, 3);
    s(2, 0) = 0.1;
    s(0, 2) = 0.9;
    s(1, 1) = 0.5;
    s(0, 0) = 0.5;
    const auto c = extract_correspondences(s);
    ASSERT_EQ(c.size(), 4u);
    EXPECT_EQ(c[0], (Correspondence{0, 2, 0.9}));
    EXPECT_EQ(c[1], (Correspondence{0, 0, 0.5}));
    EXPECT_EQ(c[2], (Correspondence{1, 1, 0.5}));
    EXPECT_EQ(c[3], (Correspondence{2, 0, 0.1}));
}

TEST(Ransac, RecoversPlantedTransform) {
    const auto truth = RigidTransform2D::make(0.7, 12.5, -3.25);
    const MatchingConfig cfg;
    int ok = 0;
    for (int trial = 0; trial < 100; ++trial) {
        Rng rng(1000 + trial);
        const auto s = support::synthetic_correspondences(truth, 50, 50, 0.5, rng);
        const auto r = ransac_rigid(s.corr, s.contour_m, s.contour_n, cfg, rng);
        const double re = std::abs(normalize_angle(r.transform.theta - truth.theta));
        const double te = std::hypot(r.transform.tx - truth.tx, r.transform.ty - truth.ty);
        ok += re < 0.01 && te < 1.0;
        EXPECT_NEAR(std::abs(r.transform.determinant()), 1.0, 1e-12);
        EXPECT_LE(r.inliers.size(), s.corr.size());
    }
    EXPECT_GE(ok, 95);
}

TEST(Ransac, AllConsistentAllInliers) {
    Rng rng(4);
    const auto truth = RigidTransform2D::make(-1.1, 3.0, 40.0);
    const auto s = support::synthetic_correspondences(truth, 30, 0, 0.0, rng);
    const auto r = ransac_rigid(s.corr, s.contour_m, s.contour_n, MatchingConfig{}, rng);
    EXPECT_EQ(r.inliers.size(), 30u);
}

TEST(Ransac, TwoCorrespondencesExactFit) {
    Rng rng(4);
    const auto truth = RigidTransform2D::make(2.0, -5.0, 7.0);
    const auto s = support::synthetic_correspondences(truth, 2, 0, 0.0, rng);
    const auto r = ransac_rigid(s.corr, s.contour_m, s.contour_n, MatchingConfig{}, rng);
    EXPECT_EQ(r.inliers.size(), 2u);
    EXPECT_NEAR(normalize_angle(r.transform.theta - truth.theta), 0.0, 1e-9);
    EXPECT_NEAR(r.transform.tx, truth.tx, 1e-9);
    EXPECT_NEAR(r.transform.ty, truth.ty, 1e-9);
}

TEST(Ransac, TooFewCorrespondences) {
    Rng rng(1);
    const std::vector<Point2> pts{{0, 0}};
    EXPECT_THROW(ransac_rigid({{0, 0, 1.0}}, pts, pts, MatchingConfig{}, rng), NoModel);
    EXPECT_THROW(ransac_rigid({}, pts, pts, MatchingConfig{}, rng), NoModel);
}

TEST(Ransac, DeterministicForSeed) {
    const auto truth = RigidTransform2D::make(0.3, 1.0, 2.0);
    Rng g(77);
    const auto s = support::synthetic_correspondences(truth, 20, 20, 0.5, g);
    Rng a(5), b(5);
    const auto ra = ransac_rigid(s.corr, s.contour_m, s.contour_n, MatchingConfig{}, a);
    const auto rb = ransac_rigid(s.corr, s.contour_m, s.contour_n, MatchingConfig{}, b);
    EXPECT_EQ(ra.inliers, rb.inliers);
    EXPECT_EQ(ra.transform.theta, rb.transform.theta);
}

TEST(MatchConfig, Validation) {
    MatchingConfig c;
    c.ransac_iterations = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.early_exit_ratio = 1.5;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(MatchPair, OneHotGtFeaturesRecoverTransform) {
    for (std::uint64_t seed : {31u, 32u}) {
        const auto gp = generated_pair(seed);
        const auto& gt = gp.gt();
        const auto& fm = gp.gen.fragments[static_cast<std::size_t>(gt.id_m)];
        const auto& fn = gp.gen.fragments[static_cast<std::size_t>(gt.id_n)];
        const long d = static_cast<long>(gt.matches.size());
        Matrix f_m = Matrix::Zero(static_cast<long>(fm.contour.size()), d);
        Matrix f_n = Matrix::Zero(static_cast<long>(fn.contour.size()), d);
        for (long k = 0; k < d; ++k) {
            f_m(static_cast<long>(gt.matches[static_cast<std::size_t>(k)].m), k) = 40.0;
            f_n(static_cast<long>(gt.matches[static_cast<std::size_t>(k)].n), k) = 40.0;
        }
        Rng rng(seed);
        const auto r = match_pair(f_m, f_n, fm.contour.points, fn.contour.points, MatchingConfig{}, rng);
        EXPECT_LT(std::abs(normalize_angle(r.transform.theta - gt.gt_transform.theta)), 0.01);
        EXPECT_LT(std::hypot(r.transform.tx - gt.gt_transform.tx, r.transform.ty - gt.gt_transform.ty), 1.0);
        EXPECT_LE(r.inlier_count, r.correspondences.size());
        EXPECT_GT(r.match_score, 0.0);
    }
}

TEST(MatchPair, OrthogonalFeaturesGiveNoModel) {
    Rng rng(12);
    for (int t = 0; t < 5; ++t) {
        Matrix f_m = Matrix::Zero(300, 16), f_n = Matrix::Zero(280, 16);
        for (long i = 0; i < f_m.rows(); ++i)
            for (long c = 0; c < 8; ++c) f_m(i, c) = gaussian(rng, 0, 1);
        for (long i = 0; i < f_n.rows(); ++i)
            for (long c = 8; c < 16; ++c) f_n(i, c) = gaussian(rng, 0, 1);
        std::vector<Point2> cm, cn;
        for (long i = 0; i < 300; ++i) cm.push_back({uniform(rng, 0, 300), uniform(rng, 0, 300)});
        for (long i = 0; i < 280; ++i) cn.push_back({uniform(rng, 0, 300), uniform(rng, 0, 300)});
        try {
            const auto r = match_pair(f_m, f_n, cm, cn, MatchingConfig{}, rng);
            EXPECT_LE(r.inlier_count, 3u);
        } catch (const NoModel&) {
            SUCCEED();
        }
    }
}

TEST(MatchPair, RowMapsAndDeterminism) {
    // Feature rows are contour points 0,2,4,6 on m and 1,3,5,7 on n.
    Matrix f = Matrix::Identity(4, 4) * 30.0;
    const auto t = RigidTransform2D::make(0.4, 3.0, -2.0);
    std::vector<Point2> cm, cn(8);
    for (int i = 0; i < 8; ++i) cm.push_back({std::cos(i * 0.7) * 50, std::sin(i * 0.9) * 40});
    for (int k = 0; k < 4; ++k) {
        cn[2 * k + 1] = t.inverse().apply(cm[2 * k]);
        cn[2 * k] = {1e4, 1e4};
    }
    const std::vector<std::size_t> rows_m{0, 2, 4, 6}, rows_n{1, 3, 5, 7};
    MatchingConfig cfg;
    cfg.orientation = Orientation::Diagonal;
    Rng a(1), b(1);
    const auto ra = match_pair(f, f, cm, cn, cfg, a, rows_m, rows_n);
    const auto rb = match_pair(f, f, cm, cn, cfg, b, rows_m, rows_n);
    EXPECT_EQ(ra.correspondences, rb.correspondences);
    ASSERT_EQ(ra.correspondences.size(), 4u);
    for (const auto& c : ra.correspondences) EXPECT_EQ(c.j, c.i + 1);
    EXPECT_EQ(ra.inlier_count, 4u);
    EXPECT_NEAR(ra.transform.theta, 0.4, 1e-9);
}
