#include "fragmenta/contour_codec.hpp"
#include "fragmenta/rng.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <set>

using namespace fragmenta;
using namespace fragmenta::codec;

namespace {

Mask rect_mask(int w, int h, int x0, int y0, int x1, int y1) {
    Mask m(w, h);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) m.set(x, y, true);
    return m;
}

// Random simply connected blob: union of overlapping discs along a walk.
Mask random_blob(Rng& rng, int w, int h) {
    Mask m(w, h);
    double cx = w / 2.0, cy = h / 2.0;
    for (int s = 0; s < 6; ++s) {
        const double r = uniform(rng, 2.0, 6.0);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) m.set(x, y, true);
        cx = std::clamp(cx + uniform(rng, -4, 4), 6.0, w - 7.0);
        cy = std::clamp(cy + uniform(rng, -4, 4), 6.0, h - 7.0);
    }
    return m;
}

std::set<std::pair<int, int>> as_set(const OrderedContour& c) {
    std::set<std::pair<int, int>> s;
    for (auto p : c.points) s.insert({static_cast<int>(p.x), static_cast<int>(p.y)});
    return s;
}

} // namespace

TEST(TraceContour, ThreeByThreeSquare) {
    const Mask m = rect_mask(5, 5, 1, 1, 3, 3);
    const auto c = trace_contour(m);
    // Counter-clockwise on screen: down the left side first.
    const std::vector<Point2> expect{{1, 1}, {1, 2}, {1, 3}, {2, 3}, {3, 3}, {3, 2}, {3, 1}, {2, 1}};
    ASSERT_EQ(c.size(), expect.size());
    for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_EQ(c[i], expect[i]) << i;
    EXPECT_LT(signed_area(c.points), 0.0); // negative shoelace in y-down coordinates
}

TEST(TraceContour, SinglePixelAndErrors) {
    Mask m(4, 4);
    m.set(2, 1, true);
    const auto c = trace_contour(m);
    ASSERT_EQ(c.size(), 1u);
    EXPECT_EQ(c[0], (Point2{2, 1}));
    m.set(0, 3, true);
    EXPECT_THROW(trace_contour(m), InvalidMask);
    EXPECT_THROW(trace_contour(Mask(3, 3)), InvalidMask);
}

TEST(TraceContour, ReproducesBoundarySetOnRandomBlobs) {
    Rng rng(5);
    for (int trial = 0; trial < 60; ++trial) {
        const Mask m = random_blob(rng, 40, 40);
        if (count_components(m) != 1) continue;
        const auto c = trace_contour(m);
        const Mask b = boundary_pixels(m);
        // Only outer boundary is traced; holes are impossible for these blobs
        // unless the disc union encloses background, which we skip.
        std::set<std::pair<int, int>> expect;
        for (int y = 0; y < m.height; ++y)
            for (int x = 0; x < m.width; ++x)
                if (b.get(x, y)) expect.insert({x, y});
        const auto got = as_set(c);
        for (const auto& p : got) EXPECT_TRUE(expect.count(p)) << "trial " << trial;
        // Every 4-boundary pixel that touches the outside background is traced.
        Mask outside(m.width + 2, m.height + 2);
        std::vector<std::pair<int, int>> stack{{0, 0}};
        outside.set(0, 0, true);
        while (!stack.empty()) {
            auto [x, y] = stack.back();
            stack.pop_back();
            const int d[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
            for (auto& dd : d) {
                const int nx = x + dd[0], ny = y + dd[1];
                if (!outside.contains(nx, ny) || outside.get(nx, ny) || m.get(nx - 1, ny - 1)) continue;
                outside.set(nx, ny, true);
                stack.push_back({nx, ny});
            }
        }
        for (const auto& [x, y] : expect) {
            const bool touches = outside.get(x, y + 1) || outside.get(x + 2, y + 1) || outside.get(x + 1, y) ||
                                 outside.get(x + 1, y + 2);
            if (touches) {
                EXPECT_TRUE(got.count({x, y})) << "trial " << trial << " missing " << x << "," << y;
            }
        }
        // Consecutive points are 8-connected.
        for (std::size_t i = 0; i < c.size(); ++i) {
            const auto a = c[i], b2 = c[(i + 1) % c.size()];
            EXPECT_LE(std::max(std::abs(a.x - b2.x), std::abs(a.y - b2.y)), 1.0);
        }
        EXPECT_LT(signed_area(c.points), 0.0);
    }
}

TEST(TraceContour, PinchPointVisitedTwice) {
    // Two squares meeting diagonally: both pinch pixels show up twice.
    Mask m(8, 8);
    for (int y = 1; y <= 3; ++y)
        for (int x = 1; x <= 3; ++x) m.set(x, y, true);
    for (int y = 4; y <= 6; ++y)
        for (int x = 4; x <= 6; ++x) m.set(x, y, true);
    const auto c = trace_contour(m);
    EXPECT_EQ(as_set(c).size(), 16u);
    EXPECT_EQ(c.size(), 18u);
}

TEST(ContourPatches, EdgeOnlyCentreIsOne) {
    const Mask m = rect_mask(20, 20, 3, 3, 15, 12);
    const auto c = trace_contour(m);
    const auto p = encode_contour_patches(c, m, 7, ContourEncoding::EdgeOnly);
    ASSERT_EQ(p.count, c.size());
    for (std::size_t j = 0; j < p.count; ++j) {
        EXPECT_EQ(p.at(j, 3, 3), 1.0);
        double ones = 0;
        for (int r = 0; r < 7; ++r)
            for (int col = 0; col < 7; ++col) {
                const double v = p.at(j, r, col);
                EXPECT_TRUE(v == 0.0 || v == 1.0);
                ones += v;
            }
        EXPECT_LE(ones, 49.0);
    }
}

TEST(ContourPatches, HorizontalRunLightsMiddleRow) {
    const Mask m = rect_mask(40, 20, 2, 5, 37, 14);
    const auto c = trace_contour(m);
    const auto p = encode_contour_patches(c, m, 7, ContourEncoding::EdgeOnly);
    // A point in the middle of the top edge sees only the top edge.
    std::size_t j = c.size();
    for (std::size_t i = 0; i < c.size(); ++i)
        if (c[i] == Point2{20, 5}) j = i;
    ASSERT_LT(j, c.size());
    for (int r = 0; r < 7; ++r)
        for (int col = 0; col < 7; ++col) EXPECT_EQ(p.at(j, r, col), r == 3 ? 1.0 : 0.0) << r << "," << col;
}

TEST(ContourPatches, InsideOutsideAndStacked) {
    const Mask m = rect_mask(20, 20, 5, 5, 14, 14);
    const auto c = trace_contour(m);
    const auto io = encode_contour_patches(c, m, 3, ContourEncoding::InsideOutside);
    const auto both = encode_contour_patches(c, m, 3, ContourEncoding::EdgePlusInsideOutside);
    const auto edge = encode_contour_patches(c, m, 3, ContourEncoding::EdgeOnly);
    EXPECT_EQ(io.channels, 1);
    EXPECT_EQ(both.channels, 2);
    // Corner (5,5): window rows/cols 4..6, mask is on for x,y >= 5.
    EXPECT_EQ(io.at(0, 0, 0), 0.0);
    EXPECT_EQ(io.at(0, 1, 1), 1.0);
    EXPECT_EQ(io.at(0, 2, 2), 1.0);
    for (std::size_t j = 0; j < c.size(); ++j)
        for (int r = 0; r < 3; ++r)
            for (int col = 0; col < 3; ++col) {
                EXPECT_EQ(both.at(j, r, col, 0), edge.at(j, r, col));
                EXPECT_EQ(both.at(j, r, col, 1), io.at(j, r, col));
            }
    EXPECT_THROW(encode_contour_patches(c, m, 4, ContourEncoding::EdgeOnly), InvalidInput);
}

TEST(TexturePatches, ConstantGrayInMask) {
    const Mask m = rect_mask(30, 30, 4, 4, 25, 25);
    RgbImage img(30, 30, 128);
    const auto c = trace_contour(m);
    const auto t = crop_texture_patches(img, m, c, 7);
    for (std::size_t j = 0; j < t.count; ++j) {
        const int cx = static_cast<int>(c[j].x), cy = static_cast<int>(c[j].y);
        for (int r = 0; r < 7; ++r)
            for (int col = 0; col < 7; ++col)
                for (int ch = 0; ch < 3; ++ch) {
                    const double v = t.at(j, r, col, ch);
                    EXPECT_EQ(v, m.get(cx + col - 3, cy + r - 3) ? 128.0 / 255.0 : 0.0);
                }
    }
}

TEST(TexturePatches, ConvexCornerZeroCountMatchesOracle) {
    const Mask m = rect_mask(30, 30, 10, 10, 25, 25);
    RgbImage img(30, 30, 200);
    const auto c = trace_contour(m);
    ASSERT_EQ(c[0], (Point2{10, 10}));
    const auto t = crop_texture_patches(img, m, c, 7);
    int zero = 0;
    for (int r = 0; r < 7; ++r)
        for (int col = 0; col < 7; ++col) zero += t.at(0, r, col, 0) == 0.0;
    // In-mask cells form the 4 x 4 lower-right block of the window.
    EXPECT_EQ(zero, 49 - 16);
}

TEST(TexturePatches, ValuesInUnitIntervalAndTranslationEquivariant) {
    Rng rng(8);
    RgbImage img(40, 40);
    for (auto& v : img.data) v = static_cast<std::uint8_t>(uniform_int(rng, 0, 255));
    const Mask m = random_blob(rng, 40, 40);
    if (count_components(m) != 1) GTEST_SKIP();
    const auto c = trace_contour(m);
    const auto t = crop_texture_patches(img, m, c, 7);
    for (double v : t.values) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
    // Shift everything by (3, 2).
    RgbImage img2(46, 45);
    Mask m2(46, 45);
    for (int y = 0; y < 40; ++y)
        for (int x = 0; x < 40; ++x) {
            m2.set(x + 3, y + 2, m.get(x, y));
            for (int ch = 0; ch < 3; ++ch) img2.at(x + 3, y + 2, ch) = img.at(x, y, ch);
        }
    const auto c2 = trace_contour(m2);
    const auto t2 = crop_texture_patches(img2, m2, c2, 7);
    const auto e1 = encode_contour_patches(c, m, 7, ContourEncoding::EdgePlusInsideOutside);
    const auto e2 = encode_contour_patches(c2, m2, 7, ContourEncoding::EdgePlusInsideOutside);
    EXPECT_EQ(t.values, t2.values);
    EXPECT_EQ(e1.values, e2.values);
}

TEST(RingGraph, WraparoundAndDegree) {
    const auto g = build_ring_graph(10, 2);
    EXPECT_EQ(g.neighbors(0), (std::vector<std::size_t>{8, 9, 1, 2}));
    EXPECT_EQ(build_ring_graph(100).k, 8u);
    const auto big = build_ring_graph(50, 8);
    for (std::size_t v = 0; v < 50; ++v) {
        EXPECT_EQ(big.neighbors(v).size(), 16u);
        for (auto u : big.neighbors(v)) {
            const auto back = big.neighbors(u);
            EXPECT_NE(std::find(back.begin(), back.end(), v), back.end());
        }
    }
    const auto small = build_ring_graph(6, 8);
    EXPECT_TRUE(small.complete());
    EXPECT_EQ(small.neighbors(2).size(), 5u);
    EXPECT_THROW(build_ring_graph(0, 1), InvalidInput);
}

TEST(PadOrTruncate, ZeroPadMask) {
    std::vector<double> f(5 * 2, 1.0);
    const auto item = pad_or_truncate(f, 5, 2, 8, PadPolicy::ZeroPad);
    EXPECT_EQ(item.valid, (std::vector<std::uint8_t>{1, 1, 1, 1, 1, 0, 0, 0}));
    for (std::size_t i = 10; i < 16; ++i) EXPECT_EQ(item.features[i], 0.0);
    EXPECT_THROW(pad_or_truncate(f, 5, 2, 4, PadPolicy::ZeroPad), InvalidInput);
}

TEST(PadOrTruncate, MaskSumIsMinOfLengths) {
    for (std::size_t m : {1u, 7u, 100u, 1408u, 1409u, 2900u, 5000u}) {
        for (std::size_t l : {1u, 8u, 1408u}) {
            std::vector<double> f(m, 0.5);
            for (auto mode : {TruncateMode::UniformStride, TruncateMode::Prefix}) {
                const auto item = pad_or_truncate(f, m, 1, l, PadPolicy::Truncate, mode);
                EXPECT_EQ(item.valid_count(), std::min(m, l));
                // Source rows strictly increasing.
                for (std::size_t r = 1; r < item.source.size(); ++r) EXPECT_LT(item.source[r - 1], item.source[r]);
            }
        }
    }
}

TEST(PadOrTruncate, UniformStrideSpreadsOverContour) {
    std::vector<double> f(3000);
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = static_cast<double>(i);
    const auto item = pad_or_truncate(f, 3000, 1, 1408, PadPolicy::Truncate);
    EXPECT_EQ(item.features.front(), 0.0);
    EXPECT_GT(item.features.back(), 2990.0);
    const auto prefix = pad_or_truncate(f, 3000, 1, 1408, PadPolicy::Truncate, TruncateMode::Prefix);
    EXPECT_EQ(prefix.features.back(), 1407.0);
}

TEST(Frgc, RoundTripAndRejects) {
    const auto path = std::filesystem::temp_directory_path() / "fragmenta_test.frgc";
    EncodedArray arr{3, 2, 1, {0.5, -1.25, 3.0, 4.0, 0.0, 1e-3}};
    write_frgc(path, arr);
    const auto back = read_frgc(path);
    EXPECT_EQ(back.rows, 3u);
    EXPECT_EQ(back.dim, 2u);
    EXPECT_EQ(back.mode, 1u);
    for (std::size_t i = 0; i < arr.values.size(); ++i)
        EXPECT_EQ(back.values[i], static_cast<double>(static_cast<float>(arr.values[i])));
    {
        std::ofstream out(path, std::ios::binary);
        out << "NOPE";
    }
    EXPECT_THROW(read_frgc(path), DataError);
    std::filesystem::remove(path);
}
