#pragma once
// Recursive image tearing with full ground truth.
//
// A fragment is cut along a polyline whose endpoints come from a chord of the
// circumcircle of its bounding box and whose interior follows optional
// waypoints, each span being straight or a Fourier-series curve. Cuts are
// applied on the raster, so the fragments always partition the source image.

#include "fragmenta/contour_codec.hpp"
#include "fragmenta/errors.hpp"
#include "fragmenta/geometry.hpp"
#include "fragmenta/raster.hpp"
#include "fragmenta/rng.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace fragmenta::tearing {

enum class Difficulty { High, Medium, Low };

inline const char* to_string(Difficulty d) {
    switch (d) {
    case Difficulty::High: return "high";
    case Difficulty::Medium: return "medium";
    case Difficulty::Low: return "low";
    }
    return "unknown";
}

inline Difficulty difficulty_from_string(const std::string& s) {
    if (s == "high") return Difficulty::High;
    if (s == "medium") return Difficulty::Medium;
    if (s == "low") return Difficulty::Low;
    throw InvalidInput("unknown difficulty '" + s + "'");
}

struct GeneratorConfig {
    int t_max = 40;
    double tau = 0.9;
    int n_max = 3;
    double d_min = 100.0;
    int n_fourier = 20;
    double s1 = 0.25;
    double s2 = 0.0067; // used as a standard deviation
    double s3 = 1.5;
    double s4 = 0.3;
    double rho = 0.5;
    int h_min = 150;
    int w_min = 150;
    std::uint64_t seed = 0;

    // Retry budgets.
    int retries_per_iteration = 10;
    int max_failed_iterations = 40;
    int endpoint_attempts = 1000;
    int waypoint_attempts = 200;
    int polyline_attempts = 20;
    int period_attempts = 100;

    // Difficulty strata by overlap proportion.
    double low_overlap_min = 0.30;
    double high_overlap_max = 0.15;

    void validate() const {
        auto fail = [](const std::string& what) { throw ConfigError("generator: " + what); };
        if (!(tau > 0.0 && tau < 1.0)) fail("tau must lie in (0,1)");
        if (!(rho >= 0.0 && rho <= 1.0)) fail("rho must lie in [0,1]");
        if (t_max < 0) fail("t_max must be >= 0");
        if (n_max < 0) fail("n_max must be >= 0");
        if (!(d_min > 0.0)) fail("d_min must be > 0");
        if (n_fourier < 0) fail("n_fourier must be >= 0");
        if (!(s1 > 0 && s2 > 0 && s3 > 0 && s4 > 0)) fail("scaling ratios must be > 0");
        if (h_min <= 0 || w_min <= 0) fail("minimum fragment size must be > 0");
        if (retries_per_iteration < 1 || max_failed_iterations < 0) fail("retry budgets must be positive");
        if (!(high_overlap_max <= low_overlap_min)) fail("high_overlap_max must not exceed low_overlap_min");
    }
};

struct FragmentRecord {
    int id = -1;
    RgbImage pixels;
    Mask mask;
    Point2 offset;          ///< crop origin in the parent image
    OrderedContour contour; ///< fragment-local pixel centres
    int source_image_id = 0;

    int width() const { return mask.width; }
    int height() const { return mask.height; }
    std::size_t area() const { return mask.count(); }
};

enum class SpanKind { Straight, Irregular };

struct CutPolyline {
    std::vector<Point2> points;
    std::vector<SpanKind> segment_kinds; ///< one per waypoint span
};

struct IndexMatch {
    std::size_t m = 0;
    std::size_t n = 0;
    friend bool operator==(const IndexMatch&, const IndexMatch&) = default;
};

struct PairGroundTruth {
    int id_m = -1;
    int id_n = -1;
    std::vector<IndexMatch> matches;
    RigidTransform2D gt_transform; ///< fragment-n local frame -> fragment-m local frame
    double overlap_proportion = 0.0;
    Difficulty difficulty = Difficulty::Medium;
};

/// A pair of touching boundary pixel centres in the parent frame.
struct BoundaryMatch {
    Point2 a;
    Point2 b;
};

inline Difficulty classify_overlap(double overlap, const GeneratorConfig& cfg) {
    if (overlap >= cfg.low_overlap_min) return Difficulty::Low;
    if (overlap < cfg.high_overlap_max) return Difficulty::High;
    return Difficulty::Medium;
}

inline Rect pixel_rect(const FragmentRecord& f) {
    return {{-0.5, -0.5}, {f.width() - 0.5, f.height() - 0.5}};
}

inline FragmentRecord whole_image_fragment(const RgbImage& image, int source_image_id = 0) {
    FragmentRecord f;
    f.pixels = image;
    f.mask = Mask(image.width, image.height, 1);
    f.contour = codec::trace_contour(f.mask);
    f.source_image_id = source_image_id;
    return f;
}

// ---------------------------------------------------------------------------
// Cut endpoints

/// Chord endpoints on the circle whose smaller arc exceeds tau * half perimeter.
inline std::pair<Point2, Point2> sample_circle_chord(const Circle& circle, double tau, Rng& rng) {
    const double limit = tau * circle.half_perimeter();
    for (int attempt = 0; attempt < 1'000'000; ++attempt) {
        const double a = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        const double b = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        const Point2 pa = circle.center + circle.radius * Point2{std::cos(a), std::sin(a)};
        const Point2 pb = circle.center + circle.radius * Point2{std::cos(b), std::sin(b)};
        if (smaller_arc_length(circle, pa, pb) > limit) return {pa, pb};
    }
    throw GenerationRetry("sample_circle_chord: arc constraint never satisfied");
}

inline std::pair<Point2, Point2> sample_cut_endpoints(const FragmentRecord& fragment,
                                                      const GeneratorConfig& cfg, Rng& rng) {
    const Circle circle = circumcircle(pixel_rect(fragment));
    for (int attempt = 0; attempt < cfg.endpoint_attempts; ++attempt) {
        const auto [pa, pb] = sample_circle_chord(circle, cfg.tau, rng);
        const auto hits = segment_contour_intersections(fragment.contour, pa, pb);
        if (hits.size() >= 2 && distance(hits.front().point, hits.back().point) > 1.0) {
            return {hits.front().point, hits.back().point};
        }
    }
    throw GenerationRetry("sample_cut_endpoints: no chord intersects the fragment");
}

// ---------------------------------------------------------------------------
// Interior waypoints

inline double distance_to_contour(const OrderedContour& contour, Point2 p) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : contour.points) {
        const double dx = p.x - q.x;
        const double dy = p.y - q.y;
        best = std::min(best, dx * dx + dy * dy);
    }
    return std::sqrt(best);
}

/// Up to m mask points farther than d_min from the contour, sorted by their
/// projection on axis_from -> axis_to.
inline std::vector<Point2> sample_interior_waypoints(const FragmentRecord& fragment, int m,
                                                     const GeneratorConfig& cfg, Rng& rng,
                                                     Point2 axis_from = {0, 0}, Point2 axis_to = {1, 0}) {
    if (m < 0 || m > cfg.n_max) throw InvalidInput("sample_interior_waypoints: m outside [0, n_max]");
    std::vector<Point2> points;
    if (m == 0) return points;
    // No mask point can be farther than half the smaller bbox side from the boundary.
    if (0.5 * std::min(fragment.width(), fragment.height()) <= cfg.d_min) {
        spdlog::debug("waypoints: fragment too small for d_min={}, using 0 of {}", cfg.d_min, m);
        return points;
    }
    for (int k = 0; k < m; ++k) {
        bool placed = false;
        for (int attempt = 0; attempt < cfg.waypoint_attempts; ++attempt) {
            const Point2 p{uniform(rng, 0.0, fragment.width() - 1.0), uniform(rng, 0.0, fragment.height() - 1.0)};
            const int px = static_cast<int>(std::lround(p.x));
            const int py = static_cast<int>(std::lround(p.y));
            if (!fragment.mask.get(px, py)) continue;
            if (distance_to_contour(fragment.contour, p) > cfg.d_min) {
                points.push_back(p);
                placed = true;
                break;
            }
        }
        if (!placed) {
            spdlog::debug("waypoints: placed {} of {} requested points", points.size(), m);
            break;
        }
    }
    const Point2 axis = axis_to - axis_from;
    std::stable_sort(points.begin(), points.end(), [&](Point2 a, Point2 b) {
        return dot(a - axis_from, axis) < dot(b - axis_from, axis);
    });
    return points;
}

// ---------------------------------------------------------------------------
// Cut segments

struct FourierSpan {
    std::vector<Point2> points;
    double phase = 0.0;
    double amplitude = 0.0;
    double period = 0.0;
    bool straight_fallback = false;
};

/// Raw series value sum_{i=0..n} A/(1+i) sin(2 pi i x / T + phase) + H/2.
inline double fourier_series(double x, double amplitude, double period, double phase, int n_terms,
                             double height) {
    double y = 0.0;
    for (int i = 0; i <= n_terms; ++i) {
        y += amplitude / (1.0 + i) * std::sin(2.0 * std::numbers::pi * i / period * x + phase);
    }
    return y + 0.5 * height;
}

/// Samples the curve at unit steps along p_i -> p_j given explicit parameters,
/// anchored so that it starts at p_i and ends at p_j.
inline std::vector<Point2> fourier_polyline(Point2 p_i, Point2 p_j, double amplitude, double period, double phase,
                                            int n_terms, double height) {
    const double length = distance(p_i, p_j);
    if (length == 0.0) throw InvalidGeometry("fourier_curve: coincident endpoints");
    const Point2 u = (1.0 / length) * (p_j - p_i);
    const Point2 v{-u.y, u.x};
    std::vector<double> xs;
    for (double x = 0.0; x < length; x += 1.0) xs.push_back(x);
    xs.push_back(length);
    const double y0 = fourier_series(0.0, amplitude, period, phase, n_terms, height);
    const double y1 = fourier_series(length, amplitude, period, phase, n_terms, height);
    std::vector<Point2> pts;
    pts.reserve(xs.size());
    for (double x : xs) {
        const double raw = fourier_series(x, amplitude, period, phase, n_terms, height);
        const double anchored = raw - (y0 + (y1 - y0) * (x / length));
        pts.push_back(p_i + x * u + anchored * v);
    }
    pts.front() = p_i;
    pts.back() = p_j;
    return pts;
}

inline FourierSpan fourier_curve(Point2 p_i, Point2 p_j, double width, double height,
                                 const GeneratorConfig& cfg, Rng& rng) {
    if (p_i == p_j) throw InvalidGeometry("fourier_curve: coincident endpoints");
    FourierSpan span;
    span.phase = uniform(rng, -std::numbers::pi, std::numbers::pi);
    span.amplitude = gaussian(rng, cfg.s1 * height, cfg.s2 * height);
    for (int attempt = 0; attempt < cfg.period_attempts; ++attempt) {
        span.period = gaussian(rng, cfg.s3 * width, cfg.s4 * width);
        if (span.period > 1.0) break;
    }
    if (!(span.period > 1.0)) {
        span.straight_fallback = true;
        span.points = {p_i, p_j};
        return span;
    }
    span.points = fourier_polyline(p_i, p_j, span.amplitude, span.period, span.phase, cfg.n_fourier, height);
    return span;
}

inline bool segments_intersect(Point2 p1, Point2 p2, Point2 q1, Point2 q2) {
    auto orient = [](Point2 a, Point2 b, Point2 c) { return cross(b - a, c - a); };
    auto on_segment = [](Point2 a, Point2 b, Point2 c) {
        return std::min(a.x, b.x) - 1e-12 <= c.x && c.x <= std::max(a.x, b.x) + 1e-12 &&
               std::min(a.y, b.y) - 1e-12 <= c.y && c.y <= std::max(a.y, b.y) + 1e-12;
    };
    const double d1 = orient(q1, q2, p1);
    const double d2 = orient(q1, q2, p2);
    const double d3 = orient(p1, p2, q1);
    const double d4 = orient(p1, p2, q2);
    if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) return true;
    if (d1 == 0 && on_segment(q1, q2, p1)) return true;
    if (d2 == 0 && on_segment(q1, q2, p2)) return true;
    if (d3 == 0 && on_segment(p1, p2, q1)) return true;
    if (d4 == 0 && on_segment(p1, p2, q2)) return true;
    return false;
}

/// True when no two non-adjacent segments of the open polyline touch.
inline bool is_simple_polyline(const std::vector<Point2>& pts) {
    const std::size_t n = pts.size();
    if (n < 4) return true;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const double ax0 = std::min(pts[i].x, pts[i + 1].x), ax1 = std::max(pts[i].x, pts[i + 1].x);
        const double ay0 = std::min(pts[i].y, pts[i + 1].y), ay1 = std::max(pts[i].y, pts[i + 1].y);
        for (std::size_t j = i + 2; j + 1 < n; ++j) {
            if (std::max(pts[j].x, pts[j + 1].x) < ax0 || std::min(pts[j].x, pts[j + 1].x) > ax1 ||
                std::max(pts[j].y, pts[j + 1].y) < ay0 || std::min(pts[j].y, pts[j + 1].y) > ay1) {
                continue;
            }
            if (segments_intersect(pts[i], pts[i + 1], pts[j], pts[j + 1])) return false;
        }
    }
    return true;
}

inline CutPolyline build_cut_polyline(const std::vector<Point2>& waypoints, double width, double height,
                                      const GeneratorConfig& cfg, Rng& rng) {
    if (waypoints.size() < 2) throw InvalidInput("build_cut_polyline: need at least two waypoints");
    const std::size_t spans = waypoints.size() - 1;
    for (int attempt = 0; attempt < cfg.polyline_attempts; ++attempt) {
        CutPolyline cut;
        cut.points.push_back(waypoints.front());
        for (std::size_t s = 0; s < spans; ++s) {
            const Point2 a = waypoints[s];
            const Point2 b = waypoints[s + 1];
            const bool irregular = uniform01(rng) < cfg.rho;
            if (irregular && !(a == b)) {
                const FourierSpan span = fourier_curve(a, b, width, height, cfg, rng);
                cut.segment_kinds.push_back(span.straight_fallback ? SpanKind::Straight : SpanKind::Irregular);
                cut.points.insert(cut.points.end(), span.points.begin() + 1, span.points.end());
            } else {
                cut.segment_kinds.push_back(SpanKind::Straight);
                cut.points.push_back(b);
            }
        }
        if (is_simple_polyline(cut.points)) return cut;
    }
    CutPolyline straight;
    straight.points = waypoints;
    straight.segment_kinds.assign(spans, SpanKind::Straight);
    return straight;
}

// ---------------------------------------------------------------------------
// Raster cutting

namespace detail {

/// 4-connected raster of a polyline; a 4-connected curve separates 8-connected
/// regions. `segment` receives, per marked pixel, the index of the segment
/// that first reached it.
inline void rasterize_4connected(const std::vector<Point2>& pts, Mask& out, std::vector<int>& segment) {
    segment.assign(out.bits.size(), -1);
    auto mark = [&](int x, int y, int s) {
        if (!out.contains(x, y)) return;
        const std::size_t idx = static_cast<std::size_t>(y) * out.width + x;
        if (!out.bits[idx]) segment[idx] = s;
        out.bits[idx] = 1;
    };
    bool have_prev = false;
    int px = 0, py = 0;
    for (std::size_t s = 0; s + 1 < pts.size(); ++s) {
        const Point2 a = pts[s];
        const Point2 b = pts[s + 1];
        const int seg = static_cast<int>(s);
        const double len = distance(a, b);
        const int steps = std::max(1, static_cast<int>(std::ceil(len / 0.2)));
        for (int k = 0; k <= steps; ++k) {
            const Point2 p = a + (static_cast<double>(k) / steps) * (b - a);
            const int x = static_cast<int>(std::lround(p.x));
            const int y = static_cast<int>(std::lround(p.y));
            if (have_prev && x != px && y != py) {
                // Close the diagonal step through the corner nearer the segment.
                const Point2 c1{static_cast<double>(px), static_cast<double>(y)};
                const Point2 c2{static_cast<double>(x), static_cast<double>(py)};
                const Point2 dir = b - a;
                if (std::abs(cross(dir, c1 - a)) <= std::abs(cross(dir, c2 - a))) mark(px, y, seg);
                else mark(x, py, seg);
            }
            if (!have_prev || x != px || y != py) mark(x, y, seg);
            px = x;
            py = y;
            have_prev = true;
        }
    }
}

/// 8-connected component labels (1-based) of a mask; returns the count.
inline int label_components(const Mask& mask, std::vector<int>& labels) {
    labels.assign(mask.bits.size(), 0);
    std::vector<std::pair<int, int>> stack;
    int count = 0;
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            const std::size_t idx = static_cast<std::size_t>(y) * mask.width + x;
            if (!mask.bits[idx] || labels[idx]) continue;
            ++count;
            labels[idx] = count;
            stack.push_back({x, y});
            while (!stack.empty()) {
                auto [cx, cy] = stack.back();
                stack.pop_back();
                for (const auto& d : codec::kMooreDirs) {
                    const int nx = cx + d[0];
                    const int ny = cy + d[1];
                    if (!mask.get(nx, ny)) continue;
                    const std::size_t nidx = static_cast<std::size_t>(ny) * mask.width + nx;
                    if (labels[nidx]) continue;
                    labels[nidx] = count;
                    stack.push_back({nx, ny});
                }
            }
        }
    }
    return count;
}

/// Crops a child fragment (given by a parent-local mask) out of the parent.
inline FragmentRecord crop_child(const FragmentRecord& parent, const Mask& child_mask) {
    int x0 = child_mask.width, y0 = child_mask.height, x1 = -1, y1 = -1;
    for (int y = 0; y < child_mask.height; ++y) {
        for (int x = 0; x < child_mask.width; ++x) {
            if (!child_mask.get(x, y)) continue;
            x0 = std::min(x0, x);
            y0 = std::min(y0, y);
            x1 = std::max(x1, x);
            y1 = std::max(y1, y);
        }
    }
    FragmentRecord child;
    child.source_image_id = parent.source_image_id;
    child.offset = parent.offset + Point2{static_cast<double>(x0), static_cast<double>(y0)};
    const int w = x1 - x0 + 1;
    const int h = y1 - y0 + 1;
    child.mask = Mask(w, h);
    child.pixels = RgbImage(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (!child_mask.get(x + x0, y + y0)) continue;
            child.mask.set(x, y, true);
            for (int c = 0; c < 3; ++c) child.pixels.at(x, y, c) = parent.pixels.at(x + x0, y + y0, c);
        }
    }
    child.contour = codec::trace_contour(child.mask);
    return child;
}

/// Map from boundary pixel (parent-frame integer coords) to its first contour index.
inline std::unordered_map<std::int64_t, std::size_t> contour_lookup(const FragmentRecord& f) {
    std::unordered_map<std::int64_t, std::size_t> lut;
    lut.reserve(f.contour.size() * 2);
    for (std::size_t i = 0; i < f.contour.size(); ++i) {
        const std::int64_t x = std::lround(f.contour[i].x + f.offset.x);
        const std::int64_t y = std::lround(f.contour[i].y + f.offset.y);
        lut.emplace((y << 32) ^ (x & 0xffffffff), i);
    }
    return lut;
}

inline std::int64_t pixel_key(std::int64_t x, std::int64_t y) { return (y << 32) ^ (x & 0xffffffff); }

// 4-neighbours first so that the nearest partner is found first.
inline constexpr std::array<std::array<int, 2>, 8> kNearestFirst{{
    {1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 1}, {-1, 1}, {1, -1}, {-1, -1},
}};

/// Pairs every boundary pixel of `a` with its nearest boundary pixel of `b`
/// within one 8-step (<= sqrt 2 px), in the parent frame.
inline std::vector<BoundaryMatch> match_boundaries(const FragmentRecord& a, const FragmentRecord& b) {
    const auto lut_a = contour_lookup(a);
    const auto lut_b = contour_lookup(b);
    std::vector<BoundaryMatch> out;
    std::vector<std::uint8_t> done(a.contour.size(), 0);
    for (std::size_t i = 0; i < a.contour.size(); ++i) {
        const std::int64_t x = std::lround(a.contour[i].x + a.offset.x);
        const std::int64_t y = std::lround(a.contour[i].y + a.offset.y);
        if (lut_a.at(pixel_key(x, y)) != i) continue; // revisited pixel
        for (const auto& d : kNearestFirst) {
            if (lut_b.contains(pixel_key(x + d[0], y + d[1]))) {
                out.push_back({{static_cast<double>(x), static_cast<double>(y)},
                               {static_cast<double>(x + d[0]), static_cast<double>(y + d[1])}});
                break;
            }
        }
    }
    return out;
}

} // namespace detail

struct CutResult {
    FragmentRecord first;
    FragmentRecord second;
    std::vector<BoundaryMatch> matches; ///< first-boundary pixel -> second-boundary pixel, parent frame
};

/// Splits a fragment along a fragment-local cut polyline.
inline CutResult cut_fragment(const FragmentRecord& fragment, const CutPolyline& cut) {
    if (cut.points.size() < 2) throw InvalidCut("cut_fragment: polyline needs two points");
    // Push both ends a little past the boundary so the raster cut is closed.
    std::vector<Point2> pts = cut.points;
    auto extend = [](Point2 end, Point2 inner) {
        const Point2 d = end - inner;
        const double len = norm(d);
        return len > 0 ? end + (2.5 / len) * d : end;
    };
    pts.insert(pts.begin(), extend(pts[0], pts[1]));
    pts.push_back(extend(pts.back(), pts[pts.size() - 2]));

    Mask cut_mask(fragment.width(), fragment.height());
    std::vector<int> segment;
    detail::rasterize_4connected(pts, cut_mask, segment);

    Mask rest = fragment.mask;
    std::size_t cut_pixels = 0;
    for (std::size_t i = 0; i < rest.bits.size(); ++i) {
        if (cut_mask.bits[i] && rest.bits[i]) {
            rest.bits[i] = 0;
            ++cut_pixels;
        } else {
            cut_mask.bits[i] = 0;
        }
    }
    if (cut_pixels == 0) throw InvalidCut("cut_fragment: cut misses the fragment");

    std::vector<int> labels;
    const int count = detail::label_components(rest, labels);
    if (count != 2) {
        throw InvalidCut("cut_fragment: cut produced " + std::to_string(count) + " components");
    }

    // Each cut pixel goes to the side of the polyline its centre lies on; the
    // components learn their side from the pixels bordering the cut.
    const int w = fragment.width();
    auto side_of = [&](int x, int y, int seg) {
        const Point2 a = pts[static_cast<std::size_t>(seg)];
        const Point2 b = pts[static_cast<std::size_t>(seg) + 1];
        return cross(b - a, Point2{static_cast<double>(x), static_cast<double>(y)} - a) < 0.0 ? -1 : 1;
    };
    double vote[3] = {0, 0, 0};
    for (int y = 0; y < fragment.height(); ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t idx = static_cast<std::size_t>(y) * w + x;
            if (!cut_mask.bits[idx]) continue;
            const int d4[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
            for (const auto& d : d4) {
                const int nx = x + d[0], ny = y + d[1];
                if (!rest.get(nx, ny)) continue;
                vote[labels[static_cast<std::size_t>(ny) * w + nx]] += side_of(nx, ny, segment[idx]);
            }
        }
    }
    const int side1 = vote[1] < 0 ? -1 : 1;
    const int side2 = vote[2] < 0 ? -1 : 1;
    if (side1 == side2) throw InvalidCut("cut_fragment: both components lie on one side of the cut");

    Mask first(fragment.width(), fragment.height());
    Mask second(fragment.width(), fragment.height());
    for (int y = 0; y < fragment.height(); ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t idx = static_cast<std::size_t>(y) * w + x;
            if (cut_mask.bits[idx]) {
                (side_of(x, y, segment[idx]) == side1 ? first : second).bits[idx] = 1;
            } else if (labels[idx] == 1) {
                first.bits[idx] = 1;
            } else if (labels[idx] == 2) {
                second.bits[idx] = 1;
            }
        }
    }
    if (codec::count_components(first) != 1 || codec::count_components(second) != 1) {
        throw InvalidCut("cut_fragment: a side is not connected");
    }

    CutResult result{detail::crop_child(fragment, first), detail::crop_child(fragment, second), {}};
    result.matches = detail::match_boundaries(result.first, result.second);
    return result;
}

// ---------------------------------------------------------------------------
// Pair ground truth

namespace detail {

/// Start index (in sorted order) after the largest cyclic gap.
inline std::size_t cyclic_run_start(const std::vector<std::size_t>& sorted, std::size_t period) {
    std::size_t start = 0;
    std::size_t best_gap = 0;
    for (std::size_t k = 0; k < sorted.size(); ++k) {
        const std::size_t next = sorted[(k + 1) % sorted.size()];
        const std::size_t gap = (next + period - sorted[k]) % period;
        const std::size_t g = (sorted.size() == 1) ? period : (gap == 0 ? period : gap);
        if (g > best_gap) {
            best_gap = g;
            start = (k + 1) % sorted.size();
        }
    }
    return start;
}

/// Orders matches along the m-run and keeps the longest chain along which the
/// n-index runs backwards (the shared edge is traversed in opposite senses).
inline std::vector<IndexMatch> staircase_filter(std::vector<IndexMatch> matches, std::size_t size_m,
                                                std::size_t size_n) {
    if (matches.size() < 2) return matches;
    std::sort(matches.begin(), matches.end(), [](const IndexMatch& l, const IndexMatch& r) {
        return l.m != r.m ? l.m < r.m : l.n < r.n;
    });
    matches.erase(std::unique(matches.begin(), matches.end(),
                              [](const IndexMatch& l, const IndexMatch& r) { return l.m == r.m; }),
                  matches.end());
    std::vector<std::size_t> ms;
    for (const auto& mt : matches) ms.push_back(mt.m);
    const std::size_t m_start = cyclic_run_start(ms, size_m);
    std::rotate(matches.begin(), matches.begin() + static_cast<std::ptrdiff_t>(m_start), matches.end());

    std::vector<std::size_t> ns;
    for (const auto& mt : matches) ns.push_back(mt.n);
    std::sort(ns.begin(), ns.end());
    ns.erase(std::unique(ns.begin(), ns.end()), ns.end());
    const std::size_t n_lo = ns[cyclic_run_start(ns, size_n)];

    // Longest chain with non-increasing unwrapped n (patience sorting on -u).
    const std::size_t count = matches.size();
    std::vector<long long> key(count);
    for (std::size_t k = 0; k < count; ++k) {
        const long long u = static_cast<long long>((matches[k].n + size_n - n_lo) % size_n);
        key[k] = -u;
    }
    std::vector<std::size_t> tails;
    std::vector<long long> tail_keys;
    std::vector<std::ptrdiff_t> parent(count, -1);
    for (std::size_t k = 0; k < count; ++k) {
        const auto it = std::upper_bound(tail_keys.begin(), tail_keys.end(), key[k]);
        const std::size_t pos = static_cast<std::size_t>(it - tail_keys.begin());
        if (pos > 0) parent[k] = static_cast<std::ptrdiff_t>(tails[pos - 1]);
        if (pos == tails.size()) {
            tails.push_back(k);
            tail_keys.push_back(key[k]);
        } else {
            tails[pos] = k;
            tail_keys[pos] = key[k];
        }
    }
    std::vector<IndexMatch> kept;
    for (std::ptrdiff_t k = tails.empty() ? -1 : static_cast<std::ptrdiff_t>(tails.back()); k >= 0;
         k = parent[static_cast<std::size_t>(k)]) {
        kept.push_back(matches[static_cast<std::size_t>(k)]);
    }
    std::reverse(kept.begin(), kept.end());
    return kept;
}

/// Re-picks the n partner of every m index on the run among all n contour
/// indices within one 8-step, so the run takes unit anti-diagonal steps
/// wherever the pixels allow (Viterbi). Skipped m indices inside the run that
/// have a partner are filled in. Falls back to `run` if no chain exists.
inline std::vector<IndexMatch> align_diagonal(const FragmentRecord& f_m, const FragmentRecord& f_n,
                                              const std::vector<IndexMatch>& run) {
    if (run.size() < 2) return run;
    const std::size_t size_m = f_m.contour.size();
    const std::size_t size_n = f_n.contour.size();
    std::unordered_map<std::int64_t, std::vector<std::size_t>> lut_n;
    for (std::size_t i = 0; i < size_n; ++i) {
        lut_n[pixel_key(std::lround(f_n.contour[i].x + f_n.offset.x), std::lround(f_n.contour[i].y + f_n.offset.y))]
            .push_back(i);
    }
    std::vector<std::size_t> ms;
    std::vector<std::vector<std::size_t>> cand;
    const std::size_t span = (run.back().m + size_m - run.front().m) % size_m;
    for (std::size_t s = 0; s <= span; ++s) {
        const std::size_t m = (run.front().m + s) % size_m;
        const std::int64_t x = std::lround(f_m.contour[m].x + f_m.offset.x);
        const std::int64_t y = std::lround(f_m.contour[m].y + f_m.offset.y);
        std::vector<std::size_t> c;
        for (const auto& d : kNearestFirst) {
            auto it = lut_n.find(pixel_key(x + d[0], y + d[1]));
            if (it != lut_n.end()) c.insert(c.end(), it->second.begin(), it->second.end());
        }
        if (c.empty()) continue;
        ms.push_back(m);
        cand.push_back(std::move(c));
    }

    constexpr double kNone = -1e300;
    std::vector<std::vector<double>> score(ms.size());
    std::vector<std::vector<int>> back(ms.size());
    for (std::size_t k = 0; k < ms.size(); ++k) {
        score[k].assign(cand[k].size(), kNone);
        back[k].assign(cand[k].size(), -1);
        const std::size_t dm = k ? (ms[k] + size_m - ms[k - 1]) % size_m : 0;
        bool any = false;
        for (std::size_t a = 0; a < cand[k].size(); ++a) {
            const double own = -1e-3 * static_cast<double>(a); // nearer partners listed first
            if (k == 0) {
                score[k][a] = own;
                any = true;
                continue;
            }
            for (std::size_t b = 0; b < cand[k - 1].size(); ++b) {
                if (score[k - 1][b] == kNone) continue;
                const std::size_t dn = (cand[k - 1][b] + size_n - cand[k][a]) % size_n;
                if (dn >= size_n / 2) continue;
                const double step = (dn == dm ? 1.0 : 0.0) -
                                    0.01 * std::abs(static_cast<double>(dn) - static_cast<double>(dm));
                const double v = score[k - 1][b] + own + step;
                if (v > score[k][a]) {
                    score[k][a] = v;
                    back[k][a] = static_cast<int>(b);
                }
            }
            any = any || score[k][a] != kNone;
        }
        if (!any) return run;
    }
    std::vector<IndexMatch> out(ms.size());
    auto best = std::max_element(score.back().begin(), score.back().end());
    int a = static_cast<int>(best - score.back().begin());
    for (std::size_t k = ms.size(); k-- > 0;) {
        out[k] = {ms[k], cand[k][static_cast<std::size_t>(a)]};
        a = back[k][static_cast<std::size_t>(a)];
    }
    std::size_t total_n = 0;
    for (std::size_t k = 0; k + 1 < out.size(); ++k) total_n += (out[k].n + size_n - out[k + 1].n) % size_n;
    return total_n < size_n ? out : run;
}

} // namespace detail

/// Ground truth for two adjacent fragments; nullopt when fewer than two matches survive.
inline std::optional<PairGroundTruth> derive_pair_gt(const FragmentRecord& f_m, const FragmentRecord& f_n,
                                                     const std::vector<BoundaryMatch>& raw,
                                                     const GeneratorConfig& cfg) {
    if (raw.empty()) throw InvalidInput("derive_pair_gt: no matched boundary points");
    const auto lut_m = detail::contour_lookup(f_m);
    const auto lut_n = detail::contour_lookup(f_n);
    std::vector<IndexMatch> matches;
    matches.reserve(raw.size());
    for (const auto& bm : raw) {
        const auto im = lut_m.find(detail::pixel_key(std::lround(bm.a.x), std::lround(bm.a.y)));
        const auto in = lut_n.find(detail::pixel_key(std::lround(bm.b.x), std::lround(bm.b.y)));
        if (im == lut_m.end() || in == lut_n.end()) continue;
        matches.push_back({im->second, in->second});
    }
    matches = detail::staircase_filter(std::move(matches), f_m.contour.size(), f_n.contour.size());
    matches = detail::align_diagonal(f_m, f_n, matches);
    if (matches.size() < 2) {
        spdlog::warn("pair ({}, {}): fewer than two matches, discarded", f_m.id, f_n.id);
        return std::nullopt;
    }
    std::vector<Point2> src, dst;
    for (const auto& mt : matches) {
        src.push_back(f_n.contour[mt.n]);
        dst.push_back(f_m.contour[mt.m]);
    }
    PairGroundTruth gt;
    gt.id_m = f_m.id;
    gt.id_n = f_n.id;
    try {
        gt.gt_transform = rigid_fit(src, dst);
    } catch (const DegenerateConfiguration&) {
        spdlog::warn("pair ({}, {}): matches collapse to one point, discarded", f_m.id, f_n.id);
        return std::nullopt;
    }
    gt.overlap_proportion = static_cast<double>(matches.size()) /
                            static_cast<double>(std::min(f_m.contour.size(), f_n.contour.size()));
    gt.overlap_proportion = std::min(gt.overlap_proportion, 1.0);
    gt.difficulty = classify_overlap(gt.overlap_proportion, cfg);
    gt.matches = std::move(matches);
    return gt;
}

// ---------------------------------------------------------------------------
// Whole-image generation

struct GenerationResult {
    std::vector<FragmentRecord> fragments;
    std::vector<PairGroundTruth> pairs;
    int successful_cuts = 0;
    int failed_iterations = 0;
};

/// One cut attempt on a fragment; nullopt when the cut is invalid or too small.
inline std::optional<CutResult> try_cut(const FragmentRecord& f, const GeneratorConfig& cfg, Rng& rng) {
    try {
        const auto [p_start, p_end] = sample_cut_endpoints(f, cfg, rng);
        const int m = uniform_int(rng, 0, cfg.n_max);
        std::vector<Point2> waypoints = sample_interior_waypoints(f, m, cfg, rng, p_start, p_end);
        waypoints.insert(waypoints.begin(), p_start);
        waypoints.push_back(p_end);
        const CutPolyline cut = build_cut_polyline(waypoints, f.width(), f.height(), cfg, rng);
        CutResult result = cut_fragment(f, cut);
        auto big_enough = [&cfg](const FragmentRecord& c) {
            return c.width() >= cfg.w_min && c.height() >= cfg.h_min;
        };
        if (!big_enough(result.first) || !big_enough(result.second)) return std::nullopt;
        return result;
    } catch (const GenerationRetry&) {
        return std::nullopt;
    } catch (const InvalidCut&) {
        return std::nullopt;
    } catch (const InvalidMask&) {
        return std::nullopt;
    }
}

/// All adjacency pairs among a partition, found from touching boundary pixels.
inline std::vector<PairGroundTruth> discover_pairs(const std::vector<FragmentRecord>& fragments, int image_width,
                                                   int image_height, const GeneratorConfig& cfg) {
    std::vector<int> label(static_cast<std::size_t>(image_width) * image_height, -1);
    for (std::size_t k = 0; k < fragments.size(); ++k) {
        const auto& f = fragments[k];
        const int ox = static_cast<int>(std::lround(f.offset.x));
        const int oy = static_cast<int>(std::lround(f.offset.y));
        for (int y = 0; y < f.height(); ++y) {
            for (int x = 0; x < f.width(); ++x) {
                if (f.mask.get(x, y)) label[static_cast<std::size_t>(y + oy) * image_width + (x + ox)] = static_cast<int>(k);
            }
        }
    }
    auto label_at = [&](int x, int y) {
        if (x < 0 || y < 0 || x >= image_width || y >= image_height) return -1;
        return label[static_cast<std::size_t>(y) * image_width + x];
    };
    std::vector<std::pair<int, int>> neighbours;
    for (std::size_t k = 0; k < fragments.size(); ++k) {
        const auto& f = fragments[k];
        for (const auto& p : f.contour.points) {
            const int gx = static_cast<int>(std::lround(p.x + f.offset.x));
            const int gy = static_cast<int>(std::lround(p.y + f.offset.y));
            for (const auto& d : codec::kMooreDirs) {
                const int other = label_at(gx + d[0], gy + d[1]);
                if (other > static_cast<int>(k)) neighbours.push_back({static_cast<int>(k), other});
            }
        }
    }
    std::sort(neighbours.begin(), neighbours.end());
    neighbours.erase(std::unique(neighbours.begin(), neighbours.end()), neighbours.end());

    std::vector<PairGroundTruth> pairs;
    for (const auto& [a, b] : neighbours) {
        const auto raw = detail::match_boundaries(fragments[a], fragments[b]);
        if (raw.size() < 2) continue;
        if (auto gt = derive_pair_gt(fragments[a], fragments[b], raw, cfg)) pairs.push_back(std::move(*gt));
    }
    return pairs;
}

/// Tears one image. Fragment ids are first_id, first_id+1, ...
inline GenerationResult generate(const RgbImage& image, const GeneratorConfig& cfg, Rng& rng,
                                 int source_image_id = 0, int first_id = 0) {
    cfg.validate();
    GenerationResult out;
    std::vector<FragmentRecord> live;
    live.push_back(whole_image_fragment(image, source_image_id));

    const bool cuttable = image.width >= 2 * cfg.w_min && image.height >= 2 * cfg.h_min;
    while (cuttable && out.successful_cuts < cfg.t_max && out.failed_iterations < cfg.max_failed_iterations) {
        const std::size_t pick = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(live.size()) - 1));
        bool success = false;
        for (int attempt = 0; attempt < cfg.retries_per_iteration && !success; ++attempt) {
            auto result = try_cut(live[pick], cfg, rng);
            if (!result) continue;
            live[pick] = std::move(result->first);
            live.push_back(std::move(result->second));
            success = true;
        }
        if (success) ++out.successful_cuts;
        else ++out.failed_iterations;
    }
    for (std::size_t k = 0; k < live.size(); ++k) live[k].id = first_id + static_cast<int>(k);
    out.pairs = discover_pairs(live, image.width, image.height, cfg);
    out.fragments = std::move(live);
    spdlog::debug("image {}: {} fragments, {} pairs, {} failed iterations", source_image_id, out.fragments.size(),
                  out.pairs.size(), out.failed_iterations);
    return out;
}

/// Binary M x N matrix with ones at the matched index pairs.
inline std::vector<std::uint8_t> gt_similarity(const PairGroundTruth& gt, std::size_t size_m, std::size_t size_n) {
    std::vector<std::uint8_t> s(size_m * size_n, 0);
    for (const auto& mt : gt.matches) s[mt.m * size_n + mt.n] = 1;
    return s;
}

} // namespace fragmenta::tearing
