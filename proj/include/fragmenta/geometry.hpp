#pragma once
// Exact 2-D primitives shared by generation, matching and evaluation.
//
// Coordinates are image coordinates: x grows to the right (columns), y grows
// downward (rows). Pixel (col, row) has its center at (col, row).

#include "fragmenta/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

namespace fragmenta {

struct Point2 {
    double x = 0.0;
    double y = 0.0;

    friend constexpr Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
    friend constexpr Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
    friend constexpr Point2 operator*(double s, Point2 a) { return {s * a.x, s * a.y}; }
    friend constexpr Point2 operator*(Point2 a, double s) { return {s * a.x, s * a.y}; }
    friend constexpr bool operator==(Point2 a, Point2 b) = default;
};

inline double dot(Point2 a, Point2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Point2 a, Point2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Point2 a) { return std::hypot(a.x, a.y); }
inline double distance(Point2 a, Point2 b) { return norm(a - b); }

/// Closed boundary polyline. Fragment boundaries are traced counter-clockwise
/// as seen on screen (negative shoelace sum in y-down coordinates).
struct OrderedContour {
    std::vector<Point2> points;
    bool closed = true;

    std::size_t size() const { return points.size(); }
    const Point2& operator[](std::size_t i) const { return points[i]; }
};

/// Axis-aligned rectangle given by two opposite corners.
struct Rect {
    Point2 min;
    Point2 max;

    double width() const { return max.x - min.x; }
    double height() const { return max.y - min.y; }
};

struct Circle {
    Point2 center;
    double radius = 0.0;

    double diameter() const { return 2.0 * radius; }
    double half_perimeter() const { return std::numbers::pi * radius; }
};

/// Wrap an angle into (-pi, pi].
inline double normalize_angle(double theta) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    double r = std::fmod(theta, two_pi);
    if (r <= -std::numbers::pi) r += two_pi;
    if (r > std::numbers::pi) r -= two_pi;
    return r;
}

/// Proper rigid motion p -> R(theta) p + t.
struct RigidTransform2D {
    double theta = 0.0;
    double tx = 0.0;
    double ty = 0.0;

    static RigidTransform2D make(double theta, double tx, double ty) {
        return {normalize_angle(theta), tx, ty};
    }

    Point2 apply(Point2 p) const {
        const double c = std::cos(theta);
        const double s = std::sin(theta);
        return {c * p.x - s * p.y + tx, s * p.x + c * p.y + ty};
    }

    std::vector<Point2> apply(std::span<const Point2> pts) const {
        std::vector<Point2> out;
        out.reserve(pts.size());
        for (const auto& p : pts) out.push_back(apply(p));
        return out;
    }

    RigidTransform2D inverse() const {
        const double c = std::cos(theta);
        const double s = std::sin(theta);
        // R^T (p - t)
        return make(-theta, -(c * tx + s * ty), -(-s * tx + c * ty));
    }

    /// (this ∘ other)(p) = this(other(p))
    RigidTransform2D compose(const RigidTransform2D& other) const {
        const Point2 t = apply(Point2{other.tx, other.ty});
        return make(theta + other.theta, t.x, t.y);
    }

    /// Determinant of the linear part; always 1 for a proper rotation.
    double determinant() const {
        const double c = std::cos(theta);
        const double s = std::sin(theta);
        return c * c + s * s;
    }
};

inline Circle circumcircle(const Rect& rect) {
    const double w = rect.width();
    const double h = rect.height();
    if (!(w > 0.0) || !(h > 0.0)) {
        throw InvalidGeometry("circumcircle: rectangle has non-positive width or height");
    }
    return {{rect.min.x + 0.5 * w, rect.min.y + 0.5 * h}, 0.5 * std::hypot(w, h)};
}

/// Length of the shorter arc between two points lying on the circle.
inline double smaller_arc_length(const Circle& circle, Point2 a, Point2 b) {
    const double tol = 1e-6 * circle.radius;
    const Point2 da = a - circle.center;
    const Point2 db = b - circle.center;
    if (std::abs(norm(da) - circle.radius) > tol || std::abs(norm(db) - circle.radius) > tol) {
        throw InvalidGeometry("smaller_arc_length: point not on circle");
    }
    const double angle = std::abs(std::atan2(cross(da, db), dot(da, db)));
    return circle.radius * std::min(angle, std::numbers::pi);
}

struct ContourHit {
    Point2 point;
    std::size_t index = 0; ///< index of the contour edge start (edge index -> index+1)
};

/// Intersections of the infinite line through a,b with the closed polygon,
/// ordered by their projection onto a->b. Hits closer than 1e-9 px collapse.
inline std::vector<ContourHit> segment_contour_intersections(const OrderedContour& contour,
                                                             Point2 a, Point2 b) {
    constexpr double dedup_tol = 1e-9;
    std::vector<ContourHit> hits;
    const std::size_t n = contour.size();
    const Point2 dir = b - a;
    if (n < 2 || norm(dir) == 0.0) return hits;

    std::vector<std::pair<double, ContourHit>> keyed;
    const std::size_t edges = contour.closed ? n : n - 1;
    for (std::size_t k = 0; k < edges; ++k) {
        const Point2 p = contour[k];
        const Point2 q = contour[(k + 1) % n];
        const double dp = cross(dir, p - a);
        const double dq = cross(dir, q - a);
        if (dp == 0.0 && dq == 0.0) {
            keyed.push_back({dot(p - a, dir), {p, k}});
            keyed.push_back({dot(q - a, dir), {q, k}});
            continue;
        }
        if ((dp > 0.0 && dq > 0.0) || (dp < 0.0 && dq < 0.0)) continue;
        const double t = dp / (dp - dq);
        const Point2 hit = p + t * (q - p);
        keyed.push_back({dot(hit - a, dir), {hit, k}});
    }
    std::stable_sort(keyed.begin(), keyed.end(),
                     [](const auto& l, const auto& r) { return l.first < r.first; });
    for (const auto& [key, hit] : keyed) {
        if (!hits.empty() && distance(hits.back().point, hit.point) <= dedup_tol) continue;
        hits.push_back(hit);
    }
    return hits;
}

/// Signed shoelace sum (positive for counter-clockwise in y-up coordinates).
inline double signed_area(std::span<const Point2> pts) {
    double s = 0.0;
    const std::size_t n = pts.size();
    for (std::size_t i = 0; i < n; ++i) {
        const Point2& p = pts[i];
        const Point2& q = pts[(i + 1) % n];
        s += p.x * q.y - q.x * p.y;
    }
    return 0.5 * s;
}

inline double polygon_area(const OrderedContour& contour) {
    if (contour.size() < 3) throw InvalidGeometry("polygon_area: fewer than 3 points");
    return std::abs(signed_area(contour.points));
}

inline double hausdorff_distance(std::span<const Point2> a, std::span<const Point2> b) {
    if (a.empty() || b.empty()) throw InvalidInput("hausdorff_distance: empty point set");
    auto directed = [](std::span<const Point2> from, std::span<const Point2> to) {
        double worst = 0.0;
        for (const auto& p : from) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& q : to) {
                const double dx = p.x - q.x;
                const double dy = p.y - q.y;
                const double d2 = dx * dx + dy * dy;
                if (d2 < best) {
                    best = d2;
                    if (best <= worst) break; // cannot raise the running max
                }
            }
            worst = std::max(worst, best);
        }
        return std::sqrt(worst);
    };
    return std::max(directed(a, b), directed(b, a));
}

/// Least-squares proper rigid transform mapping src onto dst.
inline RigidTransform2D rigid_fit(std::span<const Point2> src, std::span<const Point2> dst) {
    if (src.size() != dst.size()) throw InvalidInput("rigid_fit: length mismatch");
    if (src.size() < 2) throw InvalidInput("rigid_fit: need at least two correspondences");
    const double n = static_cast<double>(src.size());
    Point2 cs{}, cd{};
    for (std::size_t k = 0; k < src.size(); ++k) {
        cs = cs + src[k];
        cd = cd + dst[k];
    }
    cs = (1.0 / n) * cs;
    cd = (1.0 / n) * cd;

    double sum_dot = 0.0;
    double sum_cross = 0.0;
    double spread = 0.0;
    for (std::size_t k = 0; k < src.size(); ++k) {
        const Point2 s = src[k] - cs;
        const Point2 d = dst[k] - cd;
        sum_dot += dot(s, d);
        sum_cross += cross(s, d);
        spread += dot(s, s);
    }
    if (spread <= 1e-18 * n) {
        throw DegenerateConfiguration("rigid_fit: all source points coincide");
    }
    const double theta = std::atan2(sum_cross, sum_dot);
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    return RigidTransform2D::make(theta, cd.x - (c * cs.x - s * cs.y), cd.y - (s * cs.x + c * cs.y));
}

inline Point2 centroid(std::span<const Point2> pts) {
    if (pts.empty()) throw InvalidInput("centroid: empty point set");
    Point2 c{};
    for (const auto& p : pts) c = c + p;
    return (1.0 / static_cast<double>(pts.size())) * c;
}

} // namespace fragmenta
