#pragma once
// Static SVG overlays of a registered pair.

#include "fragmenta/geometry.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace fragmenta::svg {

namespace detail {
inline std::string polyline(std::span<const Point2> pts, const char* stroke, const char* extra = "") {
    std::ostringstream os;
    os << "<polygon fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"1\" " << extra << " points=\"";
    char buf[48];
    for (const auto& p : pts) {
        std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", p.x, p.y);
        os << buf;
    }
    os << "\"/>\n";
    return os.str();
}
} // namespace detail

struct PairOverlay {
    std::string title;
    std::vector<Point2> contour_m;        ///< fragment m in its own frame
    std::vector<Point2> contour_n;        ///< fragment n in its own frame
    RigidTransform2D gt;
    std::optional<RigidTransform2D> est;
    std::vector<std::pair<std::size_t, std::size_t>> lines; ///< (index on m, index on n)
    std::size_t max_lines = 200;
};

/// m in grey, n under gt in green, n under est in red, correspondences in blue.
inline std::string render_pair(const PairOverlay& o) {
    const std::vector<Point2> n_gt = o.gt.apply(o.contour_n);
    const std::vector<Point2> n_est = o.est ? o.est->apply(o.contour_n) : std::vector<Point2>{};
    double x0 = std::numeric_limits<double>::max(), y0 = x0;
    double x1 = std::numeric_limits<double>::lowest(), y1 = x1;
    for (const std::vector<Point2>* set : {&o.contour_m, &n_gt, &n_est}) {
        for (const auto& p : *set) {
            x0 = std::min(x0, p.x);
            y0 = std::min(y0, p.y);
            x1 = std::max(x1, p.x);
            y1 = std::max(y1, p.y);
        }
    }
    if (x0 > x1) x0 = y0 = 0, x1 = y1 = 1;
    const double pad = 10.0;
    std::ostringstream os;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%.2f %.2f %.2f %.2f", x0 - pad, y0 - pad, x1 - x0 + 2 * pad, y1 - y0 + 2 * pad);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"" << buf << "\">\n";
    os << "<title>" << o.title << "</title>\n";
    os << detail::polyline(o.contour_m, "#555555");
    os << detail::polyline(n_gt, "#2a9d3a", "stroke-dasharray=\"4 2\"");
    if (o.est) {
        os << detail::polyline(n_est, "#d62728");
        const std::size_t count = std::min(o.lines.size(), o.max_lines);
        for (std::size_t k = 0; k < count; ++k) {
            const auto [i, j] = o.lines[k];
            if (i >= o.contour_m.size() || j >= n_est.size()) continue;
            std::snprintf(buf, sizeof(buf),
                          "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"#1f77b4\" stroke-width=\"0.5\"/>\n",
                          o.contour_m[i].x, o.contour_m[i].y, n_est[j].x, n_est[j].y);
            os << buf;
        }
    }
    os << "</svg>\n";
    return os.str();
}

} // namespace fragmenta::svg
