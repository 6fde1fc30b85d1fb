#pragma once
// Retrieval and registration metrics, stratified by pair difficulty.

#include "fragmenta/errors.hpp"
#include "fragmenta/geometry.hpp"
#include "fragmenta/tearing.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <utility>
#include <vector>

namespace fragmenta::metrics {

/// query id -> other ids, best first.
using RankTable = std::map<int, std::vector<int>>;
using IdPair = std::pair<int, int>;

namespace detail {
inline void require_k(std::size_t k) {
    if (k < 2) throw InvalidInput("retrieval metrics need k >= 2");
}

inline bool in_top_k(const RankTable& ranks, int q, int t, std::size_t k) {
    auto it = ranks.find(q);
    if (it == ranks.end()) return false;
    const auto& list = it->second;
    const auto end = list.begin() + static_cast<std::ptrdiff_t>(std::min(k, list.size()));
    return std::find(list.begin(), end, t) != end;
}
} // namespace detail

/// Both query directions of every pair, averaged.
inline double recall_at_k(const RankTable& ranks, std::span<const IdPair> gt, std::size_t k) {
    detail::require_k(k);
    if (gt.empty()) throw UndefinedMetric("recall@k: no ground-truth pairs");
    std::size_t hits = 0;
    for (const auto& [a, b] : gt) {
        hits += detail::in_top_k(ranks, a, b, k);
        hits += detail::in_top_k(ranks, b, a, k);
    }
    return static_cast<double>(hits) / (2.0 * static_cast<double>(gt.size()));
}

/// Binary-relevance NDCG averaged over queries with at least one relevant id.
inline double ndcg_at_k(const RankTable& ranks, std::span<const IdPair> gt, std::size_t k) {
    detail::require_k(k);
    std::map<int, std::set<int>> relevant;
    for (const auto& [a, b] : gt) {
        relevant[a].insert(b);
        relevant[b].insert(a);
    }
    if (relevant.empty()) throw UndefinedMetric("ndcg@k: no ground-truth pairs");
    double total = 0.0;
    for (const auto& [q, rel] : relevant) {
        double dcg = 0.0;
        auto it = ranks.find(q);
        if (it != ranks.end()) {
            const auto& list = it->second;
            for (std::size_t p = 0; p < std::min(k, list.size()); ++p) {
                if (rel.count(list[p])) dcg += 1.0 / std::log2(static_cast<double>(p) + 2.0);
            }
        }
        double idcg = 0.0;
        for (std::size_t p = 0; p < rel.size(); ++p) idcg += 1.0 / std::log2(static_cast<double>(p) + 2.0);
        total += dcg / idcg;
    }
    return total / static_cast<double>(relevant.size());
}

/// |theta_est - theta_gt| wrapped into [0, pi].
inline double rotation_error(const RigidTransform2D& est, const RigidTransform2D& gt) {
    return std::abs(normalize_angle(est.theta - gt.theta));
}

/// Distance between where the two transforms put `anchor`, over the summed
/// areas. With the matched-segment centroid as anchor this compares the
/// translations about that point rather than about the frame origin.
inline double normalized_translation_error(const RigidTransform2D& est, const RigidTransform2D& gt, double area_m,
                                           double area_n, Point2 anchor = {0.0, 0.0}) {
    if (!(area_m > 0.0) || !(area_n > 0.0)) throw InvalidInput("nte: areas must be > 0");
    return distance(est.apply(anchor), gt.apply(anchor)) / (area_m + area_n);
}

inline double hausdorff_error(const RigidTransform2D& est, const RigidTransform2D& gt,
                              std::span<const Point2> contour_n) {
    if (contour_n.empty()) throw InvalidInput("hausdorff_error: empty contour");
    const auto a = est.apply(contour_n);
    const auto b = gt.apply(contour_n);
    return hausdorff_distance(a, b);
}

/// RMS distance between est- and gt-placed points.
inline double placement_rms(const RigidTransform2D& est, const RigidTransform2D& gt, std::span<const Point2> pts) {
    if (pts.empty()) throw InvalidInput("placement_rms: no points");
    double acc = 0.0;
    for (const auto& p : pts) {
        const double d = distance(est.apply(p), gt.apply(p));
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(pts.size()));
}

/// Outcome of registering one GT pair.
struct PairOutcome {
    int id_m = -1;
    int id_n = -1;
    tearing::Difficulty difficulty = tearing::Difficulty::Medium;
    bool has_model = false;
    double rms = 0.0; ///< placement RMS of GT matched points (valid when has_model)
    double hd = 0.0;
    double re = 0.0;
    double nte = 0.0;
};

inline bool registered(const PairOutcome& o, double tau_rr) { return o.has_model && o.rms < tau_rr; }

inline double registration_recall(std::span<const PairOutcome> outcomes, double tau_rr) {
    if (outcomes.empty()) throw UndefinedMetric("registration recall: no pairs evaluated");
    std::size_t ok = 0;
    for (const auto& o : outcomes) ok += registered(o, tau_rr);
    return static_cast<double>(ok) / static_cast<double>(outcomes.size());
}

/// Geometric placement of one pair's GT matched points and contour under an
/// estimated transform.
inline PairOutcome evaluate_pair(const tearing::PairGroundTruth& gt, const tearing::FragmentRecord& f_m,
                                 const tearing::FragmentRecord& f_n, const std::optional<RigidTransform2D>& est) {
    PairOutcome o;
    o.id_m = gt.id_m;
    o.id_n = gt.id_n;
    o.difficulty = gt.difficulty;
    if (!est) return o;
    o.has_model = true;
    std::vector<Point2> pts;
    for (const auto& m : gt.matches) pts.push_back(f_n.contour[m.n]);
    o.rms = placement_rms(*est, gt.gt_transform, pts);
    o.hd = hausdorff_error(*est, gt.gt_transform, f_n.contour.points);
    o.re = rotation_error(*est, gt.gt_transform);
    o.nte = normalized_translation_error(*est, gt.gt_transform, static_cast<double>(f_m.area()),
                                         static_cast<double>(f_n.area()), centroid(pts));
    return o;
}

inline constexpr std::array<std::size_t, 3> kReportKs{5, 10, 20};

struct StratumReport {
    std::size_t pair_count = 0;
    std::size_t model_count = 0;
    std::size_t registered_count = 0;
    std::optional<std::array<double, 3>> recall; ///< at kReportKs
    std::optional<std::array<double, 3>> ndcg;
    double rr = 0.0;
    double hd = 0.0; ///< means over pairs with a model
    double re = 0.0;
    double nte = 0.0;
};

struct EvalReport {
    double tau_rr = 10.0;
    std::map<std::string, StratumReport> strata; ///< "high", "medium", "low", "all"
};

/// Per-stratum and pooled metrics. Retrieval metrics for a stratum use only
/// that stratum's GT pairs as relevant items; the rank tables are shared.
inline EvalReport stratified_report(std::span<const PairOutcome> outcomes, double tau_rr,
                                    const RankTable* ranks = nullptr,
                                    std::span<const tearing::PairGroundTruth> retrieval_gt = {}) {
    EvalReport rep;
    rep.tau_rr = tau_rr;
    auto fill = [&](const std::string& name, auto keep) {
        StratumReport s;
        std::size_t with_model = 0;
        for (const auto& o : outcomes) {
            if (!keep(o.difficulty)) continue;
            ++s.pair_count;
            if (o.has_model) {
                ++with_model;
                s.hd += o.hd;
                s.re += o.re;
                s.nte += o.nte;
            }
            s.registered_count += registered(o, tau_rr);
        }
        s.model_count = with_model;
        if (with_model) {
            s.hd /= static_cast<double>(with_model);
            s.re /= static_cast<double>(with_model);
            s.nte /= static_cast<double>(with_model);
        }
        s.rr = s.pair_count ? static_cast<double>(s.registered_count) / static_cast<double>(s.pair_count) : 0.0;
        if (ranks) {
            std::vector<IdPair> gt;
            for (const auto& p : retrieval_gt) {
                if (keep(p.difficulty)) gt.emplace_back(p.id_m, p.id_n);
            }
            if (!gt.empty()) {
                std::array<double, 3> r{}, n{};
                for (std::size_t i = 0; i < kReportKs.size(); ++i) {
                    r[i] = recall_at_k(*ranks, gt, kReportKs[i]);
                    n[i] = ndcg_at_k(*ranks, gt, kReportKs[i]);
                }
                s.recall = r;
                s.ndcg = n;
            }
        }
        rep.strata[name] = s;
    };
    using tearing::Difficulty;
    for (auto d : {Difficulty::High, Difficulty::Medium, Difficulty::Low}) {
        fill(tearing::to_string(d), [d](Difficulty x) { return x == d; });
    }
    fill("all", [](Difficulty) { return true; });
    return rep;
}

} // namespace fragmenta::metrics
