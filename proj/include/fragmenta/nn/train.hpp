#pragma once
// Adam with cosine annealing, and the two training stages.

#include "fragmenta/nn/model.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <utility>
#include <vector>

namespace fragmenta::nn {

/// lr at `step` of `total`: cosine from lr down to lr * floor_ratio.
inline double cosine_lr(double lr, double floor_ratio, int step, int total) {
    if (total <= 1) return lr;
    const double lo = lr * floor_ratio;
    const double t = static_cast<double>(std::clamp(step, 0, total - 1)) / static_cast<double>(total - 1);
    return lo + 0.5 * (lr - lo) * (1.0 + std::cos(3.14159265358979323846 * t));
}

class Adam {
public:
    explicit Adam(ParameterSet& params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : params_(params), b1_(beta1), b2_(beta2), eps_(eps) {
        for (auto& p : params_.all()) {
            m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
            v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
        }
    }

    void step(double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(b1_, t_);
        const double c2 = 1.0 - std::pow(b2_, t_);
        auto& ps = params_.all();
        for (std::size_t k = 0; k < ps.size(); ++k) {
            Parameter& p = *ps[k];
            if (p.frozen || p.grad.size() == 0) continue;
            m_[k] = b1_ * m_[k] + (1.0 - b1_) * p.grad;
            v_[k] = b2_ * v_[k] + (1.0 - b2_) * p.grad.cwiseAbs2();
            if (lr == 0.0) continue;
            p.value.array() -= lr * (m_[k].array() / c1) / ((v_[k].array() / c2).sqrt() + eps_);
        }
    }

    int steps_taken() const { return t_; }

private:
    ParameterSet& params_;
    double b1_, b2_, eps_;
    int t_ = 0;
    std::vector<Matrix> m_, v_;
};

/// Running minimum of an exponential moving average.
inline std::vector<double> monotone_smooth(const std::vector<double>& trace, double alpha = 0.1) {
    std::vector<double> out;
    out.reserve(trace.size());
    double ema = 0.0;
    for (std::size_t i = 0; i < trace.size(); ++i) {
        ema = i == 0 ? trace[0] : (1.0 - alpha) * ema + alpha * trace[i];
        out.push_back(i == 0 ? ema : std::min(out.back(), ema));
    }
    return out;
}

/// Aborts once the loss stays above factor x the first loss for `patience` steps.
class DivergenceGuard {
public:
    DivergenceGuard(double factor, int patience) : factor_(factor), patience_(patience) {}

    void observe(double loss, const std::vector<double>& trace) {
        if (!std::isfinite(loss)) throw TrainingDiverged("training loss became non-finite", trace);
        if (!initial_) initial_ = loss;
        if (loss > factor_ * *initial_) {
            if (++run_ >= patience_) {
                throw TrainingDiverged("loss above " + std::to_string(factor_) + "x initial for " +
                                           std::to_string(patience_) + " steps",
                                       trace);
            }
        } else {
            run_ = 0;
        }
    }

private:
    double factor_;
    int patience_;
    std::optional<double> initial_;
    int run_ = 0;
};

struct TrainResult {
    std::vector<double> loss_trace;
    std::vector<double> smoothed_trace;
    int steps = 0;
};

using ProgressFn = std::function<void(int step, double loss)>;

// ---------------------------------------------------------------------------
// Stage one: matching backbone

/// One supervised pair; gt holds (row of m, row of n) indices into the inputs.
struct MatchingSample {
    std::size_t m = 0;
    std::size_t n = 0;
    std::vector<std::pair<std::size_t, std::size_t>> gt;
};

struct MatchingDataset {
    std::vector<FragmentInput> inputs;
    std::vector<MatchingSample> pairs;
};

inline Matrix dense_gt(const MatchingSample& s, std::size_t rows_m, std::size_t rows_n) {
    Matrix gt = Matrix::Zero(static_cast<Eigen::Index>(rows_m), static_cast<Eigen::Index>(rows_n));
    for (const auto& [i, j] : s.gt) {
        if (i >= rows_m || j >= rows_n) throw InvalidInput("dense_gt: index out of range");
        gt(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = 1.0;
    }
    return gt;
}

/// Draws `batch` indices out of n: full shuffled passes, the last one cut short.
inline std::vector<std::size_t> draw_batch(std::size_t n, std::size_t batch, Rng& rng) {
    std::vector<std::size_t> out;
    while (out.size() < batch) {
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::shuffle(perm.begin(), perm.end(), rng);
        for (auto i : perm) {
            if (out.size() == batch) break;
            out.push_back(i);
        }
        if (n >= batch) break;
    }
    return out;
}

/// Mean focal loss over a batch of pairs; gradients accumulate into the model.
inline double matching_batch_step(MatchingModel& model, const MatchingDataset& data,
                                  const std::vector<std::size_t>& batch, bool with_grad) {
    double total = 0.0;
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (auto b : batch) {
        const auto& s = data.pairs[b];
        const auto& m = data.inputs[s.m];
        const auto& n = data.inputs[s.n];
        Tape tape(with_grad);
        Var loss = scale(model.pair_loss(tape, m, n, dense_gt(s, m.rows(), n.rows())), inv);
        if (with_grad) tape.backward(loss);
        total += loss.scalar();
    }
    return total;
}

inline TrainResult train_matching(MatchingModel& model, const MatchingDataset& data, Rng& rng,
                                  const ProgressFn& progress = {}) {
    const auto& cfg = model.config();
    if (data.pairs.empty()) throw InvalidInput("train_matching: dataset has no positive pair");
    for (const auto& s : data.pairs) {
        if (s.m >= data.inputs.size() || s.n >= data.inputs.size()) {
            throw InvalidInput("train_matching: pair references a missing fragment");
        }
    }
    auto& params = model.params();
    params.set_frozen(false);
    Adam opt(params);
    DivergenceGuard guard(cfg.divergence_factor, cfg.divergence_patience);
    TrainResult res;
    const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_match), data.pairs.size());
    for (int step = 0; step < cfg.match_steps; ++step) {
        params.zero_grad();
        const auto idx = draw_batch(data.pairs.size(), batch, rng);
        const double loss = matching_batch_step(model, data, idx, true);
        res.loss_trace.push_back(loss);
        guard.observe(loss, res.loss_trace);
        opt.step(cosine_lr(cfg.lr, cfg.lr_floor_ratio, step, cfg.match_steps));
        if (progress) progress(step, loss);
    }
    res.steps = cfg.match_steps;
    res.smoothed_trace = monotone_smooth(res.loss_trace);
    return res;
}

// ---------------------------------------------------------------------------
// Stage two: searching head over a frozen backbone

struct SearchingDataset {
    std::vector<SearchInput> inputs;
    /// Undirected positive pairs (indices into inputs).
    std::vector<std::pair<std::size_t, std::size_t>> positives;
};

/// Batch of fragment indices plus their in-batch positive sets. Pairs are
/// drawn first so every batch carries anchors; the rest is random filler.
inline std::pair<std::vector<std::size_t>, PositiveSets> draw_search_batch(const SearchingDataset& data,
                                                                           std::size_t batch, Rng& rng) {
    const std::size_t n = data.inputs.size();
    batch = std::min(batch, n);
    std::vector<std::uint8_t> taken(n, 0);
    std::vector<std::size_t> items;
    std::vector<std::size_t> order(data.positives.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    // Half the batch from positive pairs, leaving room for negatives.
    const std::size_t pair_budget = std::max<std::size_t>(2, batch / 2);
    for (auto k : order) {
        const auto [a, b] = data.positives[k];
        const std::size_t need = (taken[a] ? 0 : 1) + (taken[b] ? 0 : 1);
        if (items.size() + need > pair_budget) continue;
        for (auto v : {a, b}) {
            if (!taken[v]) {
                taken[v] = 1;
                items.push_back(v);
            }
        }
    }
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < n; ++i) {
        if (!taken[i]) rest.push_back(i);
    }
    std::shuffle(rest.begin(), rest.end(), rng);
    // Fillers not adjacent to any pair member go first so anchors get negatives.
    std::vector<std::uint8_t> near(n, 0);
    for (const auto& [a, b] : data.positives) {
        if (taken[a]) near[b] = 1;
        if (taken[b]) near[a] = 1;
    }
    std::stable_partition(rest.begin(), rest.end(), [&](std::size_t i) { return !near[i]; });
    for (auto i : rest) {
        if (items.size() >= batch) break;
        items.push_back(i);
    }
    std::vector<std::size_t> slot(n, SIZE_MAX);
    for (std::size_t s = 0; s < items.size(); ++s) slot[items[s]] = s;
    PositiveSets pos(items.size());
    for (const auto& [a, b] : data.positives) {
        if (slot[a] != SIZE_MAX && slot[b] != SIZE_MAX && a != b) {
            pos[slot[a]].push_back(slot[b]);
            pos[slot[b]].push_back(slot[a]);
        }
    }
    // In a small dense batch an item can be adjacent to all others; it then
    // only serves as a positive for its neighbours.
    for (auto& p : pos) {
        if (p.size() + 1 >= items.size()) p.clear();
    }
    return {std::move(items), std::move(pos)};
}

inline Var search_batch_loss(Tape& tape, SearchingModel& model, const SearchingDataset& data,
                             const std::vector<std::size_t>& items, const PositiveSets& pos) {
    std::vector<Var> rows;
    rows.reserve(items.size());
    for (auto i : items) rows.push_back(model.embed(tape, data.inputs[i]));
    Var stacked = stack_rows(rows);
    return info_nce_loss(stacked, pos, model.config().temperature);
}

inline TrainResult train_searching(SearchingModel& model, MatchingModel& backbone, const SearchingDataset& data,
                                   Rng& rng, const ProgressFn& progress = {}) {
    const auto& cfg = model.config();
    if (data.positives.empty()) throw InvalidInput("train_searching: dataset has no positive pair");
    if (data.inputs.size() < 3) throw InvalidBatch("train_searching: need at least three fragments");
    const std::uint64_t frozen_sum = backbone.params().checksum();
    backbone.params().set_frozen(true);
    auto& params = model.params();
    params.set_frozen(false);
    Adam opt(params);
    DivergenceGuard guard(cfg.divergence_factor, cfg.divergence_patience);
    TrainResult res;
    for (int step = 0; step < cfg.search_steps; ++step) {
        params.zero_grad();
        auto [items, pos] = draw_search_batch(data, static_cast<std::size_t>(cfg.batch_search), rng);
        Tape tape(true);
        Var loss = search_batch_loss(tape, model, data, items, pos);
        tape.backward(loss);
        res.loss_trace.push_back(loss.scalar());
        guard.observe(loss.scalar(), res.loss_trace);
        opt.step(cosine_lr(cfg.lr, cfg.lr_floor_ratio, step, cfg.search_steps));
        if (progress) progress(step, loss.scalar());
    }
    if (backbone.params().checksum() != frozen_sum) {
        throw std::logic_error("train_searching: frozen backbone parameters changed");
    }
    res.steps = cfg.search_steps;
    res.smoothed_trace = monotone_smooth(res.loss_trace);
    return res;
}

} // namespace fragmenta::nn
