#pragma once
// Similarity head, dual softmax, focal matching loss and InfoNCE, each as a
// plain kernel and as a differentiable tape op.

#include "fragmenta/nn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

namespace fragmenta::nn {

inline constexpr double kProbClamp = 1e-12;

// ---------------------------------------------------------------------------
// Similarity logits: f_m f_n^T / sqrt(D)

inline Matrix similarity_logits(const Matrix& f_m, const Matrix& f_n) {
    if (f_m.cols() != f_n.cols()) throw InvalidInput("similarity_logits: feature widths differ");
    Matrix s;
    s.noalias() = f_m * f_n.transpose();
    s *= 1.0 / std::sqrt(static_cast<double>(f_m.cols()));
    return s;
}

inline Var similarity_logits(Var f_m, Var f_n) {
    return scale(matmul_nt(f_m, f_n), 1.0 / std::sqrt(static_cast<double>(f_m.cols())));
}

// ---------------------------------------------------------------------------
// Dual softmax

/// Softmax over i within each column (first factor) and over j within each
/// row (second factor).
inline std::pair<Matrix, Matrix> dual_softmax_factors(const Matrix& s) {
    Matrix col_sm = s;
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
        const double mx = s.col(j).maxCoeff();
        auto c = col_sm.col(j);
        c = (c.array() - mx).exp().matrix();
        c /= c.sum();
    }
    Matrix row_sm = s;
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        const double mx = s.row(i).maxCoeff();
        auto r = row_sm.row(i);
        r = (r.array() - mx).exp().matrix();
        r /= r.sum();
    }
    return {std::move(col_sm), std::move(row_sm)};
}

inline Matrix dual_softmax(const Matrix& s) {
    if (s.size() == 0) return s;
    auto [a, b] = dual_softmax_factors(s);
    return a.cwiseProduct(b);
}

inline Var dual_softmax(Var s) {
    if (s.value().size() == 0) throw InvalidInput("dual_softmax: empty matrix");
    auto factors = std::make_shared<std::pair<Matrix, Matrix>>(dual_softmax_factors(s.value()));
    Matrix out = factors->first.cwiseProduct(factors->second);
    Node* ns = s.node();
    return s.tape()->op(std::move(out), {s}, [ns, factors](Node& self) {
        const Matrix& a = factors->first;  // softmax over i
        const Matrix& b = factors->second; // softmax over j
        const Matrix ga = self.grad.cwiseProduct(b);
        const Matrix gb = self.grad.cwiseProduct(a);
        Matrix& g = ns->g();
        const Eigen::RowVectorXd col_dot = ga.cwiseProduct(a).colwise().sum();
        g.array() += a.array() * (ga.rowwise() - col_dot).array();
        const Eigen::VectorXd row_dot = gb.cwiseProduct(b).rowwise().sum();
        g.array() += b.array() * (gb.colwise() - row_dot).array();
    });
}

// ---------------------------------------------------------------------------
// Focal matching loss

inline double int_or_real_pow(double base, double gamma) {
    if (gamma == std::floor(gamma) && gamma >= 0 && gamma <= 64) {
        double r = 1.0;
        for (int i = 0; i < static_cast<int>(gamma); ++i) r *= base;
        return r;
    }
    return std::pow(base, gamma);
}

inline double focal_matching_loss(const Matrix& s, const Matrix& s_gt, double beta1, double gamma) {
    require_same_shape(s, s_gt, "focal_matching_loss");
    const double beta2 = 1.0 - beta1;
    double loss = 0.0;
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        for (Eigen::Index j = 0; j < s.cols(); ++j) {
            const double p = std::clamp(s(i, j), kProbClamp, 1.0 - kProbClamp);
            const double y = s_gt(i, j);
            if (y != 0.0) loss -= y * beta1 * int_or_real_pow(1.0 - p, gamma) * std::log(p);
            if (y != 1.0) loss -= (1.0 - y) * beta2 * int_or_real_pow(p, gamma) * std::log1p(-p);
        }
    }
    return loss;
}

inline Var focal_matching_loss(Var s, const Matrix& s_gt, double beta1, double gamma) {
    Matrix out(1, 1);
    out(0, 0) = focal_matching_loss(s.value(), s_gt, beta1, gamma);
    Node* ns = s.node();
    auto gt = std::make_shared<Matrix>(s_gt);
    return s.tape()->op(std::move(out), {s}, [ns, gt, beta1, gamma](Node& self) {
        const double beta2 = 1.0 - beta1;
        const double up = self.grad(0, 0);
        const Matrix& sv = ns->val();
        Matrix& g = ns->g();
        for (Eigen::Index i = 0; i < sv.rows(); ++i) {
            for (Eigen::Index j = 0; j < sv.cols(); ++j) {
                const double raw = sv(i, j);
                if (raw < kProbClamp || raw > 1.0 - kProbClamp) continue; // clamped: flat
                const double p = raw;
                const double y = (*gt)(i, j);
                double d = 0.0;
                if (y != 0.0) {
                    const double pw = int_or_real_pow(1.0 - p, gamma - 1.0);
                    d -= y * beta1 * (-gamma * pw * std::log(p) + pw * (1.0 - p) / p);
                }
                if (y != 1.0) {
                    const double pw = gamma >= 1.0 ? int_or_real_pow(p, gamma - 1.0) : std::pow(p, gamma - 1.0);
                    d -= (1.0 - y) * beta2 * (gamma * pw * std::log1p(-p) - pw * p / (1.0 - p));
                }
                g(i, j) += up * d;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// InfoNCE

/// positives[a] lists the in-batch partners of item a.
using PositiveSets = std::vector<std::vector<std::size_t>>;

inline void validate_batch(std::size_t n, const PositiveSets& positives) {
    if (n < 2) throw InvalidBatch("info_nce: need at least two embeddings");
    if (positives.size() != n) throw InvalidBatch("info_nce: positive table size differs from batch");
    std::size_t anchors = 0;
    for (std::size_t a = 0; a < n; ++a) {
        std::size_t real = 0;
        for (auto p : positives[a]) {
            if (p >= n) throw InvalidBatch("info_nce: positive index out of range");
            real += p != a;
        }
        if (real == 0) continue;
        ++anchors;
        if (real >= n - 1) throw InvalidBatch("info_nce: anchor has no negatives in batch");
    }
    if (anchors == 0) throw InvalidBatch("info_nce: no anchor has a positive");
}

/// Loss and d(loss)/d(logits) for a cosine-similarity logit matrix already
/// divided by the temperature. Anchors are items with at least one positive.
inline double info_nce_from_logits(const Matrix& logits, const PositiveSets& positives, Matrix* grad) {
    const std::size_t n = static_cast<std::size_t>(logits.rows());
    validate_batch(n, positives);
    if (grad) *grad = Matrix::Zero(logits.rows(), logits.cols());
    double total = 0.0;
    std::size_t anchors = 0;
    std::vector<std::uint8_t> is_pos(n);
    for (std::size_t a = 0; a < n; ++a) {
        std::fill(is_pos.begin(), is_pos.end(), 0);
        bool any = false;
        for (auto p : positives[a]) {
            if (p != a) {
                is_pos[p] = 1;
                any = true;
            }
        }
        if (!any) continue;
        ++anchors;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < n; ++k) {
            if (k != a) mx = std::max(mx, logits(a, k));
        }
        double denom = 0.0, numer = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            if (k == a) continue;
            const double e = std::exp(logits(a, k) - mx);
            denom += e;
            if (is_pos[k]) numer += e;
        }
        total += std::log(denom) - std::log(numer);
        if (grad) {
            for (std::size_t k = 0; k < n; ++k) {
                if (k == a) continue;
                const double e = std::exp(logits(a, k) - mx);
                (*grad)(a, k) += e / denom - (is_pos[k] ? e / numer : 0.0);
            }
        }
    }
    const double inv = 1.0 / static_cast<double>(anchors);
    if (grad) *grad *= inv;
    return total * inv;
}

/// Cosine similarities over temperature. The logit matrix is symmetric and
/// the positive relation is symmetric, so the row and column directions give
/// the same average; one pass covers both.
inline double info_nce_loss(const Matrix& embeddings, const PositiveSets& positives, double temperature) {
    if (!(temperature > 0)) throw InvalidInput("info_nce: temperature must be > 0");
    Matrix y = embeddings;
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
        const double nrm = y.row(i).norm();
        if (!(nrm > 0)) throw InvalidInput("info_nce: zero embedding");
        y.row(i) /= nrm;
    }
    Matrix logits;
    logits.noalias() = y * y.transpose();
    logits /= temperature;
    return info_nce_from_logits(logits, positives, nullptr);
}

inline Var info_nce_loss(Var embeddings, const PositiveSets& positives, double temperature) {
    if (!(temperature > 0)) throw InvalidInput("info_nce: temperature must be > 0");
    validate_batch(static_cast<std::size_t>(embeddings.rows()), positives);
    Var y = normalize_rows(embeddings);
    Var logits = scale(matmul_nt(y, y), 1.0 / temperature);
    auto grad = std::make_shared<Matrix>();
    Matrix out(1, 1);
    out(0, 0) = info_nce_from_logits(logits.value(), positives, grad.get());
    Node* nl = logits.node();
    return logits.tape()->op(std::move(out), {logits}, [nl, grad](Node& self) {
        nl->g() += self.grad(0, 0) * (*grad);
    });
}

} // namespace fragmenta::nn
