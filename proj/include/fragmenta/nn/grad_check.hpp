#pragma once
// Central finite differences against the tape gradients.

#include "fragmenta/nn/model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace fragmenta::nn {

inline double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

/// ||a - n|| / max(||a||, ||n||) over one tensor's entries. Entrywise ratios
/// are unreliable on entries near the central-difference round-off floor.
inline double relative_error(const Matrix& analytic, const Matrix& numeric) {
    const double scale = std::max({analytic.norm(), numeric.norm(), 1e-12});
    return (analytic - numeric).norm() / scale;
}

/// Builds a scalar from leaf Vars on the given tape.
using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Max over inputs of the tensor relative error between tape gradients and
/// central differences. `worst_entry`, if given, receives the largest
/// entrywise relative error.
inline double grad_check(const ScalarFn& f, const std::vector<Matrix>& inputs, double h = 1e-5,
                         double* worst_entry = nullptr) {
    Tape tape(true);
    std::vector<Var> leaves;
    for (const auto& x : inputs) leaves.push_back(tape.input(x));
    Var out = f(tape, leaves);
    tape.backward(out);

    auto eval = [&](const std::vector<Matrix>& xs) {
        Tape t(false);
        std::vector<Var> ls;
        for (const auto& x : xs) ls.push_back(t.constant(x));
        return f(t, ls).scalar();
    };

    double worst = 0.0, entry = 0.0;
    std::vector<Matrix> probe = inputs;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const Matrix analytic = leaves[k].grad();
        Matrix numeric(analytic.rows(), analytic.cols());
        for (Eigen::Index i = 0; i < probe[k].size(); ++i) {
            const double keep = probe[k].data()[i];
            probe[k].data()[i] = keep + h;
            const double up = eval(probe);
            probe[k].data()[i] = keep - h;
            const double down = eval(probe);
            probe[k].data()[i] = keep;
            numeric.data()[i] = (up - down) / (2.0 * h);
            entry = std::max(entry, relative_error(analytic.data()[i], numeric.data()[i]));
        }
        worst = std::max(worst, relative_error(analytic, numeric));
    }
    if (worst_entry) *worst_entry = entry;
    return worst;
}

/// Same check against parameter gradients. `max_entries_per_param` caps the
/// number of probed entries per tensor (evenly spaced); 0 probes all of them.
inline double grad_check_params(ParameterSet& params, const std::function<Var(Tape&)>& loss, double h = 1e-5,
                                std::size_t max_entries_per_param = 0, double* worst_entry = nullptr) {
    params.zero_grad();
    {
        Tape tape(true);
        tape.backward(loss(tape));
    }
    auto eval = [&]() {
        Tape t(false);
        return loss(t).scalar();
    };
    double worst = 0.0, entry = 0.0;
    for (auto& p : params.all()) {
        if (p->frozen) continue;
        const std::size_t n = static_cast<std::size_t>(p->value.size());
        const std::size_t probes = max_entries_per_param == 0 ? n : std::min(n, max_entries_per_param);
        Eigen::VectorXd analytic(static_cast<Eigen::Index>(probes)), numeric(static_cast<Eigen::Index>(probes));
        for (std::size_t s = 0; s < probes; ++s) {
            const std::size_t i = probes == n ? s : (s * n) / probes;
            double& x = p->value.data()[i];
            const double keep = x;
            x = keep + h;
            const double up = eval();
            x = keep - h;
            const double down = eval();
            x = keep;
            analytic[static_cast<Eigen::Index>(s)] = p->grad.data()[i];
            numeric[static_cast<Eigen::Index>(s)] = (up - down) / (2.0 * h);
            entry = std::max(entry, relative_error(analytic[static_cast<Eigen::Index>(s)], numeric[static_cast<Eigen::Index>(s)]));
        }
        const double scale = std::max({analytic.norm(), numeric.norm(), 1e-12});
        worst = std::max(worst, (analytic - numeric).norm() / scale);
    }
    if (worst_entry) *worst_entry = entry;
    return worst;
}

} // namespace fragmenta::nn
