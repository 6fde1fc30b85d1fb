#pragma once
// Minimal tape-based reverse-mode autodiff over dense row-major Eigen matrices.
//
// Every op appends a node holding its value and a closure that pushes the
// node's gradient into its parents. Nodes are created in topological order,
// so backward() is a single reverse sweep.

#include "fragmenta/errors.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace fragmenta::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;

/// A learned tensor that outlives any tape.
struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;
    bool frozen = false;

    void zero_grad() { grad = Matrix::Zero(value.rows(), value.cols()); }
};

struct Node {
    Matrix value;
    const Matrix* external = nullptr; // parameter value, not copied
    Matrix grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    std::function<void()> backward;

    const Matrix& val() const { return external ? *external : value; }
    Matrix& g() {
        if (grad.size() == 0) grad = Matrix::Zero(val().rows(), val().cols());
        return grad;
    }
};

class Tape;

class Var {
public:
    Var() = default;
    Var(Tape* tape, Node* node) : tape_(tape), node_(node) {}

    const Matrix& value() const { return node_->val(); }
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    bool requires_grad() const { return node_->requires_grad; }
    /// Gradient after Tape::backward (zeros when never reached).
    Matrix grad() const { return node_->grad.size() ? node_->grad : Matrix::Zero(rows(), cols()); }
    double scalar() const { return value()(0, 0); }

    Tape* tape() const { return tape_; }
    Node* node() const { return node_; }

private:
    Tape* tape_ = nullptr;
    Node* node_ = nullptr;
};

class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    bool grad_enabled() const { return grad_enabled_; }

    Var constant(Matrix v) { return push(std::move(v), false); }
    Var input(Matrix v) { return push(std::move(v), grad_enabled_); }

    /// Leaf bound to a parameter; gradients flow back into param.grad.
    Var param(Parameter& p) {
        auto node = std::make_unique<Node>();
        node->external = &p.value;
        node->requires_grad = grad_enabled_ && !p.frozen;
        node->param = &p;
        return adopt(std::move(node));
    }

    /// Result node; `bw` is kept only when some parent needs a gradient.
    template <typename Backward>
    Var op(Matrix value, std::initializer_list<Var> parents, Backward&& bw) {
        return op(std::move(value), std::vector<Var>(parents), std::forward<Backward>(bw));
    }

    template <typename Backward>
    Var op(Matrix value, const std::vector<Var>& parents, Backward&& bw) {
        bool rg = false;
        for (const auto& p : parents) rg = rg || p.requires_grad();
        auto node = std::make_unique<Node>();
        node->value = std::move(value);
        node->requires_grad = rg;
        Node* self = node.get();
        if (rg) node->backward = [self, fn = std::forward<Backward>(bw)]() { fn(*self); };
        return adopt(std::move(node));
    }

    /// Seeds d(loss)/d(loss) = 1 and sweeps; parameter leaves accumulate into Parameter::grad.
    void backward(const Var& loss) {
        if (loss.rows() != 1 || loss.cols() != 1) throw InvalidInput("backward: loss must be 1x1");
        if (!loss.requires_grad()) return;
        loss.node()->g()(0, 0) += 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            Node& n = **it;
            if (!n.requires_grad || n.grad.size() == 0) continue;
            if (n.backward) n.backward();
        }
        for (auto& n : nodes_) {
            if (n->param && n->requires_grad && n->grad.size()) {
                if (n->param->grad.size() == 0) n->param->zero_grad();
                n->param->grad += n->grad;
            }
        }
    }

    std::size_t size() const { return nodes_.size(); }

private:
    Var push(Matrix v, bool rg) {
        auto node = std::make_unique<Node>();
        node->value = std::move(v);
        node->requires_grad = rg;
        return adopt(std::move(node));
    }
    Var adopt(std::unique_ptr<Node> node) {
        nodes_.push_back(std::move(node));
        return {this, nodes_.back().get()};
    }

    bool grad_enabled_;
    std::vector<std::unique_ptr<Node>> nodes_;
};

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw InvalidInput(std::string(what) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                           std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                           std::to_string(b.cols()) + ")");
    }
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(Var a, Var b) {
    if (a.cols() != b.rows()) throw InvalidInput("matmul: inner dimensions differ");
    Matrix out;
    out.noalias() = a.value() * b.value();
    Node* na = a.node();
    Node* nb = b.node();
    return a.tape()->op(std::move(out), {a, b}, [na, nb](Node& self) {
        if (na->requires_grad) na->g().noalias() += self.grad * nb->val().transpose();
        if (nb->requires_grad) nb->g().noalias() += na->val().transpose() * self.grad;
    });
}

/// a * b^T
inline Var matmul_nt(Var a, Var b) {
    if (a.cols() != b.cols()) throw InvalidInput("matmul_nt: inner dimensions differ");
    Matrix out;
    out.noalias() = a.value() * b.value().transpose();
    Node* na = a.node();
    Node* nb = b.node();
    return a.tape()->op(std::move(out), {a, b}, [na, nb](Node& self) {
        if (na->requires_grad) na->g().noalias() += self.grad * nb->val();
        if (nb->requires_grad) nb->g().noalias() += self.grad.transpose() * na->val();
    });
}

/// a^T * b
inline Var matmul_tn(Var a, Var b) {
    if (a.rows() != b.rows()) throw InvalidInput("matmul_tn: row counts differ");
    Matrix out;
    out.noalias() = a.value().transpose() * b.value();
    Node* na = a.node();
    Node* nb = b.node();
    return a.tape()->op(std::move(out), {a, b}, [na, nb](Node& self) {
        if (na->requires_grad) na->g().noalias() += nb->val() * self.grad.transpose();
        if (nb->requires_grad) nb->g().noalias() += na->val() * self.grad;
    });
}

inline Var add(Var a, Var b) {
    require_same_shape(a.value(), b.value(), "add");
    Node* na = a.node();
    Node* nb = b.node();
    return a.tape()->op(a.value() + b.value(), {a, b}, [na, nb](Node& self) {
        if (na->requires_grad) na->g() += self.grad;
        if (nb->requires_grad) nb->g() += self.grad;
    });
}

inline Var sub(Var a, Var b) {
    require_same_shape(a.value(), b.value(), "sub");
    Node* na = a.node();
    Node* nb = b.node();
    return a.tape()->op(a.value() - b.value(), {a, b}, [na, nb](Node& self) {
        if (na->requires_grad) na->g() += self.grad;
        if (nb->requires_grad) nb->g() -= self.grad;
    });
}

inline Var hadamard(Var a, Var b) {
    require_same_shape(a.value(), b.value(), "hadamard");
    Node* na = a.node();
    Node* nb = b.node();
    return a.tape()->op(a.value().cwiseProduct(b.value()), {a, b}, [na, nb](Node& self) {
        if (na->requires_grad) na->g() += self.grad.cwiseProduct(nb->val());
        if (nb->requires_grad) nb->g() += self.grad.cwiseProduct(na->val());
    });
}

inline Var scale(Var a, double s) {
    Node* na = a.node();
    return a.tape()->op(a.value() * s, {a}, [na, s](Node& self) { na->g() += s * self.grad; });
}

/// Adds a 1 x C bias row to every row of a.
inline Var add_row_bias(Var a, Var bias) {
    if (bias.rows() != 1 || bias.cols() != a.cols()) throw InvalidInput("add_row_bias: bias shape");
    Matrix out = a.value();
    out.rowwise() += bias.value().row(0);
    Node* na = a.node();
    Node* nb = bias.node();
    return a.tape()->op(std::move(out), {a, bias}, [na, nb](Node& self) {
        if (na->requires_grad) na->g() += self.grad;
        if (nb->requires_grad) nb->g() += self.grad.colwise().sum();
    });
}

/// x * w + b
inline Var affine(Var x, Var w, Var b) { return add_row_bias(matmul(x, w), b); }

inline Var concat_cols(Var a, Var b) {
    if (a.rows() != b.rows()) throw InvalidInput("concat_cols: row counts differ");
    Matrix out(a.rows(), a.cols() + b.cols());
    out << a.value(), b.value();
    Node* na = a.node();
    Node* nb = b.node();
    const Eigen::Index ca = a.cols();
    const Eigen::Index cb = b.cols();
    return a.tape()->op(std::move(out), {a, b}, [na, nb, ca, cb](Node& self) {
        if (na->requires_grad) na->g() += self.grad.leftCols(ca);
        if (nb->requires_grad) nb->g() += self.grad.rightCols(cb);
    });
}

/// Vertical stack of same-width blocks.
inline Var stack_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw InvalidInput("stack_rows: nothing to stack");
    Eigen::Index rows = 0;
    const Eigen::Index cols = parts[0].cols();
    for (const auto& p : parts) {
        if (p.cols() != cols) throw InvalidInput("stack_rows: widths differ");
        rows += p.rows();
    }
    Matrix out(rows, cols);
    std::vector<Node*> nodes;
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        out.middleRows(at, p.rows()) = p.value();
        at += p.rows();
        nodes.push_back(p.node());
    }
    return parts[0].tape()->op(std::move(out), parts, [nodes](Node& self) {
        Eigen::Index at = 0;
        for (Node* n : nodes) {
            const Eigen::Index r = n->val().rows();
            if (n->requires_grad) n->g() += self.grad.middleRows(at, r);
            at += r;
        }
    });
}

/// Row sums as a column: M x 1.
inline Var row_sum(Var a) {
    Node* na = a.node();
    Matrix out = a.value().rowwise().sum();
    return a.tape()->op(std::move(out), {a}, [na](Node& self) {
        na->g().colwise() += self.grad.col(0);
    });
}

/// Column sums as a row: 1 x C.
inline Var col_sum(Var a) {
    Node* na = a.node();
    Matrix out = a.value().colwise().sum();
    return a.tape()->op(std::move(out), {a}, [na](Node& self) {
        na->g().rowwise() += self.grad.row(0);
    });
}

inline Var sum_all(Var a) {
    Node* na = a.node();
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    return a.tape()->op(std::move(out), {a}, [na](Node& self) { na->g().array() += self.grad(0, 0); });
}

/// a(i, :) / z(i)
inline Var row_div(Var a, Var z) {
    if (z.cols() != 1 || z.rows() != a.rows()) throw InvalidInput("row_div: divisor must be M x 1");
    Matrix out = a.value().array().colwise() / z.value().col(0).array();
    Node* na = a.node();
    Node* nz = z.node();
    return a.tape()->op(std::move(out), {a, z}, [na, nz](Node& self) {
        const auto zc = nz->val().col(0).array();
        if (na->requires_grad) na->g().array() += self.grad.array().colwise() / zc;
        if (nz->requires_grad) {
            // d/dz (a/z) = -a/z^2
            const Eigen::ArrayXd s = (self.grad.array() * na->val().array()).rowwise().sum();
            nz->g().col(0).array() -= s / (zc * zc);
        }
    });
}

/// Multiplies each row by a constant 0/1 mask entry.
inline Var mask_rows(Var a, const std::vector<std::uint8_t>& mask) {
    if (static_cast<Eigen::Index>(mask.size()) != a.rows()) throw InvalidInput("mask_rows: mask length");
    Matrix out = a.value();
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        if (!mask[static_cast<std::size_t>(i)]) out.row(i).setZero();
    }
    Node* na = a.node();
    return a.tape()->op(std::move(out), {a}, [na, mask](Node& self) {
        for (Eigen::Index i = 0; i < self.grad.rows(); ++i) {
            if (mask[static_cast<std::size_t>(i)]) na->g().row(i) += self.grad.row(i);
        }
    });
}

/// Mean over the rows whose mask is set: 1 x C.
inline Var masked_mean_rows(Var a, const std::vector<std::uint8_t>& mask) {
    if (static_cast<Eigen::Index>(mask.size()) != a.rows()) throw InvalidInput("masked_mean_rows: mask length");
    std::size_t valid = 0;
    for (auto m : mask) valid += m != 0;
    if (valid == 0) throw InvalidInput("masked_mean_rows: every row is masked");
    Matrix out = Matrix::Zero(1, a.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        if (mask[static_cast<std::size_t>(i)]) out += a.value().row(i);
    }
    const double inv = 1.0 / static_cast<double>(valid);
    out *= inv;
    Node* na = a.node();
    return a.tape()->op(std::move(out), {a}, [na, mask, inv](Node& self) {
        for (Eigen::Index i = 0; i < na->val().rows(); ++i) {
            if (mask[static_cast<std::size_t>(i)]) na->g().row(i) += inv * self.grad.row(0);
        }
    });
}

inline Var mean_rows(Var a) {
    return masked_mean_rows(a, std::vector<std::uint8_t>(static_cast<std::size_t>(a.rows()), 1));
}

// ---------------------------------------------------------------------------
// Point-wise nonlinearities

inline Var leaky_relu(Var a, double slope = 0.2) {
    Matrix out = a.value().unaryExpr([slope](double x) { return x > 0 ? x : slope * x; });
    Node* na = a.node();
    return a.tape()->op(std::move(out), {a}, [na, slope](Node& self) {
        na->g().array() += self.grad.array() * na->val().array().unaryExpr([slope](double x) {
            return x > 0 ? 1.0 : slope;
        });
    });
}

inline Var sigmoid(Var a) {
    Matrix out = a.value().unaryExpr([](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
    });
    Node* na = a.node();
    return a.tape()->op(std::move(out), {a}, [na](Node& self) {
        na->g().array() += self.grad.array() * self.value.array() * (1.0 - self.value.array());
    });
}

/// elu(x) + 1, strictly positive.
inline Var elu_plus_one(Var a) {
    Matrix out = a.value().unaryExpr([](double x) { return x > 0 ? x + 1.0 : std::exp(x); });
    Node* na = a.node();
    return a.tape()->op(std::move(out), {a}, [na](Node& self) {
        na->g().array() += self.grad.array() * na->val().array().unaryExpr([](double x) {
            return x > 0 ? 1.0 : std::exp(x);
        });
    });
}

/// Rows scaled to unit L2 norm.
inline Var normalize_rows(Var a) {
    const Eigen::VectorXd norms = a.value().rowwise().norm();
    for (Eigen::Index i = 0; i < norms.size(); ++i) {
        if (!(norms(i) > 0.0)) throw InvalidInput("normalize_rows: zero row");
    }
    Matrix out = a.value().array().colwise() / norms.array();
    Node* na = a.node();
    return a.tape()->op(std::move(out), {a}, [na, norms](Node& self) {
        // (g - y (y . g)) / |a|
        const Eigen::VectorXd yg = (self.value.array() * self.grad.array()).rowwise().sum();
        Matrix d = self.grad - (self.value.array().colwise() * yg.array()).matrix();
        na->g().array() += d.array().colwise() / norms.array();
    });
}

// ---------------------------------------------------------------------------
// Patch convolution

/// Valid 3x3 convolution applied independently to every row of `x`, each row
/// being a size x size x c_in patch in [row][col][channel] order. Weights are
/// (9 c_in) x c_out in [dr][dc][channel] order; output rows are
/// (size-2) x (size-2) x c_out.
inline Var conv3x3_valid(Var x, int size, int c_in, Var w, Var b) {
    if (size < 3) throw InvalidInput("conv3x3_valid: patch smaller than kernel");
    const int out_size = size - 2;
    const Eigen::Index m = x.rows();
    const Eigen::Index positions = static_cast<Eigen::Index>(out_size) * out_size;
    const Eigen::Index k = 9 * c_in;
    if (x.cols() != static_cast<Eigen::Index>(size) * size * c_in) throw InvalidInput("conv3x3_valid: input width");
    if (w.rows() != k) throw InvalidInput("conv3x3_valid: weight rows");
    const Eigen::Index c_out = w.cols();
    if (b.rows() != 1 || b.cols() != c_out) throw InvalidInput("conv3x3_valid: bias shape");

    auto cols = std::make_shared<Matrix>(m * positions, k);
    const Matrix& xv = x.value();
    for (Eigen::Index j = 0; j < m; ++j) {
        const double* src = xv.row(j).data();
        for (int r = 0; r < out_size; ++r) {
            for (int c = 0; c < out_size; ++c) {
                double* dst = cols->row(j * positions + r * out_size + c).data();
                for (int dr = 0; dr < 3; ++dr) {
                    const double* line = src + (static_cast<std::ptrdiff_t>(r + dr) * size + c) * c_in;
                    std::copy(line, line + 3 * c_in, dst + dr * 3 * c_in);
                }
            }
        }
    }
    Matrix y(m * positions, c_out);
    y.noalias() = (*cols) * w.value();
    y.rowwise() += b.value().row(0);
    Matrix out = MatrixMap(y.data(), m, positions * c_out);

    Node* nx = x.node();
    Node* nw = w.node();
    Node* nb = b.node();
    return x.tape()->op(std::move(out), {x, w, b},
                        [nx, nw, nb, cols, m, positions, c_out, size, out_size, c_in, k](Node& self) {
        ConstMatrixMap g(self.grad.data(), m * positions, c_out);
        if (nw->requires_grad) nw->g().noalias() += cols->transpose() * g;
        if (nb->requires_grad) nb->g() += g.colwise().sum();
        if (nx->requires_grad) {
            Matrix gc(m * positions, k);
            gc.noalias() = g * nw->val().transpose();
            Matrix& gx = nx->g();
            for (Eigen::Index j = 0; j < m; ++j) {
                double* dst = gx.row(j).data();
                for (int r = 0; r < out_size; ++r) {
                    for (int c = 0; c < out_size; ++c) {
                        const double* src = gc.row(j * positions + r * out_size + c).data();
                        for (int dr = 0; dr < 3; ++dr) {
                            double* line = dst + (static_cast<std::ptrdiff_t>(r + dr) * size + c) * c_in;
                            for (int t = 0; t < 3 * c_in; ++t) line[t] += src[dr * 3 * c_in + t];
                        }
                    }
                }
            }
        }
    });
}

/// Mean over `positions` spatial cells of rows laid out [position][channel].
inline Var spatial_mean_pool(Var x, Eigen::Index positions) {
    const Eigen::Index channels = x.cols() / positions;
    if (channels * positions != x.cols()) throw InvalidInput("spatial_mean_pool: width not divisible");
    Matrix out = Matrix::Zero(x.rows(), channels);
    for (Eigen::Index p = 0; p < positions; ++p) out += x.value().middleCols(p * channels, channels);
    const double inv = 1.0 / static_cast<double>(positions);
    out *= inv;
    Node* nx = x.node();
    return x.tape()->op(std::move(out), {x}, [nx, positions, channels, inv](Node& self) {
        Matrix& g = nx->g();
        for (Eigen::Index p = 0; p < positions; ++p) g.middleCols(p * channels, channels) += inv * self.grad;
    });
}

// ---------------------------------------------------------------------------
// Ring aggregation

/// out(v) = mean of h over v and its cyclic +-k neighbours (all rows when the
/// ring wraps onto itself).
inline Matrix ring_mean_value(const Matrix& h, std::size_t k) {
    const Eigen::Index m = h.rows();
    if (m == 0) return h;
    if (2 * static_cast<Eigen::Index>(k) + 1 >= m) {
        Matrix out(m, h.cols());
        out.rowwise() = h.colwise().mean();
        return out;
    }
    const Eigen::Index kk = static_cast<Eigen::Index>(k);
    const double inv = 1.0 / static_cast<double>(2 * kk + 1);
    Matrix out(m, h.cols());
    Eigen::RowVectorXd window = Eigen::RowVectorXd::Zero(h.cols());
    for (Eigen::Index d = -kk; d <= kk; ++d) window += h.row((d + m) % m);
    for (Eigen::Index v = 0; v < m; ++v) {
        out.row(v) = inv * window;
        window -= h.row((v - kk + m) % m);
        window += h.row((v + kk + 1) % m);
    }
    return out;
}

inline Var ring_mean(Var h, std::size_t k) {
    Node* nh = h.node();
    return h.tape()->op(ring_mean_value(h.value(), k), {h}, [nh, k](Node& self) {
        // Symmetric, equal-size neighbourhoods: the adjoint is the same average.
        nh->g() += ring_mean_value(self.grad, k);
    });
}

} // namespace fragmenta::nn
