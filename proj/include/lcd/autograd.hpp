#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include <Eigen/Dense>

namespace lcd::ag {

using Mat = Eigen::MatrixXd;

/// One node of the computation tape: a dense matrix value, its gradient
/// accumulator, and the backward closure that scatters the node's gradient
/// into its parents.
struct Node {
    Mat val;
    Mat grad;
    std::function<void()> backward;
};

using Var = Node*;

/// Reverse-mode tape over Eigen matrices. Creation order is a topological
/// order, so backward() is a single reverse sweep. The tape owns all nodes.
class Tape {
  public:
    Var leaf(Mat value) {
        auto n = std::make_unique<Node>();
        n->val = std::move(value);
        n->grad = Mat::Zero(n->val.rows(), n->val.cols());
        nodes_.push_back(std::move(n));
        return nodes_.back().get();
    }

    Var op(Mat value, std::function<void()> backward) {
        Var v = leaf(std::move(value));
        v->backward = std::move(backward);
        return v;
    }

    // Seed must be set on the output grad before calling.
    void backward() {
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
            if ((*it)->backward) (*it)->backward();
    }

  private:
    std::vector<std::unique_ptr<Node>> nodes_;
};

inline Var matmul(Tape& t, Var a, Var b) {
    Var out = t.op(a->val * b->val, nullptr);
    out->backward = [a, b, out] {
        a->grad.noalias() += out->grad * b->val.transpose();
        b->grad.noalias() += a->val.transpose() * out->grad;
    };
    return out;
}

// a * b^T
inline Var matmul_nt(Tape& t, Var a, Var b) {
    Var out = t.op(a->val * b->val.transpose(), nullptr);
    out->backward = [a, b, out] {
        a->grad.noalias() += out->grad * b->val;
        b->grad.noalias() += out->grad.transpose() * a->val;
    };
    return out;
}

// a * C with constant C (no gradient into C)
inline Var matmul_const(Tape& t, Var a, const Mat& c) {
    Var out = t.op(a->val * c, nullptr);
    Mat cT = c.transpose();
    out->backward = [a, out, cT] { a->grad.noalias() += out->grad * cT; };
    return out;
}

inline Var add(Tape& t, Var a, Var b) {
    Var out = t.op(a->val + b->val, nullptr);
    out->backward = [a, b, out] {
        a->grad += out->grad;
        b->grad += out->grad;
    };
    return out;
}

inline Var scale(Tape& t, Var a, double s) {
    Var out = t.op(a->val * s, nullptr);
    out->backward = [a, out, s] { a->grad += out->grad * s; };
    return out;
}

inline Var add_const(Tape& t, Var a, const Mat& c) {
    Var out = t.op(a->val + c, nullptr);
    out->backward = [a, out] { a->grad += out->grad; };
    return out;
}

// Broadcast-add a (1 x n) row vector to every row of a.
inline Var add_row(Tape& t, Var a, Var row) {
    Var out = t.op(a->val.rowwise() + row->val.row(0), nullptr);
    out->backward = [a, row, out] {
        a->grad += out->grad;
        row->grad.row(0) += out->grad.colwise().sum();
    };
    return out;
}

inline Var relu(Tape& t, Var a) {
    Var out = t.op(a->val.cwiseMax(0.0), nullptr);
    out->backward = [a, out] {
        a->grad.array() += out->grad.array() * (a->val.array() > 0.0).cast<double>();
    };
    return out;
}

inline Var sigmoid(Tape& t, Var a) {
    Mat s = (1.0 / (1.0 + (-a->val.array()).exp())).matrix();
    Var out = t.op(std::move(s), nullptr);
    out->backward = [a, out] {
        a->grad.array() += out->grad.array() * out->val.array() * (1.0 - out->val.array());
    };
    return out;
}

// Elementwise natural log with a floor to keep gradients finite.
inline Var log_floored(Tape& t, Var a, double floor = 1e-30) {
    Mat clipped = a->val.cwiseMax(floor);
    Var out = t.op(clipped.array().log().matrix(), nullptr);
    out->backward = [a, out, clipped, floor] {
        a->grad.array() +=
            out->grad.array() / clipped.array() * (a->val.array() >= floor).cast<double>();
    };
    return out;
}

/// Row-wise softmax; an optional additive mask (0 / -inf style penalties)
/// is applied to the logits first.
inline Var softmax_rows(Tape& t, Var a, const Mat* mask = nullptr) {
    Mat logits = a->val;
    if (mask) logits += *mask;
    Mat p(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        Eigen::ArrayXd row = logits.row(i).array();
        row -= row.maxCoeff();
        Eigen::ArrayXd e = row.exp();
        p.row(i) = (e / e.sum()).matrix();
    }
    Var out = t.op(std::move(p), nullptr);
    out->backward = [a, out] {
        for (Eigen::Index i = 0; i < out->val.rows(); ++i) {
            const auto y = out->val.row(i).array();
            const auto dy = out->grad.row(i).array();
            const double dot = (y * dy).sum();
            a->grad.row(i).array() += y * (dy - dot);
        }
    };
    return out;
}

/// Per-row layer normalization with gain and bias row vectors.
inline Var layernorm_rows(Tape& t, Var x, Var gain, Var bias, double eps = 1e-6) {
    const Eigen::Index rows = x->val.rows(), cols = x->val.cols();
    Mat xhat(rows, cols);
    Eigen::ArrayXd inv_std(rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const double mean = x->val.row(i).mean();
        Eigen::ArrayXd centered = x->val.row(i).array() - mean;
        const double var = centered.square().mean();
        inv_std(i) = 1.0 / std::sqrt(var + eps);
        xhat.row(i) = (centered * inv_std(i)).matrix();
    }
    Mat y = (xhat.array().rowwise() * gain->val.row(0).array()).rowwise() + bias->val.row(0).array();
    Var out = t.op(std::move(y), nullptr);
    out->backward = [x, gain, bias, out, xhat, inv_std] {
        const Eigen::Index rows = x->val.rows();
        const double n = static_cast<double>(x->val.cols());
        for (Eigen::Index i = 0; i < rows; ++i) {
            const Eigen::ArrayXd dy = out->grad.row(i).array();
            const Eigen::ArrayXd g = gain->val.row(0).array();
            const Eigen::ArrayXd xh = xhat.row(i).array();
            gain->grad.row(0).array() += dy * xh;
            bias->grad.row(0).array() += dy;
            const Eigen::ArrayXd dxhat = dy * g;
            const double sum_dxhat = dxhat.sum();
            const double sum_dxhat_xhat = (dxhat * xh).sum();
            x->grad.row(i).array() +=
                inv_std(i) / n * (n * dxhat - sum_dxhat - xh * sum_dxhat_xhat);
        }
    };
    return out;
}

/// Embedding lookup: rows of `table` selected by `ids`; backward scatter-adds.
inline Var gather_rows(Tape& t, Var table, const std::vector<int>& ids) {
    Mat out_val(static_cast<Eigen::Index>(ids.size()), table->val.cols());
    for (std::size_t i = 0; i < ids.size(); ++i)
        out_val.row(static_cast<Eigen::Index>(i)) = table->val.row(ids[i]);
    Var out = t.op(std::move(out_val), nullptr);
    out->backward = [table, out, ids] {
        for (std::size_t i = 0; i < ids.size(); ++i)
            table->grad.row(ids[i]) += out->grad.row(static_cast<Eigen::Index>(i));
    };
    return out;
}

/// Multiply each row i of `a` by the scalar in row i of the (rows x 1) `s`.
inline Var scale_rows(Tape& t, Var a, Var s) {
    Mat y = a->val.array().colwise() * s->val.col(0).array();
    Var out = t.op(std::move(y), nullptr);
    out->backward = [a, s, out] {
        a->grad.array() += out->grad.array().colwise() * s->val.col(0).array();
        s->grad.col(0).array() += (out->grad.array() * a->val.array()).rowwise().sum();
    };
    return out;
}

// out = 1 - a (elementwise), for gate complements.
inline Var one_minus(Tape& t, Var a) {
    Var out = t.op((1.0 - a->val.array()).matrix(), nullptr);
    out->backward = [a, out] { a->grad -= out->grad; };
    return out;
}

/// Elementwise product with a constant mask (dropout etc.).
inline Var mul_const(Tape& t, Var a, const Mat& m) {
    Var out = t.op(a->val.cwiseProduct(m), nullptr);
    out->backward = [a, out, m] { a->grad += out->grad.cwiseProduct(m); };
    return out;
}

/// Scalar result: sum of elementwise product with a constant weight matrix.
inline Var weighted_sum(Tape& t, Var a, const Mat& w) {
    Mat v(1, 1);
    v(0, 0) = a->val.cwiseProduct(w).sum();
    Var out = t.op(std::move(v), nullptr);
    out->backward = [a, out, w] { a->grad += out->grad(0, 0) * w; };
    return out;
}

}  // namespace lcd::ag
