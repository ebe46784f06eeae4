#include "pkit/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <numbers>
#include <stdexcept>
#include <string>

namespace pkit::ad {

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return tape_->grad(id_); }

Var Tape::variable(Matrix value) { return record(std::move(value), true, nullptr); }
Var Tape::constant(Matrix value) { return record(std::move(value), false, nullptr); }

Var Tape::record(Matrix value, bool needs_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Matrix(), needs_grad ? std::move(backward) : nullptr, needs_grad});
    return {this, static_cast<int>(nodes_.size() - 1)};
}

void Tape::accumulate(int id, const Matrix& g) { accumulate_expr(id, g); }

void Tape::backward(Var out) {
    if (out.tape() != this) throw std::invalid_argument("backward: variable belongs to another tape");
    if (out.rows() != 1 || out.cols() != 1) throw std::invalid_argument("backward: output must be a scalar");
    for (Node& n : nodes_) n.grad.resize(0, 0);
    nodes_[static_cast<size_t>(out.id())].grad = Matrix::Ones(1, 1);
    for (int id = out.id(); id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.backward && n.grad.size() != 0) n.backward(*this, n.grad);
    }
}

namespace {

void same_tape(Var a, Var b) {
    if (a.tape() != b.tape()) throw std::invalid_argument("autodiff: operands live on different tapes");
}

void same_shape(Var a, Var b, const char* op) {
    same_tape(a, b);
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                                    std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                    std::to_string(b.cols()) + ")");
    }
}

bool any_grad(Var a) { return a.tape()->needs_grad(a.id()); }
bool any_grad(Var a, Var b) { return any_grad(a) || any_grad(b); }

}  // namespace

Var matmul(Var a, Var b) {
    same_tape(a, b);
    if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
    Tape& t = *a.tape();
    const int ia = a.id(), ib = b.id();
    Matrix out = a.value() * b.value();
    return t.record(std::move(out), any_grad(a, b), [ia, ib](Tape& tp, const Matrix& g) {
        if (tp.needs_grad(ia)) tp.accumulate_expr(ia, g * tp.value(ib).transpose());
        if (tp.needs_grad(ib)) tp.accumulate_expr(ib, tp.value(ia).transpose() * g);
    });
}

Var add(Var a, Var b) {
    same_shape(a, b, "add");
    const int ia = a.id(), ib = b.id();
    return a.tape()->record(a.value() + b.value(), any_grad(a, b), [ia, ib](Tape& tp, const Matrix& g) {
        tp.accumulate(ia, g);
        tp.accumulate(ib, g);
    });
}

Var sub(Var a, Var b) {
    same_shape(a, b, "sub");
    const int ia = a.id(), ib = b.id();
    return a.tape()->record(a.value() - b.value(), any_grad(a, b), [ia, ib](Tape& tp, const Matrix& g) {
        tp.accumulate(ia, g);
        tp.accumulate_expr(ib, -g);
    });
}

Var hadamard(Var a, Var b) {
    same_shape(a, b, "hadamard");
    const int ia = a.id(), ib = b.id();
    Matrix out = a.value().cwiseProduct(b.value());
    return a.tape()->record(std::move(out), any_grad(a, b), [ia, ib](Tape& tp, const Matrix& g) {
        tp.accumulate_expr(ia, g.cwiseProduct(tp.value(ib)));
        tp.accumulate_expr(ib, g.cwiseProduct(tp.value(ia)));
    });
}

Var scale(Var a, double s) {
    const int ia = a.id();
    return a.tape()->record(a.value() * s, any_grad(a), [ia, s](Tape& tp, const Matrix& g) {
        tp.accumulate_expr(ia, g * s);
    });
}

Var add_row(Var a, Var row) {
    same_tape(a, row);
    if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: row must be 1 x cols");
    const int ia = a.id(), ir = row.id();
    Matrix out = a.value().rowwise() + row.value().row(0);
    return a.tape()->record(std::move(out), any_grad(a, row), [ia, ir](Tape& tp, const Matrix& g) {
        tp.accumulate(ia, g);
        tp.accumulate_expr(ir, g.colwise().sum());
    });
}

Var linear(Var x, Var weight, Var bias) { return add_row(matmul(x, weight), bias); }

Var gelu(Var a) {
    // 0.5 x (1 + tanh z) == x * sigmoid(2z), z = c (x + k x^3)
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double k = 0.044715;
    const int ia = a.id();
    const auto& x = a.value().array();
    auto sig = std::make_shared<Matrix>((1.0 + (-2.0 * c * (x + k * x.cube())).exp()).inverse().matrix());
    Matrix out = (x * sig->array()).matrix();
    return a.tape()->record(std::move(out), any_grad(a), [ia, sig](Tape& tp, const Matrix& g) {
        const auto& xv = tp.value(ia).array();
        const auto& s = sig->array();
        tp.accumulate_expr(ia, (g.array() * (s + 2.0 * c * xv * s * (1.0 - s) * (1.0 + 3.0 * k * xv.square()))).matrix());
    });
}

Var silu(Var a) {
    const int ia = a.id();
    auto sig = std::make_shared<Matrix>((1.0 + (-a.value().array()).exp()).inverse().matrix());
    Matrix out = (a.value().array() * sig->array()).matrix();
    return a.tape()->record(std::move(out), any_grad(a), [ia, sig](Tape& tp, const Matrix& g) {
        const auto& s = sig->array();
        tp.accumulate_expr(ia, (g.array() * (s * (1.0 + tp.value(ia).array() * (1.0 - s)))).matrix());
    });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
    same_tape(x, gain);
    same_tape(x, bias);
    const Index c = x.cols();
    if (gain.rows() != 1 || gain.cols() != c || bias.rows() != 1 || bias.cols() != c) {
        throw std::invalid_argument("layer_norm: gain and bias must be 1 x cols");
    }
    const Matrix& xv = x.value();
    auto normalized = std::make_shared<Matrix>(xv.rows(), c);
    auto inv_std = std::make_shared<Eigen::VectorXd>(xv.rows());
    for (Index r = 0; r < xv.rows(); ++r) {
        const double mean = xv.row(r).mean();
        const double var = (xv.row(r).array() - mean).square().mean();
        (*inv_std)[r] = 1.0 / std::sqrt(var + eps);
        normalized->row(r) = (xv.row(r).array() - mean) * (*inv_std)[r];
    }
    Matrix out = (normalized->array().rowwise() * gain.value().row(0).array()).rowwise() + bias.value().row(0).array();
    const int ix = x.id(), ig = gain.id(), ib = bias.id();
    const bool grad = any_grad(x) || any_grad(gain) || any_grad(bias);
    return x.tape()->record(std::move(out), grad, [ix, ig, ib, normalized, inv_std](Tape& tp, const Matrix& g) {
        const Matrix& xh = *normalized;
        tp.accumulate_expr(ig, g.cwiseProduct(xh).colwise().sum());
        tp.accumulate_expr(ib, g.colwise().sum());
        if (!tp.needs_grad(ix)) return;
        const Matrix dxh = g.array().rowwise() * tp.value(ig).row(0).array();
        Matrix dx(xh.rows(), xh.cols());
        for (Index r = 0; r < xh.rows(); ++r) {
            const double m1 = dxh.row(r).mean();
            const double m2 = dxh.row(r).dot(xh.row(r)) / static_cast<double>(xh.cols());
            dx.row(r) = (*inv_std)[r] * (dxh.row(r).array() - m1 - xh.row(r).array() * m2);
        }
        tp.accumulate(ix, dx);
    });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: nothing to concatenate");
    Tape& t = *parts.front().tape();
    const Index cols = parts.front().cols();
    Index rows = 0;
    bool grad = false;
    std::vector<int> ids;
    std::vector<Index> sizes;
    for (const Var& p : parts) {
        same_tape(parts.front(), p);
        if (p.cols() != cols) throw std::invalid_argument("concat_rows: column counts differ");
        rows += p.rows();
        grad = grad || any_grad(p);
        ids.push_back(p.id());
        sizes.push_back(p.rows());
    }
    Matrix out(rows, cols);
    Index r = 0;
    for (const Var& p : parts) {
        out.middleRows(r, p.rows()) = p.value();
        r += p.rows();
    }
    return t.record(std::move(out), grad, [ids, sizes](Tape& tp, const Matrix& g) {
        Index off = 0;
        for (size_t i = 0; i < ids.size(); ++i) {
            if (sizes[i] > 0) tp.accumulate_expr(ids[i], g.middleRows(off, sizes[i]));
            off += sizes[i];
        }
    });
}

Var gather_rows(Var a, std::span<const Index> index) {
    const Matrix& av = a.value();
    Matrix out(static_cast<Index>(index.size()), av.cols());
    for (size_t i = 0; i < index.size(); ++i) {
        if (index[i] < 0 || index[i] >= av.rows()) throw std::out_of_range("gather_rows: index out of range");
        out.row(static_cast<Index>(i)) = av.row(index[i]);
    }
    const int ia = a.id();
    std::vector<Index> idx(index.begin(), index.end());
    return a.tape()->record(std::move(out), any_grad(a), [ia, idx](Tape& tp, const Matrix& g) {
        Matrix da = Matrix::Zero(tp.value(ia).rows(), tp.value(ia).cols());
        for (size_t i = 0; i < idx.size(); ++i) da.row(idx[i]) += g.row(static_cast<Index>(i));
        tp.accumulate(ia, da);
    });
}

Var sum(Var a) {
    const int ia = a.id();
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    return a.tape()->record(std::move(out), any_grad(a), [ia](Tape& tp, const Matrix& g) {
        tp.accumulate_expr(ia, Matrix::Constant(tp.value(ia).rows(), tp.value(ia).cols(), g(0, 0)));
    });
}

Var weighted_sum_squares(Var a, const Matrix& weights) {
    if (weights.rows() != a.rows() || weights.cols() != a.cols()) {
        throw std::invalid_argument("weighted_sum_squares: weight shape mismatch");
    }
    const int ia = a.id();
    Matrix out(1, 1);
    out(0, 0) = (weights.array() * a.value().array().square()).sum();
    return a.tape()->record(std::move(out), any_grad(a), [ia, weights](Tape& tp, const Matrix& g) {
        tp.accumulate_expr(ia, (2.0 * g(0, 0)) * weights.cwiseProduct(tp.value(ia)));
    });
}

namespace {

struct AttnDims {
    Index sq, sk, dh, dv;
    double scale;
};

AttnDims check_attention(const Matrix& q, const Matrix& k, const Matrix& v, const AttentionLayout& layout) {
    if (layout.groups < 1 || layout.heads < 1) throw std::invalid_argument("attention: groups and heads must be >= 1");
    if (q.rows() % layout.groups != 0 || k.rows() % layout.groups != 0) {
        throw std::invalid_argument("attention: rows not divisible by group count");
    }
    if (k.rows() != v.rows()) throw std::invalid_argument("attention: K and V row counts differ");
    if (q.cols() != k.cols()) throw std::invalid_argument("attention: Q and K widths differ");
    if (q.cols() % layout.heads != 0 || v.cols() % layout.heads != 0 || q.cols() == 0) {
        throw std::invalid_argument("attention: width not divisible by head count");
    }
    if (!layout.key_valid.empty() && static_cast<Index>(layout.key_valid.size()) != k.rows()) {
        throw std::invalid_argument("attention: key mask length must equal key rows");
    }
    AttnDims d{q.rows() / layout.groups, k.rows() / layout.groups, q.cols() / layout.heads, v.cols() / layout.heads, 0};
    d.scale = layout.scale != 0.0 ? layout.scale : 1.0 / std::sqrt(static_cast<double>(d.dh));
    return d;
}

Matrix block_weights(const Matrix& q, const Matrix& k, const AttentionLayout& layout, const AttnDims& d, Index g,
                     Index h) {
    Matrix s = d.scale * q.block(g * d.sq, h * d.dh, d.sq, d.dh) * k.block(g * d.sk, h * d.dh, d.sk, d.dh).transpose();
    constexpr double neg_inf = -std::numeric_limits<double>::infinity();
    if (!layout.key_valid.empty()) {
        for (Index j = 0; j < d.sk; ++j) {
            if (!layout.key_valid[static_cast<size_t>(g * d.sk + j)]) s.col(j).setConstant(neg_inf);
        }
    }
    for (Index r = 0; r < s.rows(); ++r) {
        const double mx = s.row(r).maxCoeff();
        if (mx == neg_inf) {
            s.row(r).setZero();
            continue;
        }
        s.row(r) = (s.row(r).array() - mx).exp();
        s.row(r) /= s.row(r).sum();
    }
    return s;
}

// Loop form of one (group, head) block that visits keys in sorted (K, V) row
// order for every reduction. Writes the output block, returns the weights.
Matrix canonical_block(const Matrix& q, const Matrix& k, const Matrix& v, const AttentionLayout& layout,
                       const AttnDims& d, Index g, Index h, Matrix& out) {
    const Index k0 = g * d.sk;
    std::vector<Index> order(static_cast<size_t>(d.sk));
    std::iota(order.begin(), order.end(), Index{0});
    const auto key_less = [&](Index a, Index b) {
        for (Index c = 0; c < d.dh; ++c) {
            const double x = k(k0 + a, h * d.dh + c), y = k(k0 + b, h * d.dh + c);
            if (x != y) return x < y;
        }
        for (Index c = 0; c < d.dv; ++c) {
            const double x = v(k0 + a, h * d.dv + c), y = v(k0 + b, h * d.dv + c);
            if (x != y) return x < y;
        }
        return false;
    };
    std::stable_sort(order.begin(), order.end(), key_less);

    constexpr double neg_inf = -std::numeric_limits<double>::infinity();
    Matrix p(d.sq, d.sk);
    for (Index i = 0; i < d.sq; ++i) {
        const Index qi = g * d.sq + i;
        double mx = neg_inf;
        for (Index j = 0; j < d.sk; ++j) {
            double s = neg_inf;
            if (layout.key_valid.empty() || layout.key_valid[static_cast<size_t>(k0 + j)]) {
                s = 0.0;
                for (Index c = 0; c < d.dh; ++c) s += q(qi, h * d.dh + c) * k(k0 + j, h * d.dh + c);
                s *= d.scale;
            }
            p(i, j) = s;
            mx = std::max(mx, s);
        }
        if (mx == neg_inf) {
            p.row(i).setZero();
        } else {
            double total = 0.0;
            for (Index j : order) {
                p(i, j) = std::exp(p(i, j) - mx);
                total += p(i, j);
            }
            for (Index j = 0; j < d.sk; ++j) p(i, j) /= total;
        }
        for (Index c = 0; c < d.dv; ++c) {
            double acc = 0.0;
            for (Index j : order) acc += p(i, j) * v(k0 + j, h * d.dv + c);
            out(qi, h * d.dv + c) = acc;
        }
    }
    return p;
}

}  // namespace

Matrix attention_weights(const Matrix& q, const Matrix& k, const AttentionLayout& layout, Index group, Index head) {
    const AttnDims d = check_attention(q, k, k, layout);
    return block_weights(q, k, layout, d, group, head);
}

Var attention(Var q, Var k, Var v, const AttentionLayout& layout) {
    same_tape(q, k);
    same_tape(q, v);
    const AttnDims d = check_attention(q.value(), k.value(), v.value(), layout);
    auto probs = std::make_shared<std::vector<Matrix>>();
    probs->reserve(static_cast<size_t>(layout.groups * layout.heads));
    Matrix out(q.rows(), v.cols());
    for (Index g = 0; g < layout.groups; ++g) {
        for (Index h = 0; h < layout.heads; ++h) {
            if (layout.canonical_key_order) {
                probs->push_back(canonical_block(q.value(), k.value(), v.value(), layout, d, g, h, out));
                continue;
            }
            probs->push_back(block_weights(q.value(), k.value(), layout, d, g, h));
            out.block(g * d.sq, h * d.dv, d.sq, d.dv).noalias() =
                probs->back() * v.value().block(g * d.sk, h * d.dv, d.sk, d.dv);
        }
    }
    const int iq = q.id(), ik = k.id(), iv = v.id();
    const Index groups = layout.groups, heads = layout.heads;
    const bool grad = any_grad(q) || any_grad(k) || any_grad(v);
    return q.tape()->record(std::move(out), grad, [=](Tape& tp, const Matrix& g) {
        const Matrix& qv = tp.value(iq);
        const Matrix& kv = tp.value(ik);
        const Matrix& vv = tp.value(iv);
        Matrix dq = Matrix::Zero(qv.rows(), qv.cols());
        Matrix dk = Matrix::Zero(kv.rows(), kv.cols());
        Matrix dv = Matrix::Zero(vv.rows(), vv.cols());
        for (Index gi = 0; gi < groups; ++gi) {
            for (Index h = 0; h < heads; ++h) {
                const Matrix& p = (*probs)[static_cast<size_t>(gi * heads + h)];
                const auto go = g.block(gi * d.sq, h * d.dv, d.sq, d.dv);
                const auto vb = vv.block(gi * d.sk, h * d.dv, d.sk, d.dv);
                dv.block(gi * d.sk, h * d.dv, d.sk, d.dv).noalias() += p.transpose() * go;
                const Matrix dp = go * vb.transpose();
                Matrix ds = p.cwiseProduct(dp);
                const Eigen::VectorXd row_dot = ds.rowwise().sum();
                ds -= p.cwiseProduct(row_dot.replicate(1, p.cols()));
                dq.block(gi * d.sq, h * d.dh, d.sq, d.dh).noalias() +=
                    d.scale * ds * kv.block(gi * d.sk, h * d.dh, d.sk, d.dh);
                dk.block(gi * d.sk, h * d.dh, d.sk, d.dh).noalias() +=
                    d.scale * ds.transpose() * qv.block(gi * d.sq, h * d.dh, d.sq, d.dh);
            }
        }
        tp.accumulate(iq, dq);
        tp.accumulate(ik, dk);
        tp.accumulate(iv, dv);
    });
}

}  // namespace pkit::ad
