#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

// Minimal tape-based reverse-mode differentiation over dense row-major
// matrices. Rows are tokens, columns are channels throughout.
namespace pkit::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

class Tape;

class Var {
public:
    Var() = default;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    const Matrix& value() const;
    // Empty until backward() has propagated something into this node.
    const Matrix& grad() const;
    Index rows() const { return value().rows(); }
    Index cols() const { return value().cols(); }
    int id() const { return id_; }
    Tape* tape() const { return tape_; }

private:
    Tape* tape_ = nullptr;
    int id_ = -1;
};

class Tape {
public:
    using Backward = std::function<void(Tape&, const Matrix& out_grad)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var variable(Matrix value);
    Var constant(Matrix value);

    // Seeds d(out)/d(out) = 1; out must be 1x1.
    void backward(Var out);

    const Matrix& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    const Matrix& grad(int id) const { return nodes_[static_cast<size_t>(id)].grad; }
    bool needs_grad(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }

    // Used by operations: records a node whose backward closure routes its
    // output gradient to its inputs through accumulate().
    Var record(Matrix value, bool needs_grad, Backward backward);
    void accumulate(int id, const Matrix& g);
    template <class Expr>
    void accumulate_expr(int id, const Expr& g) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.needs_grad) return;
        if (n.grad.size() == 0) {
            n.grad = g;
        } else {
            n.grad += g;
        }
    }

    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        Backward backward;
        bool needs_grad = false;
    };
    std::deque<Node> nodes_;
};

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double s);
// a + 1 * row, row is 1 x cols(a).
Var add_row(Var a, Var row);
// x W + 1 b^T with W: in x out, b: 1 x out.
Var linear(Var x, Var weight, Var bias);

Var gelu(Var a);  // tanh approximation
Var silu(Var a);

// Row-wise layer normalization with learned 1 x c gain and bias.
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

Var concat_rows(std::span<const Var> parts);
// out.row(i) = a.row(index[i]); gradients scatter-add back.
Var gather_rows(Var a, std::span<const Index> index);

// Sum of all entries, 1 x 1.
Var sum(Var a);
// sum_ij w_ij a_ij^2 with constant weights, 1 x 1.
Var weighted_sum_squares(Var a, const Matrix& weights);

// Grouped scaled dot-product attention. Q holds `groups` consecutive blocks
// of query rows, K and V the matching blocks of key rows; columns split into
// `heads` equal slices. Each block/head computes
// softmax(Q K^T * scale) V with scale = 1/sqrt(head_dim) unless overridden.
struct AttentionLayout {
    Index groups = 1;
    Index heads = 1;
    double scale = 0.0;               // 0 selects 1/sqrt(head_dim)
    std::vector<uint8_t> key_valid;   // optional, one flag per key row
    // Reduce over keys in a content-defined order (keys sorted by their K and
    // V rows) so permuting the keys of a group leaves outputs bit-identical.
    bool canonical_key_order = false;
};

Var attention(Var q, Var k, Var v, const AttentionLayout& layout);

// Forward-only softmax weights of one (group, head) block, for inspection.
Matrix attention_weights(const Matrix& q, const Matrix& k, const AttentionLayout& layout, Index group, Index head);

}  // namespace pkit::ad
