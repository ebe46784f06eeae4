#include "pkit/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace pkit {

namespace {

using Index = Eigen::Index;

Matrix rows_of(const Tensor& x) {
    const Index c = x.dim(x.rank() - 1);
    Matrix m(x.size() / c, c);
    std::copy(x.data().begin(), x.data().end(), m.data());
    return m;
}

Tensor tensor_of(const Matrix& m, const std::vector<Tensor::Index>& shape) {
    return Tensor(shape, std::vector<double>(m.data(), m.data() + m.size()));
}

std::vector<Index> inverse(const std::vector<Index>& perm) {
    std::vector<Index> inv(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) inv[static_cast<size_t>(perm[i])] = static_cast<Index>(i);
    return inv;
}

ad::Var attend_grouped(ad::Var tokens, Index groups, const AttentionVars& w, const AttentionOptions& opt) {
    ad::Var input = tokens;
    if (opt.positional_encoding) {
        const Index len = tokens.rows() / groups;
        const Matrix pe = sinusoidal_encoding(len, tokens.cols());
        input = add(tokens, tokens.tape()->constant(pe.replicate(groups, 1)));
    }
    const ad::Var q = matmul(input, w.wq);
    const ad::Var k = matmul(input, w.wk);
    const ad::Var v = matmul(input, w.wv);
    ad::AttentionLayout layout;
    layout.groups = groups;
    layout.heads = w.heads;
    layout.canonical_key_order = true;
    return add(tokens, matmul(ad::attention(q, k, v, layout), w.wo));
}

ad::Var attend_along(ad::Var x_rows, std::span<const Tensor::Index> shape, size_t axis, const AttentionVars& w,
                     const AttentionOptions& opt) {
    Index tokens = 1;
    for (size_t i = 0; i + 1 < shape.size(); ++i) tokens *= shape[i];
    if (x_rows.rows() != tokens || x_rows.cols() != shape.back()) {
        throw std::invalid_argument("attention: row matrix does not match tensor shape");
    }
    const std::vector<Index> order = group_rows_along(shape, axis);
    const Index len = shape[axis];
    const ad::Var grouped = gather_rows(x_rows, order);
    const ad::Var out = attend_grouped(grouped, tokens / len, w, opt);
    return gather_rows(out, inverse(order));
}

void expect_rank(const Tensor& x, Tensor::Index rank, const char* what) {
    if (x.rank() != rank) {
        throw std::invalid_argument(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                                    x.shape_string());
    }
}

}  // namespace

void AttentionWeights::validate() const {
    const Index c = wq.rows();
    const Index d = wq.cols();
    if (c == 0 || d == 0) throw std::invalid_argument("attention weights: empty projection");
    if (wk.rows() != c || wv.rows() != c || wk.cols() != d || wv.cols() != d) {
        throw std::invalid_argument("attention weights: Wq, Wk, Wv must all be c x d");
    }
    if (wo.rows() != d || wo.cols() != c) throw std::invalid_argument("attention weights: Wo must be d x c");
    if (heads < 1 || d % heads != 0) throw std::invalid_argument("attention weights: d not divisible by heads");
    if (!wq.allFinite() || !wk.allFinite() || !wv.allFinite() || !wo.allFinite()) {
        throw std::invalid_argument("attention weights: non-finite entry");
    }
}

AttentionWeights AttentionWeights::random(Index channels, Index dim, std::mt19937_64& rng, double scale, int heads) {
    std::normal_distribution<double> n(0.0, scale);
    auto draw = [&](Index r, Index c) {
        Matrix m(r, c);
        for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
        return m;
    };
    AttentionWeights w;
    w.wq = draw(channels, dim);
    w.wk = draw(channels, dim);
    w.wv = draw(channels, dim);
    w.wo = draw(dim, channels);
    w.heads = heads;
    return w;
}

AttentionVars AttentionVars::variables(ad::Tape& tape, const AttentionWeights& w) {
    w.validate();
    return {tape.variable(w.wq), tape.variable(w.wk), tape.variable(w.wv), tape.variable(w.wo), w.heads};
}

AttentionVars AttentionVars::constants(ad::Tape& tape, const AttentionWeights& w) {
    w.validate();
    return {tape.constant(w.wq), tape.constant(w.wk), tape.constant(w.wv), tape.constant(w.wo), w.heads};
}

Matrix sinusoidal_encoding(Index positions, Index channels) {
    Matrix pe(positions, channels);
    for (Index p = 0; p < positions; ++p) {
        for (Index i = 0; i < channels; ++i) {
            const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(channels));
            pe(p, i) = (i % 2 == 0) ? std::sin(static_cast<double>(p) * freq) : std::cos(static_cast<double>(p) * freq);
        }
    }
    return pe;
}

std::vector<Index> group_rows_along(std::span<const Tensor::Index> shape, size_t axis) {
    if (shape.size() < 2 || axis + 1 >= shape.size()) throw std::invalid_argument("group_rows_along: bad axis");
    const size_t token_axes = shape.size() - 1;
    std::vector<Index> stride(token_axes, 1);
    for (size_t i = token_axes; i-- > 1;) stride[i - 1] = stride[i] * shape[i];

    // Outer loop over every token axis except `axis` in order, inner over `axis`.
    std::vector<size_t> outer;
    for (size_t i = 0; i < token_axes; ++i) {
        if (i != axis) outer.push_back(i);
    }
    Index total = 1;
    for (size_t i = 0; i < token_axes; ++i) total *= shape[i];
    std::vector<Index> order;
    order.reserve(static_cast<size_t>(total));
    std::vector<Index> coord(outer.size(), 0);
    const Index outer_count = shape[axis] == 0 ? 0 : total / shape[axis];
    for (Index g = 0; g < outer_count; ++g) {
        Index base = 0;
        for (size_t i = 0; i < outer.size(); ++i) base += coord[i] * stride[outer[i]];
        for (Index p = 0; p < shape[axis]; ++p) order.push_back(base + p * stride[axis]);
        for (size_t i = outer.size(); i-- > 0;) {
            if (++coord[i] < shape[outer[i]]) break;
            coord[i] = 0;
        }
    }
    return order;
}

Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v) {
    ad::Tape tape;
    return ad::attention(tape.constant(q), tape.constant(k), tape.constant(v), {}).value();
}

ad::Var self_attention_residual(ad::Var tokens, Index groups, const AttentionVars& w) {
    return attend_grouped(tokens, groups, w, {});
}

ad::Var reference_attention(ad::Var z, ad::Var y_ref, const AttentionVars& w) {
    if (z.cols() != y_ref.cols()) throw std::invalid_argument("reference_attention: channel mismatch");
    const ad::Var parts[] = {z, y_ref};
    const ad::Var kv = concat_rows(parts);
    const ad::Var q = matmul(z, w.wq);
    const ad::Var k = matmul(kv, w.wk);
    const ad::Var v = matmul(kv, w.wv);
    ad::AttentionLayout layout;
    layout.heads = w.heads;
    return add(z, matmul(ad::attention(q, k, v, layout), w.wo));
}

Matrix reference_attention(const Matrix& z, const Matrix& y_ref, const AttentionWeights& w) {
    if (z.cols() != w.channels() || y_ref.cols() != z.cols()) {
        throw std::invalid_argument("reference_attention: channel mismatch");
    }
    ad::Tape tape;
    const AttentionVars vars = AttentionVars::constants(tape, w);
    return reference_attention(tape.constant(z), tape.constant(y_ref), vars).value();
}

ad::Var temporal_attention(ad::Var x_rows, std::span<const Tensor::Index> shape, const AttentionVars& w,
                           const AttentionOptions& opt) {
    if (shape.size() != 5) throw std::invalid_argument("temporal_attention: expected b x t x h x w x c");
    return attend_along(x_rows, shape, 1, w, opt);
}

ad::Var view_attention(ad::Var x_rows, std::span<const Tensor::Index> shape, const AttentionVars& w,
                       const AttentionOptions& opt) {
    if (shape.size() != 6) throw std::invalid_argument("view_attention: expected b x m x t x h x w x c");
    return attend_along(x_rows, shape, 1, w, opt);
}

Tensor temporal_attention(const Tensor& x, const AttentionWeights& w, const AttentionOptions& opt) {
    expect_rank(x, 5, "temporal_attention");
    if (x.dim(4) != w.channels()) throw std::invalid_argument("temporal_attention: channel mismatch");
    ad::Tape tape;
    const AttentionVars vars = AttentionVars::constants(tape, w);
    return tensor_of(temporal_attention(tape.constant(rows_of(x)), x.shape(), vars, opt).value(), x.shape());
}

Tensor view_attention(const Tensor& x, const AttentionWeights& w, const AttentionOptions& opt) {
    expect_rank(x, 6, "view_attention");
    if (x.dim(5) != w.channels()) throw std::invalid_argument("view_attention: channel mismatch");
    ad::Tape tape;
    const AttentionVars vars = AttentionVars::constants(tape, w);
    return tensor_of(view_attention(tape.constant(rows_of(x)), x.shape(), vars, opt).value(), x.shape());
}

Tensor reshape_contract(const Tensor& x, ReshapePattern pattern) {
    switch (pattern) {
        case ReshapePattern::MergeSpatialForTime: {
            expect_rank(x, 5, "merge-spatial-for-time");
            const auto& s = x.shape();
            const Tensor::Index axes[] = {0, 2, 3, 1, 4};
            return x.permuted(axes).reshape({s[0] * s[2] * s[3], s[1], s[4]});
        }
        case ReshapePattern::MergeAllButView: {
            expect_rank(x, 6, "merge-all-but-view");
            const auto& s = x.shape();
            const Tensor::Index axes[] = {0, 2, 3, 4, 1, 5};
            return x.permuted(axes).reshape({s[0] * s[2] * s[3] * s[4], s[1], s[5]});
        }
        case ReshapePattern::MergeViewIntoBatch: {
            expect_rank(x, 6, "merge-view-into-batch");
            const auto& s = x.shape();
            return x.reshaped({s[0] * s[1], s[2], s[3], s[4], s[5]});
        }
    }
    throw std::invalid_argument("reshape_contract: unknown pattern");
}

Tensor reshape_expand(const Tensor& y, ReshapePattern pattern, std::span<const Tensor::Index> original) {
    const std::vector<Tensor::Index> s(original.begin(), original.end());
    switch (pattern) {
        case ReshapePattern::MergeSpatialForTime: {
            if (s.size() != 5) throw std::invalid_argument("merge-spatial-for-time: original must be rank 5");
            const Tensor::Index axes[] = {0, 3, 1, 2, 4};
            return y.reshaped({s[0], s[2], s[3], s[1], s[4]}).permuted(axes);
        }
        case ReshapePattern::MergeAllButView: {
            if (s.size() != 6) throw std::invalid_argument("merge-all-but-view: original must be rank 6");
            const Tensor::Index axes[] = {0, 4, 1, 2, 3, 5};
            return y.reshaped({s[0], s[2], s[3], s[4], s[1], s[5]}).permuted(axes);
        }
        case ReshapePattern::MergeViewIntoBatch:
            if (s.size() != 6) throw std::invalid_argument("merge-view-into-batch: original must be rank 6");
            return y.reshaped(s);
    }
    throw std::invalid_argument("reshape_expand: unknown pattern");
}

}  // namespace pkit
