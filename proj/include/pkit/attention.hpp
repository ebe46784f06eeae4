#pragma once

#include "pkit/autodiff.hpp"
#include "pkit/tensor.hpp"

#include <cstdint>
#include <random>
#include <span>

namespace pkit {

using ad::Matrix;

// Projections for tokens stored as rows: Q = z Wq, K = z Wk, V = z Wv,
// output = attn Wo.
struct AttentionWeights {
    Matrix wq;  // c x d
    Matrix wk;  // c x d
    Matrix wv;  // c x d
    Matrix wo;  // d x c
    int heads = 1;

    Eigen::Index channels() const { return wq.rows(); }
    Eigen::Index head_dim() const { return wq.cols(); }
    void validate() const;

    static AttentionWeights random(Eigen::Index channels, Eigen::Index dim, std::mt19937_64& rng, double scale = 0.5,
                                   int heads = 1);
};

struct AttentionOptions {
    // Adds a sinusoidal code of the attended-axis position to the tokens
    // before projection. Off by default, which keeps the kernels
    // permutation-equivariant along the attended axis.
    bool positional_encoding = false;
};

// softmax(Q K^T / sqrt(d)) V with row-max stabilization.
Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v);

// z + Attn(z Wq, [z; y_ref] Wk, [z; y_ref] Wv) Wo. y_ref may have zero rows.
Matrix reference_attention(const Matrix& z, const Matrix& y_ref, const AttentionWeights& w);

// x: b x t x h x w x c. Self-attention along t for every (b, h, w), residual.
Tensor temporal_attention(const Tensor& x, const AttentionWeights& w, const AttentionOptions& opt = {});

// x: b x m x t x h x w x c. Self-attention along m for every (b, t, h, w), residual.
Tensor view_attention(const Tensor& x, const AttentionWeights& w, const AttentionOptions& opt = {});

enum class ReshapePattern {
    MergeSpatialForTime,  // b x t x h x w x c      -> (b h w) x t x c
    MergeAllButView,      // b x m x t x h x w x c  -> (b t h w) x m x c
    MergeViewIntoBatch,   // b x m x t x h x w x c  -> (b m) x t x h x w x c
};

Tensor reshape_contract(const Tensor& x, ReshapePattern pattern);
// Inverse of reshape_contract given the original shape.
Tensor reshape_expand(const Tensor& y, ReshapePattern pattern, std::span<const Tensor::Index> original_shape);

// Differentiable forms. Token rows are grouped: `groups` consecutive blocks
// of equal length, each attended independently.
struct AttentionVars {
    ad::Var wq, wk, wv, wo;
    int heads = 1;

    static AttentionVars variables(ad::Tape& tape, const AttentionWeights& w);
    static AttentionVars constants(ad::Tape& tape, const AttentionWeights& w);
};

ad::Var self_attention_residual(ad::Var tokens, Eigen::Index groups, const AttentionVars& w);
ad::Var reference_attention(ad::Var z, ad::Var y_ref, const AttentionVars& w);

// x_rows holds the natural row-major layout of the tensor with the channel
// axis as columns: (b t h w) x c, respectively (b m t h w) x c.
ad::Var temporal_attention(ad::Var x_rows, std::span<const Tensor::Index> shape, const AttentionVars& w,
                           const AttentionOptions& opt = {});
ad::Var view_attention(ad::Var x_rows, std::span<const Tensor::Index> shape, const AttentionVars& w,
                       const AttentionOptions& opt = {});

// Row order that groups tokens by every axis except `axis` (which becomes
// the within-group position) and the trailing channel axis.
std::vector<Eigen::Index> group_rows_along(std::span<const Tensor::Index> shape, size_t axis);

// pe[pos][2i] = sin(pos / 10000^(2i/c)), pe[pos][2i+1] = cos(...).
Matrix sinusoidal_encoding(Eigen::Index positions, Eigen::Index channels);

}  // namespace pkit
