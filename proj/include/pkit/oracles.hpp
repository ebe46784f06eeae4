#pragma once

// Deliberately naive reference implementations used to cross-check the
// production kernels (by `pkit check` and the test suites). They share no
// code with the implementations they verify.

#include "pkit/attention.hpp"
#include "pkit/flame.hpp"
#include "pkit/tensor.hpp"

#include <functional>
#include <random>
#include <span>
#include <vector>

namespace pkit::oracle {

// Uniform random rotation from a normalized Gaussian quaternion.
Mat3 random_rotation(std::mt19937_64& rng);
// Rotation matrix of an axis-angle vector via the unit quaternion.
Mat3 quaternion_rotation(const Vec3& axis_angle);

// T + S beta + P pose_feature + E psi accumulated one vertex coordinate at
// a time.
VertexArray blend_shapes(const FlameModel& model, const FlameParams& params);

// Full forward pass with 4x4 homogeneous joint transforms and a per-vertex
// blended 4x4 matrix.
VertexMatrix flame_forward(const FlameModel& model, const FlameParams& params);

// Single-head softmax(scale q k^T) v with explicit loops.
Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v, double scale);

// z + softmax over [z; y] then output projection, with K' and V' assembled
// explicitly. Heads split the projected columns evenly.
Matrix reference_attention(const Matrix& z, const Matrix& y_ref, const AttentionWeights& w);

// Per-location loops over the spatial (respectively view-complement) axes.
Tensor temporal_attention(const Tensor& x, const AttentionWeights& w);
Tensor view_attention(const Tensor& x, const AttentionWeights& w);

// Flat index of coordinate (b, m, t, h, w, c) (or (b, t, h, w, c) for the
// 5-d pattern) after reshape_contract, by enumeration.
Tensor::Index contracted_index(ReshapePattern pattern, std::span<const Tensor::Index> shape,
                               std::span<const Tensor::Index> coord);

enum class Coverage { Inside, Outside, Edge };
// Classifies a sample point against a 2-d triangle by its three edge
// functions; points within `tol` of an edge line report Edge.
Coverage point_in_triangle(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c,
                           const Eigen::Vector2d& p, double tol = 1e-9);

// Central differences of f at x with step h.
std::vector<double> numeric_gradient(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> x, double h = 1e-5);

// max_i |a_i - n_i| / max(|a_i|, |n_i|, floor).
double max_relative_error(std::span<const double> analytic, std::span<const double> numeric, double floor = 1e-6);

}  // namespace pkit::oracle
