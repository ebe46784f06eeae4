#pragma once

#include "pkit/rotation.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace pkit {

using VertexArray = Eigen::VectorXd;                                       // 3n, xyz interleaved
using VertexMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;  // n x 3
using Face = std::array<int32_t, 3>;

// Skeleton joint layout shared by FLAME assets: the root carries the global
// head rotation, then neck, jaw and the two eyeballs.
inline constexpr int kRootJoint = 0;
inline constexpr int kNeckJoint = 1;
inline constexpr int kJawJoint = 2;

// Statistical head model. Immutable after construction; all operations below
// are pure functions of (model, params).
//
// The skeleton has n_joints() joints including the root, so an asset with k
// articulated joints has n_joints() == k + 1 and a pose vector of 3k + 3.
struct FlameModel {
    VertexArray template_vertices;       // 3n
    Eigen::MatrixXd shape_basis;         // 3n x |beta|
    Eigen::MatrixXd pose_basis;          // 3n x 9 (n_joints - 1)
    Eigen::MatrixXd expr_basis;          // 3n x |psi|
    Eigen::MatrixXd joint_regressor;     // n_joints x n, applied per coordinate
    Eigen::MatrixXd skin_weights;        // n_joints x n, columns sum to one
    std::vector<Face> faces;
    std::vector<int32_t> kintree;        // parent per joint, -1 for the root

    int n_vertices() const { return static_cast<int>(template_vertices.size() / 3); }
    int n_joints() const { return static_cast<int>(kintree.size()); }
    int n_shape() const { return static_cast<int>(shape_basis.cols()); }
    int n_expr() const { return static_cast<int>(expr_basis.cols()); }
    int pose_dim() const { return 3 * n_joints(); }

    // Throws std::invalid_argument naming the first inconsistent field.
    void validate() const;
};

struct FlameParams {
    Eigen::VectorXd shape;
    Eigen::VectorXd pose;  // axis-angle per joint, root (global) first
    Eigen::VectorXd expr;

    static FlameParams zeros(const FlameModel& model);
};

struct Mesh {
    VertexMatrix vertices;
    std::vector<Face> faces;
};

// Throws std::invalid_argument naming the offending field.
void check_params(const FlameModel& model, const FlameParams& params);

// T + S beta + E psi (no pose correctives); joints are regressed from these.
VertexArray shaped_vertices(const FlameModel& model, const FlameParams& params);

// Vectorized (R(theta_j) - I), row-major, over the non-root joints.
Eigen::VectorXd pose_feature(const FlameModel& model, const Eigen::VectorXd& pose);

// T_P = T + S beta + P poseFeature(theta) + E psi.
VertexArray blend_shapes(const FlameModel& model, const FlameParams& params);

// Joint locations (n_joints x 3) from shaped vertices.
VertexMatrix regress_joints(const FlameModel& model, const VertexArray& shaped);

// Linear blend skinning of t_p around joints regressed from the shaped mesh.
Mesh lbs(const FlameModel& model, const VertexArray& t_p, const FlameParams& params);

// lbs(blend_shapes(...)).
Mesh flame_forward(const FlameModel& model, const FlameParams& params);

// Decodes a 12-value [head 6D | jaw 6D] pose vector into a full axis-angle
// pose for a skeleton with n_joints joints. Neck and eyeballs stay zero.
Eigen::VectorXd pose_vec_to_flame(std::span<const double> f_pose, int n_joints);

// Inverse of pose_vec_to_flame for the head and jaw joints.
Eigen::VectorXd flame_to_pose_vec(const Eigen::VectorXd& pose);

// Deterministic 12-vertex icosahedral stand-in for a FLAME asset: five
// skeleton joints (root, neck, jaw, two eyes), |beta| = 4, |psi| = 6.
FlameModel make_mini_flame(uint64_t seed = 0x5eed);

}  // namespace pkit
