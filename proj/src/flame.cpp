#include "pkit/flame.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace pkit {

namespace {

[[noreturn]] void fail(const std::string& field, const std::string& what) {
    throw std::invalid_argument("flame: " + field + ": " + what);
}

void expect_rows(const Eigen::MatrixXd& m, Eigen::Index rows, const char* field) {
    if (m.rows() != rows) {
        fail(field, "expected " + std::to_string(rows) + " rows, got " + std::to_string(m.rows()));
    }
}

Eigen::Map<const VertexMatrix> as_rows(const VertexArray& v) {
    return {v.data(), v.size() / 3, 3};
}

}  // namespace

void FlameModel::validate() const {
    if (template_vertices.size() == 0 || template_vertices.size() % 3 != 0) {
        fail("template", "size must be a positive multiple of 3");
    }
    const Eigen::Index n = n_vertices();
    const Eigen::Index j = n_joints();
    if (j < 1) fail("kintree", "at least one joint required");

    expect_rows(shape_basis, 3 * n, "shape_basis");
    expect_rows(pose_basis, 3 * n, "pose_basis");
    expect_rows(expr_basis, 3 * n, "expr_basis");
    if (pose_basis.cols() != 9 * (j - 1)) {
        fail("pose_basis", "expected " + std::to_string(9 * (j - 1)) + " columns, got " +
                               std::to_string(pose_basis.cols()));
    }
    if (joint_regressor.rows() != j || joint_regressor.cols() != n) {
        fail("joint_regressor", "expected n_joints x n_vertices");
    }
    if (skin_weights.rows() != j || skin_weights.cols() != n) {
        fail("skin_weights", "expected n_joints x n_vertices");
    }
    if ((skin_weights.array() < 0.0).any()) fail("skin_weights", "negative entry");
    for (Eigen::Index v = 0; v < n; ++v) {
        if (std::abs(skin_weights.col(v).sum() - 1.0) > 1e-6) {
            fail("skin_weights", "column " + std::to_string(v) + " does not sum to 1");
        }
    }
    for (const Face& f : faces) {
        for (int32_t idx : f) {
            if (idx < 0 || idx >= n) fail("faces", "index " + std::to_string(idx) + " out of range");
        }
    }
    if (kintree[0] != -1) fail("kintree", "joint 0 must be the root");
    for (size_t i = 1; i < kintree.size(); ++i) {
        // Parents precede children, which also rules out cycles and extra roots.
        if (kintree[i] < 0 || kintree[i] >= static_cast<int32_t>(i)) {
            fail("kintree", "joint " + std::to_string(i) + " has invalid parent " + std::to_string(kintree[i]));
        }
    }
}

FlameParams FlameParams::zeros(const FlameModel& model) {
    return {Eigen::VectorXd::Zero(model.n_shape()), Eigen::VectorXd::Zero(model.pose_dim()),
            Eigen::VectorXd::Zero(model.n_expr())};
}

void check_params(const FlameModel& model, const FlameParams& params) {
    if (params.shape.size() != model.n_shape()) fail("shape", "dimension mismatch");
    if (params.pose.size() != model.pose_dim()) fail("pose", "dimension mismatch");
    if (params.expr.size() != model.n_expr()) fail("expr", "dimension mismatch");
    if (!params.shape.allFinite()) fail("shape", "non-finite entry");
    if (!params.pose.allFinite()) fail("pose", "non-finite entry");
    if (!params.expr.allFinite()) fail("expr", "non-finite entry");
}

VertexArray shaped_vertices(const FlameModel& model, const FlameParams& params) {
    check_params(model, params);
    return model.template_vertices + model.shape_basis * params.shape + model.expr_basis * params.expr;
}

Eigen::VectorXd pose_feature(const FlameModel& model, const Eigen::VectorXd& pose) {
    const int joints = model.n_joints();
    Eigen::VectorXd feat(9 * (joints - 1));
    for (int j = 1; j < joints; ++j) {
        const Mat3 r = axis_angle_to_matrix(pose.segment<3>(3 * j)) - Mat3::Identity();
        for (int a = 0; a < 3; ++a) {
            for (int b = 0; b < 3; ++b) feat[9 * (j - 1) + 3 * a + b] = r(a, b);
        }
    }
    return feat;
}

VertexArray blend_shapes(const FlameModel& model, const FlameParams& params) {
    VertexArray t_p = shaped_vertices(model, params);
    if (model.pose_basis.cols() > 0) t_p += model.pose_basis * pose_feature(model, params.pose);
    return t_p;
}

VertexMatrix regress_joints(const FlameModel& model, const VertexArray& shaped) {
    return model.joint_regressor * as_rows(shaped);
}

Mesh lbs(const FlameModel& model, const VertexArray& t_p, const FlameParams& params) {
    if (t_p.size() != 3 * static_cast<Eigen::Index>(model.n_vertices())) fail("t_p", "length must be 3n");
    const VertexMatrix joints = regress_joints(model, shaped_vertices(model, params));
    const int nj = model.n_joints();

    // Transform of each joint relative to its rest location, composed down
    // the kinematic tree: A_j(x) = A_parent(R_j (x - J_j) + J_j). Identity
    // rotations give exactly (I, 0).
    std::vector<Eigen::Matrix<double, 3, 4>> relative(static_cast<size_t>(nj));
    for (int j = 0; j < nj; ++j) {
        const Mat3 rot = axis_angle_to_matrix(params.pose.segment<3>(3 * j));
        const Vec3 joint = joints.row(j).transpose();
        const Vec3 local = joint - rot * joint;
        const int parent = model.kintree[static_cast<size_t>(j)];
        auto& r = relative[static_cast<size_t>(j)];
        if (parent < 0) {
            r.leftCols<3>() = rot;
            r.col(3) = local;
        } else {
            const auto& p = relative[static_cast<size_t>(parent)];
            r.leftCols<3>() = p.leftCols<3>() * rot;
            r.col(3) = p.leftCols<3>() * local + p.col(3);
        }
    }
    for (auto& r : relative) r.leftCols<3>() -= Mat3::Identity();

    // Skinning as a displacement of the rest vertex (weights sum to one).
    const auto rest = as_rows(t_p);
    Mesh mesh;
    mesh.faces = model.faces;
    mesh.vertices.resize(rest.rows(), 3);
    for (Eigen::Index v = 0; v < rest.rows(); ++v) {
        Eigen::Matrix<double, 3, 4> blended = Eigen::Matrix<double, 3, 4>::Zero();
        for (int j = 0; j < nj; ++j) {
            const double wgt = model.skin_weights(j, v);
            if (wgt != 0.0) blended += wgt * relative[static_cast<size_t>(j)];
        }
        mesh.vertices.row(v) =
            rest.row(v) + (blended.leftCols<3>() * rest.row(v).transpose() + blended.col(3)).transpose();
    }
    return mesh;
}

Mesh flame_forward(const FlameModel& model, const FlameParams& params) {
    return lbs(model, blend_shapes(model, params), params);
}

Eigen::VectorXd pose_vec_to_flame(std::span<const double> f_pose, int n_joints) {
    if (f_pose.size() != 12) {
        throw std::invalid_argument("pose_vec_to_flame: expected 12 values, got " + std::to_string(f_pose.size()));
    }
    if (n_joints <= kJawJoint) {
        throw std::invalid_argument("pose_vec_to_flame: skeleton has no jaw joint");
    }
    Eigen::VectorXd pose = Eigen::VectorXd::Zero(3 * n_joints);
    pose.segment<3>(3 * kRootJoint) = matrix_to_axis_angle(rot6d_to_matrix(Rot6d::from(f_pose.subspan(0, 6))));
    pose.segment<3>(3 * kJawJoint) = matrix_to_axis_angle(rot6d_to_matrix(Rot6d::from(f_pose.subspan(6, 6))));
    return pose;
}

Eigen::VectorXd flame_to_pose_vec(const Eigen::VectorXd& pose) {
    Eigen::VectorXd out(12);
    out.head<6>() = matrix_to_rot6d(axis_angle_to_matrix(pose.segment<3>(3 * kRootJoint))).values;
    out.tail<6>() = matrix_to_rot6d(axis_angle_to_matrix(pose.segment<3>(3 * kJawJoint))).values;
    return out;
}

FlameModel make_mini_flame(uint64_t seed) {
    constexpr int kVerts = 12;
    constexpr int kJoints = 5;
    constexpr double kRadius = 0.1;
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    const double raw[kVerts][3] = {
        {-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
        {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1},
    };
    FlameModel m;
    m.template_vertices.resize(3 * kVerts);
    for (int v = 0; v < kVerts; ++v) {
        const Vec3 p = Vec3(raw[v][0], raw[v][1], raw[v][2]).normalized() * kRadius;
        m.template_vertices.segment<3>(3 * v) = Vec3(p.x(), 1.2 * p.y(), p.z());
    }
    m.faces = {
        {0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11},
        {1, 5, 9}, {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
        {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8}, {3, 8, 9},
        {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1},
    };
    m.kintree = {-1, 0, 1, 1, 1};

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    auto gaussian = [&](Eigen::Index rows, Eigen::Index cols, double scale) {
        Eigen::MatrixXd out(rows, cols);
        for (Eigen::Index c = 0; c < cols; ++c) {
            for (Eigen::Index r = 0; r < rows; ++r) out(r, c) = scale * normal(rng);
        }
        return out;
    };
    m.shape_basis = gaussian(3 * kVerts, 4, 0.01);
    m.expr_basis = gaussian(3 * kVerts, 6, 0.01);
    m.pose_basis = gaussian(3 * kVerts, 9 * (kJoints - 1), 0.005);

    // Joints as averages of anchor vertices: root/neck under the head, jaw at
    // the lower front, eyes at the upper front.
    const std::vector<std::vector<int>> anchors = {{2, 3}, {2, 3, 4, 6}, {4, 9, 11}, {5, 9}, {5, 11}};
    m.joint_regressor = Eigen::MatrixXd::Zero(kJoints, kVerts);
    for (int j = 0; j < kJoints; ++j) {
        for (int v : anchors[static_cast<size_t>(j)]) {
            m.joint_regressor(j, v) = 1.0 / static_cast<double>(anchors[static_cast<size_t>(j)].size());
        }
    }

    // Lower-front vertices follow the jaw, the rest follow neck and root.
    m.skin_weights.resize(kJoints, kVerts);
    for (int v = 0; v < kVerts; ++v) {
        Eigen::VectorXd w(kJoints);
        for (int j = 0; j < kJoints; ++j) w[j] = 0.05 * uniform(rng);
        const bool jaw = (v == 2 || v == 3 || v == 4);
        w[jaw ? kJawJoint : kNeckJoint] += 1.0;
        w[kRootJoint] += 0.2;
        m.skin_weights.col(v) = w / w.sum();
    }
    m.validate();
    return m;
}

}  // namespace pkit
