#include "pkit/oracles.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pkit::oracle {

using Index = Eigen::Index;
using Mat4 = Eigen::Matrix4d;

Mat3 random_rotation(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
    q.normalize();
    return q.toRotationMatrix();
}

Mat3 quaternion_rotation(const Vec3& axis_angle) {
    const double angle = axis_angle.norm();
    if (angle == 0.0) return Mat3::Identity();
    const Vec3 axis = axis_angle / angle;
    const double s = std::sin(angle / 2.0);
    const double w = std::cos(angle / 2.0), x = axis.x() * s, y = axis.y() * s, z = axis.z() * s;
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w),
         2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
         2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y);
    return r;
}

namespace {

Mat3 joint_rotation(const FlameParams& p, int j) {
    return quaternion_rotation(Vec3(p.pose[3 * j], p.pose[3 * j + 1], p.pose[3 * j + 2]));
}

// Shape and expression terms only, which define the joint locations.
VertexArray identity_vertices(const FlameModel& m, const FlameParams& p) {
    VertexArray out(m.template_vertices.size());
    for (Index i = 0; i < out.size(); ++i) {
        double acc = m.template_vertices[i];
        for (Index s = 0; s < p.shape.size(); ++s) acc += m.shape_basis(i, s) * p.shape[s];
        for (Index e = 0; e < p.expr.size(); ++e) acc += m.expr_basis(i, e) * p.expr[e];
        out[i] = acc;
    }
    return out;
}

}  // namespace

VertexArray blend_shapes(const FlameModel& m, const FlameParams& p) {
    VertexArray out = identity_vertices(m, p);
    const int nj = m.n_joints();
    for (Index i = 0; i < out.size(); ++i) {
        double acc = 0.0;
        for (int j = 1; j < nj; ++j) {
            const Mat3 r = joint_rotation(p, j);
            for (int a = 0; a < 3; ++a) {
                for (int b = 0; b < 3; ++b) {
                    const double feature = r(a, b) - (a == b ? 1.0 : 0.0);
                    acc += m.pose_basis(i, 9 * (j - 1) + 3 * a + b) * feature;
                }
            }
        }
        out[i] += acc;
    }
    return out;
}

VertexMatrix flame_forward(const FlameModel& m, const FlameParams& p) {
    const VertexArray shaped = identity_vertices(m, p);
    const VertexArray posed_rest = oracle::blend_shapes(m, p);
    const int nv = m.n_vertices();
    const int nj = m.n_joints();

    std::vector<Vec3> joints(static_cast<size_t>(nj), Vec3::Zero());
    for (int j = 0; j < nj; ++j) {
        for (int v = 0; v < nv; ++v) {
            for (int a = 0; a < 3; ++a) joints[static_cast<size_t>(j)][a] += m.joint_regressor(j, v) * shaped[3 * v + a];
        }
    }

    // G_j = G_parent * [R_j | J_j - J_parent], then remove the rest offset.
    std::vector<Mat4> global(static_cast<size_t>(nj));
    for (int j = 0; j < nj; ++j) {
        const int parent = m.kintree[static_cast<size_t>(j)];
        Mat4 local = Mat4::Identity();
        local.topLeftCorner<3, 3>() = joint_rotation(p, j);
        local.topRightCorner<3, 1>() = parent < 0 ? joints[static_cast<size_t>(j)]
                                                  : Vec3(joints[static_cast<size_t>(j)] - joints[static_cast<size_t>(parent)]);
        global[static_cast<size_t>(j)] = parent < 0 ? local : Mat4(global[static_cast<size_t>(parent)] * local);
    }
    std::vector<Mat4> skinning(static_cast<size_t>(nj));
    for (int j = 0; j < nj; ++j) {
        Mat4 unrest = Mat4::Identity();
        unrest.topRightCorner<3, 1>() = -joints[static_cast<size_t>(j)];
        skinning[static_cast<size_t>(j)] = global[static_cast<size_t>(j)] * unrest;
    }

    VertexMatrix out(nv, 3);
    for (int v = 0; v < nv; ++v) {
        Mat4 blend = Mat4::Zero();
        for (int j = 0; j < nj; ++j) blend += m.skin_weights(j, v) * skinning[static_cast<size_t>(j)];
        const Eigen::Vector4d h(posed_rest[3 * v], posed_rest[3 * v + 1], posed_rest[3 * v + 2], 1.0);
        const Eigen::Vector4d r = blend * h;
        out.row(v) << r[0], r[1], r[2];
    }
    return out;
}

Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v, double scale) {
    Matrix out = Matrix::Zero(q.rows(), v.cols());
    for (Index i = 0; i < q.rows(); ++i) {
        std::vector<double> logits(static_cast<size_t>(k.rows()));
        double top = -INFINITY;
        for (Index j = 0; j < k.rows(); ++j) {
            double dot = 0.0;
            for (Index c = 0; c < q.cols(); ++c) dot += q(i, c) * k(j, c);
            logits[static_cast<size_t>(j)] = dot * scale;
            top = std::max(top, logits[static_cast<size_t>(j)]);
        }
        double total = 0.0;
        for (double& l : logits) {
            l = std::exp(l - top);
            total += l;
        }
        for (Index j = 0; j < k.rows(); ++j) {
            for (Index c = 0; c < v.cols(); ++c) out(i, c) += logits[static_cast<size_t>(j)] / total * v(j, c);
        }
    }
    return out;
}

namespace {

Matrix multi_head(const Matrix& q, const Matrix& k, const Matrix& v, int heads) {
    const Index dh = q.cols() / heads;
    Matrix out(q.rows(), v.cols());
    for (int h = 0; h < heads; ++h) {
        out.middleCols(h * dh, dh) = attention(q.middleCols(h * dh, dh), k.middleCols(h * dh, dh),
                                               v.middleCols(h * dh, dh), 1.0 / std::sqrt(static_cast<double>(dh)));
    }
    return out;
}

Matrix self_attend(const Matrix& tokens, const AttentionWeights& w) {
    return tokens + multi_head(tokens * w.wq, tokens * w.wk, tokens * w.wv, w.heads) * w.wo;
}

// Visits every coordinate of `shape` except `axis` and the channel axis,
// gathering the tokens along `axis` for each.
Tensor along_axis(const Tensor& x, size_t axis, const AttentionWeights& w) {
    const auto& shape = x.shape();
    const size_t rank = shape.size();
    const Index c = shape.back();
    const Index len = shape[axis];
    Tensor out = x;
    std::vector<Tensor::Index> coord(rank, 0);
    while (true) {
        Matrix tokens(len, c);
        for (Index i = 0; i < len; ++i) {
            coord[axis] = i;
            for (Index ch = 0; ch < c; ++ch) {
                coord[rank - 1] = ch;
                tokens(i, ch) = x.data()[static_cast<size_t>(x.offset(coord))];
            }
        }
        const Matrix result = self_attend(tokens, w);
        for (Index i = 0; i < len; ++i) {
            coord[axis] = i;
            for (Index ch = 0; ch < c; ++ch) {
                coord[rank - 1] = ch;
                out.data()[static_cast<size_t>(x.offset(coord))] = result(i, ch);
            }
        }
        coord[axis] = 0;
        coord[rank - 1] = 0;
        // Odometer over the remaining axes.
        int d = static_cast<int>(rank) - 2;
        for (; d >= 0; --d) {
            if (static_cast<size_t>(d) == axis) continue;
            if (++coord[static_cast<size_t>(d)] < shape[static_cast<size_t>(d)]) break;
            coord[static_cast<size_t>(d)] = 0;
        }
        if (d < 0) break;
    }
    return out;
}

}  // namespace

Matrix reference_attention(const Matrix& z, const Matrix& y_ref, const AttentionWeights& w) {
    Matrix kv(z.rows() + y_ref.rows(), z.cols());
    for (Index i = 0; i < z.rows(); ++i) kv.row(i) = z.row(i);
    for (Index i = 0; i < y_ref.rows(); ++i) kv.row(z.rows() + i) = y_ref.row(i);
    const Matrix k_prime = kv * w.wk;
    const Matrix v_prime = kv * w.wv;
    return z + multi_head(z * w.wq, k_prime, v_prime, w.heads) * w.wo;
}

Tensor temporal_attention(const Tensor& x, const AttentionWeights& w) {
    if (x.rank() != 5) throw std::invalid_argument("oracle temporal_attention: rank 5 expected");
    return along_axis(x, 1, w);
}

Tensor view_attention(const Tensor& x, const AttentionWeights& w) {
    if (x.rank() != 6) throw std::invalid_argument("oracle view_attention: rank 6 expected");
    return along_axis(x, 1, w);
}

Tensor::Index contracted_index(ReshapePattern pattern, std::span<const Tensor::Index> s,
                               std::span<const Tensor::Index> x) {
    switch (pattern) {
        case ReshapePattern::MergeSpatialForTime: {
            // (b, t, h, w, c) -> row (b, h, w), position t
            const Tensor::Index row = (x[0] * s[2] + x[2]) * s[3] + x[3];
            return (row * s[1] + x[1]) * s[4] + x[4];
        }
        case ReshapePattern::MergeAllButView: {
            // (b, m, t, h, w, c) -> row (b, t, h, w), position m
            const Tensor::Index row = ((x[0] * s[2] + x[2]) * s[3] + x[3]) * s[4] + x[4];
            return (row * s[1] + x[1]) * s[5] + x[5];
        }
        case ReshapePattern::MergeViewIntoBatch: {
            const Tensor::Index bm = x[0] * s[1] + x[1];
            return (((bm * s[2] + x[2]) * s[3] + x[3]) * s[4] + x[4]) * s[5] + x[5];
        }
    }
    throw std::invalid_argument("oracle contracted_index: unknown pattern");
}

Coverage point_in_triangle(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c,
                           const Eigen::Vector2d& p, double tol) {
    const auto side = [&](const Eigen::Vector2d& u, const Eigen::Vector2d& v) {
        const Eigen::Vector2d e = v - u;
        const double len = e.norm();
        return ((p.x() - u.x()) * e.y() - (p.y() - u.y()) * e.x()) / (len > 0 ? len : 1.0);
    };
    const double s0 = side(a, b), s1 = side(b, c), s2 = side(c, a);
    if (std::abs(s0) <= tol || std::abs(s1) <= tol || std::abs(s2) <= tol) {
        // On a supporting line; only an edge if also within the other two.
        const bool neg = (s0 <= tol && s1 <= tol && s2 <= tol);
        const bool pos = (s0 >= -tol && s1 >= -tol && s2 >= -tol);
        return (neg || pos) ? Coverage::Edge : Coverage::Outside;
    }
    const bool all_pos = s0 > 0 && s1 > 0 && s2 > 0;
    const bool all_neg = s0 < 0 && s1 < 0 && s2 < 0;
    return (all_pos || all_neg) ? Coverage::Inside : Coverage::Outside;
}

std::vector<double> numeric_gradient(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> x, double h) {
    std::vector<double> probe(x.begin(), x.end());
    std::vector<double> g(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        const double keep = probe[i];
        probe[i] = keep + h;
        const double up = f(probe);
        probe[i] = keep - h;
        const double down = f(probe);
        probe[i] = keep;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

double max_relative_error(std::span<const double> analytic, std::span<const double> numeric, double floor) {
    if (analytic.size() != numeric.size()) throw std::invalid_argument("max_relative_error: length mismatch");
    double worst = 0.0;
    for (size_t i = 0; i < analytic.size(); ++i) {
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
    }
    return worst;
}

}  // namespace pkit::oracle
