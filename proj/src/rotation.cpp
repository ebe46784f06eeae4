#include "pkit/rotation.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <stdexcept>

namespace pkit {

namespace {

constexpr double kSmallAngle = 1e-8;

Mat3 skew(const Vec3& v) {
    Mat3 k;
    k << 0.0, -v.z(), v.y(),
         v.z(), 0.0, -v.x(),
         -v.y(), v.x(), 0.0;
    return k;
}

}  // namespace

Rot6d Rot6d::from(std::span<const double> six) {
    if (six.size() != 6) {
        throw std::invalid_argument("Rot6d: expected 6 values, got " + std::to_string(six.size()));
    }
    Rot6d r;
    for (int i = 0; i < 6; ++i) r.values[i] = six[static_cast<size_t>(i)];
    return r;
}

Mat3 rot6d_to_matrix(const Rot6d& r) {
    const Vec3 a1 = r.values.head<3>();
    const Vec3 a2 = r.values.tail<3>();
    const double n1 = a1.norm();
    if (!(n1 >= 1e-12)) {
        throw std::invalid_argument("rot6d_to_matrix: first column is (near) zero");
    }
    const Vec3 b1 = a1 / n1;
    Vec3 b2 = a2 - b1.dot(a2) * b1;
    double n2 = b2.norm();
    if (!(n2 >= 1e-12)) {
        // Second column parallel to the first: complete with the axis least
        // aligned with b1.
        Eigen::Index axis = 0;
        b1.cwiseAbs().minCoeff(&axis);
        const Vec3 e = Vec3::Unit(axis);
        b2 = e - b1.dot(e) * b1;
        n2 = b2.norm();
    }
    b2 /= n2;
    Mat3 rot;
    rot.col(0) = b1;
    rot.col(1) = b2;
    rot.col(2) = b1.cross(b2);
    return rot;
}

Rot6d matrix_to_rot6d(const Mat3& rot) {
    Rot6d r;
    r.values.head<3>() = rot.col(0);
    r.values.tail<3>() = rot.col(1);
    return r;
}

Mat3 axis_angle_to_matrix(const Vec3& axis_angle) {
    const double angle = axis_angle.norm();
    const Mat3 k = skew(axis_angle);
    if (angle < kSmallAngle) {
        return Mat3::Identity() + k + 0.5 * k * k;
    }
    const double s = std::sin(angle) / angle;
    const double c = (1.0 - std::cos(angle)) / (angle * angle);
    return Mat3::Identity() + s * k + c * k * k;
}

Vec3 matrix_to_axis_angle(const Mat3& rot) {
    Eigen::Quaterniond q(rot);
    q.normalize();
    if (q.w() < 0.0) q.coeffs() = -q.coeffs();
    const double vn = q.vec().norm();
    if (vn < kSmallAngle) {
        return 2.0 * q.vec();
    }
    const double angle = 2.0 * std::atan2(vn, q.w());
    return q.vec() * (angle / vn);
}

Mat3 euler_yxz_to_matrix(const EulerYXZ& e) {
    return (Eigen::AngleAxisd(e.yaw, Vec3::UnitY()) *
            Eigen::AngleAxisd(e.pitch, Vec3::UnitX()) *
            Eigen::AngleAxisd(e.roll, Vec3::UnitZ()))
        .toRotationMatrix();
}

EulerYXZ matrix_to_euler_yxz(const Mat3& rot) {
    // R = Ry Rx Rz:  R(1,2) = -sin(pitch), R(0,2)/R(2,2) = tan(yaw),
    // R(1,0)/R(1,1) = tan(roll).
    EulerYXZ e;
    e.pitch = std::asin(std::clamp(-rot(1, 2), -1.0, 1.0));
    e.yaw = std::atan2(rot(0, 2), rot(2, 2));
    e.roll = std::atan2(rot(1, 0), rot(1, 1));
    return e;
}

}  // namespace pkit
