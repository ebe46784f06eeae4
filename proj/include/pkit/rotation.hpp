#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <span>

namespace pkit {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Continuous 6D rotation encoding: the first two columns of a rotation
// matrix, column-major [r00 r10 r20 r01 r11 r21].
struct Rot6d {
    Eigen::Matrix<double, 6, 1> values = (Eigen::Matrix<double, 6, 1>() << 1, 0, 0, 0, 1, 0).finished();

    static Rot6d from(std::span<const double> six);
};

// Decodes with Gram-Schmidt, so any finite input with a non-vanishing first
// column yields a proper rotation. Throws std::invalid_argument if the first
// column has norm < 1e-12.
Mat3 rot6d_to_matrix(const Rot6d& r);
Rot6d matrix_to_rot6d(const Mat3& rot);

// Rodrigues formula; switches to the second-order series below 1e-8 rad.
Mat3 axis_angle_to_matrix(const Vec3& axis_angle);
Vec3 matrix_to_axis_angle(const Mat3& rot);

// Intrinsic yaw (Y) - pitch (X) - roll (Z): R = Ry(yaw) * Rx(pitch) * Rz(roll).
struct EulerYXZ {
    double yaw = 0.0;
    double pitch = 0.0;
    double roll = 0.0;
};

Mat3 euler_yxz_to_matrix(const EulerYXZ& e);
EulerYXZ matrix_to_euler_yxz(const Mat3& rot);

}  // namespace pkit
