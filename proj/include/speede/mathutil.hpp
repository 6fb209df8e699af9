#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <cmath>

namespace speede {

// Quaternions cross module boundaries as plain w-first 4-vectors (the PLY
// storage order); these adapters keep the Eigen x,y,z,w constructor quirk in
// one place.

inline Eigen::Quaterniond to_quat(const Eigen::Vector4d& wxyz) {
    return Eigen::Quaterniond(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
}

inline Eigen::Vector4d from_quat(const Eigen::Quaterniond& q) {
    return Eigen::Vector4d(q.w(), q.x(), q.y(), q.z());
}

inline Eigen::Matrix3d quat_to_matrix(const Eigen::Vector4d& wxyz) {
    return to_quat(wxyz).normalized().toRotationMatrix();
}

inline Eigen::Vector4d matrix_to_quat(const Eigen::Matrix3d& rot) {
    return from_quat(Eigen::Quaterniond(rot).normalized());
}

// Hamilton product a*b in w-first storage.
inline Eigen::Vector4d quat_multiply(const Eigen::Vector4d& a, const Eigen::Vector4d& b) {
    return from_quat(to_quat(a) * to_quat(b));
}

// Shortest-path spherical interpolation; u in [0, 1].
inline Eigen::Vector4d quat_slerp(const Eigen::Vector4d& a, const Eigen::Vector4d& b, double u) {
    return from_quat(to_quat(a).normalized().slerp(u, to_quat(b).normalized()));
}

// Exponential map so(3) -> SO(3) (Rodrigues).
inline Eigen::Matrix3d so3_exp(const Eigen::Vector3d& omega) {
    const double angle = omega.norm();
    if (angle < 1e-14) return Eigen::Matrix3d::Identity();
    return Eigen::AngleAxisd(angle, omega / angle).toRotationMatrix();
}

// Logarithm map SO(3) -> so(3), angle in [0, pi].
inline Eigen::Vector3d so3_log(const Eigen::Matrix3d& rot) {
    const Eigen::AngleAxisd aa(rot);
    return aa.angle() * aa.axis();
}

// Geodesic angle between two rotations, in radians.
inline double rotation_geodesic(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
    // clamp for safety against round-off pushing the trace past the valid range
    const double c = ((a.transpose() * b).trace() - 1.0) * 0.5;
    return std::acos(std::min(1.0, std::max(-1.0, c)));
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace speede
