#pragma once

// Rotation utilities: exponential/logarithm maps on SO(3), the right Jacobian,
// and the extrinsic-XYZ Euler machinery used by the gravity-aligned
// measurement frame. All rotation vectors are plain Eigen::Vector3d in
// radians; all rotation matrices are assumed orthonormal with det +1.

#include <Eigen/Dense>

#include <cmath>
#include <optional>

namespace scekf {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = 3.141592653589793238462643383279502884;

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
      -v.y(), v.x(), 0.0;
  return m;
}

// Inverse of skew() on the antisymmetric part of m.
inline Vec3 unskew(const Mat3& m) {
  return Vec3(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1)) * 0.5;
}

// Rodrigues formula. Below theta = 1e-6 the sin(t)/t and (1-cos(t))/t^2
// coefficients switch to their second-order Taylor expansions; the truncation
// error there is below 1e-25, far under double roundoff.
inline Mat3 exp_so3(const Vec3& theta) {
  const double t2 = theta.squaredNorm();
  const double t = std::sqrt(t2);
  double a, b;
  if (t < 1e-6) {
    a = 1.0 - t2 / 6.0;
    b = 0.5 - t2 / 24.0;
  } else {
    a = std::sin(t) / t;
    b = (1.0 - std::cos(t)) / t2;
  }
  const Mat3 s = skew(theta);
  return Mat3::Identity() + a * s + b * (s * s);
}

// Principal-branch logarithm, |result| <= pi. Three regimes:
//   small angles     : series on the antisymmetric part,
//   generic angles   : atan2 of the antisymmetric/symmetric decomposition,
//   angles near pi   : axis recovered from the symmetric part (the
//                      antisymmetric part degenerates there), with the sign
//                      taken from the antisymmetric residual. At exactly pi
//                      both +-axis are valid; the first nonzero component of
//                      the axis is made positive so the choice is stable.
inline Vec3 log_so3(const Mat3& R) {
  const Vec3 w = unskew(R);       // sin(t) * axis
  const double s = w.norm();
  const double c = (R.trace() - 1.0) * 0.5;
  const double t = std::atan2(s, c);

  if (t < 1e-6) {
    // log(R) ~ w * (1 + t^2/6); with t < 1e-6 the correction is < 1e-12
    // relative and the series below keeps full precision.
    return w * (1.0 + t * t / 6.0);
  }
  if (t < kPi - 1e-4) {
    return w * (t / s);
  }

  // Near pi: R + R^T = 2(I + (c - 1)(I - u u^T)) gives the axis direction.
  const Mat3 outer = Mat3::Identity() + (0.5 * (R + R.transpose()) - Mat3::Identity()) / (1.0 - c);
  int k = 0;
  outer.diagonal().maxCoeff(&k);
  Vec3 axis = outer.col(k) / std::sqrt(outer(k, k));
  if (s > 1e-12) {
    if (axis.dot(w) < 0.0) axis = -axis;
  } else {
    for (int i = 0; i < 3; ++i) {
      if (std::abs(axis[i]) > 1e-12) {
        if (axis[i] < 0.0) axis = -axis;
        break;
      }
    }
  }
  return axis * t;
}

// Right Jacobian of the exponential map: exp(theta + d) ~ exp(theta) exp(Jr(theta) d).
inline Mat3 right_jacobian(const Vec3& theta) {
  const double t2 = theta.squaredNorm();
  const Mat3 s = skew(theta);
  if (t2 < 1e-12) {
    return Mat3::Identity() - 0.5 * s + (s * s) / 6.0;
  }
  const double t = std::sqrt(t2);
  const double a = (1.0 - std::cos(t)) / t2;
  const double b = (t - std::sin(t)) / (t2 * t);
  return Mat3::Identity() - a * s + b * (s * s);
}

inline bool is_rotation(const Mat3& R, double tol = 1e-9) {
  return (R * R.transpose() - Mat3::Identity()).norm() < tol &&
         std::abs(R.determinant() - 1.0) < tol;
}

inline Mat3 yaw_rotation(double yaw) {
  const double c = std::cos(yaw), s = std::sin(yaw);
  Mat3 R;
  R << c, -s, 0.0,
       s, c, 0.0,
       0.0, 0.0, 1.0;
  return R;
}

inline Mat3 pitch_rotation(double pitch) {
  const double c = std::cos(pitch), s = std::sin(pitch);
  Mat3 R;
  R << c, 0.0, s,
       0.0, 1.0, 0.0,
       -s, 0.0, c;
  return R;
}

inline Mat3 roll_rotation(double roll) {
  const double c = std::cos(roll), s = std::sin(roll);
  Mat3 R;
  R << 1.0, 0.0, 0.0,
       0.0, c, -s,
       0.0, s, c;
  return R;
}

// Extrinsic-XYZ factorization R = Rz(yaw) Ry(pitch) Rx(roll).
struct EulerXYZ {
  double roll = 0.0;
  double pitch = 0.0;
  double yaw = 0.0;
};

inline Mat3 euler_to_rotation(const EulerXYZ& e) {
  return yaw_rotation(e.yaw) * pitch_rotation(e.pitch) * roll_rotation(e.roll);
}

// Fails (nullopt) within gimbal_tol of pitch = +-pi/2, where yaw and roll are
// not separable. pitch is confined to [-pi/2, pi/2] by the asin branch.
inline std::optional<EulerXYZ> decompose_euler_xyz(const Mat3& R, double gimbal_tol = 1e-6) {
  const double sp = -R(2, 0);
  if (1.0 - std::abs(sp) <= gimbal_tol) return std::nullopt;
  EulerXYZ e;
  e.pitch = std::asin(sp);
  e.roll = std::atan2(R(2, 1), R(2, 2));
  e.yaw = std::atan2(R(1, 0), R(0, 0));
  return e;
}

// Maps extrinsic-XYZ Euler angle rates, ordered (yaw, pitch, roll), to the
// world-frame angular velocity. Columns are the world-frame axes each angle
// rotates about: z for yaw, the yaw-rotated y for pitch, the yaw- and
// pitch-rotated x for roll. det = -cos(pitch), so the map degenerates exactly
// at the gimbal-lock configurations.
inline Mat3 euler_rate_matrix(double yaw, double pitch) {
  const double cy = std::cos(yaw), sy = std::sin(yaw);
  const double cp = std::cos(pitch), sp = std::sin(pitch);
  Mat3 H;
  H << 0.0, -sy, cy * cp,
       0.0, cy, sy * cp,
       1.0, 0.0, -sp;
  return H;
}

inline std::optional<Mat3> euler_rate_matrix_inverse(double yaw, double pitch,
                                                     double gimbal_tol = 1e-6) {
  const double cp = std::cos(pitch);
  if (std::abs(cp) <= gimbal_tol) return std::nullopt;
  const double cy = std::cos(yaw), sy = std::sin(yaw);
  const double tp = std::tan(pitch);
  Mat3 Hinv;
  Hinv << cy * tp, sy * tp, 1.0,
          -sy, cy, 0.0,
          cy / cp, sy / cp, 0.0;
  return Hinv;
}

// First-order map from a world-frame attitude error vector to the error of
// the yaw angle in the factorization R = Rz(yaw) Ry(pitch) Rx(roll): only the
// last row of the inverse Euler rate matrix, placed in the z slot so the
// result composes with yaw_rotation() error vectors directly.
inline std::optional<Mat3> yaw_error_projection(double yaw, double pitch,
                                                double gimbal_tol = 1e-6) {
  const double cp = std::cos(pitch);
  if (std::abs(cp) <= gimbal_tol) return std::nullopt;
  const double tp = std::tan(pitch);
  Mat3 P = Mat3::Zero();
  P(2, 0) = std::cos(yaw) * tp;
  P(2, 1) = std::sin(yaw) * tp;
  P(2, 2) = 1.0;
  return P;
}

inline double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a < 0.0) a += 2.0 * kPi;
  return a - kPi;
}

}  // namespace scekf
