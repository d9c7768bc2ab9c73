#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "scekf/displacement.hpp"
#include "scekf/imu.hpp"
#include "scekf/so3.hpp"
#include "scekf/trajectory.hpp"

namespace scekf {

// Attitude-only complementary filter: gyro integration plus a proportional
// roll/pitch correction toward the accelerometer gravity direction. Yaw is
// never corrected; it drifts with the gyro, which is exactly the weakness the
// displacement-concatenation baseline inherits.
struct AhrsState {
  double t = 0.0;
  Mat3 R = Mat3::Identity();
};

struct BaselineConfig {
  double accel_gain = 0.005;      // fraction of the tilt error removed per step
  bool scale_overlapping = true;  // scale displacements by step/window overlap
  double window = 1.0;            // oracle window duration, seconds
};

inline AhrsState ahrs_step(const AhrsState& state, const ImuSample& s, double dt,
                           double accel_gain) {
  if (dt <= 0.0) throw std::invalid_argument("ahrs_step: dt must be positive");
  if (accel_gain < 0.0 || accel_gain >= 1.0)
    throw std::invalid_argument("ahrs_step: accel_gain must be in [0, 1)");
  AhrsState out;
  out.t = state.t + dt;
  out.R = state.R * exp_so3(s.gyro * dt);

  // At low dynamics the specific force points opposite gravity, so its world
  // image should be +z. Rotate a fraction of the tilt error back; the
  // correction axis u x z is horizontal, leaving yaw untouched.
  const double norm = s.accel.norm();
  if (norm < 1e-9 || accel_gain == 0.0) return out;
  const Vec3 up = out.R * (s.accel / norm);
  const Vec3 axis = up.cross(Vec3::UnitZ());
  const double axis_norm = axis.norm();
  if (axis_norm < 1e-12) return out;
  const double angle = std::atan2(axis_norm, up.z());
  out.R = exp_so3(accel_gain * angle * (axis / axis_norm)) * out.R;
  return out;
}

// Position by chaining oracle displacements in the AHRS yaw frame. Overlapping
// windows (measurement period shorter than the window) integrate like average
// velocity: each displacement is scaled by the time advanced since the last
// one, capped at a full window.
struct BaselineResult {
  std::vector<AhrsState> attitude;            // one per IMU sample, plus init
  std::vector<TrajectorySample> trajectory;   // aligned with attitude
};

inline BaselineResult run_baseline(std::span<const ImuSample> imu,
                                   std::span<const DisplacementMeasurement> meas,
                                   const Mat3& init_R, const Vec3& init_p,
                                   const BaselineConfig& config = {}) {
  if (imu.empty()) throw std::invalid_argument("run_baseline: empty IMU stream");
  for (size_t k = 1; k < imu.size(); ++k) {
    if (imu[k].t <= imu[k - 1].t)
      throw std::invalid_argument("run_baseline: IMU timestamps must increase");
  }

  BaselineResult result;
  result.attitude.reserve(imu.size() + 1);
  result.attitude.push_back({imu[0].t, init_R});
  for (size_t k = 0; k < imu.size(); ++k) {
    const double dt = k + 1 < imu.size() ? imu[k + 1].t - imu[k].t
                                         : (k > 0 ? imu[k].t - imu[k - 1].t : 1e-3);
    result.attitude.push_back(ahrs_step(result.attitude.back(), imu[k], dt,
                                        config.accel_gain));
  }

  // Concatenation knots: (time, position) advanced once per measurement.
  std::vector<std::pair<double, Vec3>> knots;
  knots.emplace_back(imu[0].t, init_p);
  double prev_t = imu[0].t;
  for (const auto& m : meas) {
    m.validate();
    const size_t idx = nearest_time_index(result.attitude, m.t_i);
    const auto euler = decompose_euler_xyz(result.attitude[idx].R);
    if (!euler)
      throw std::runtime_error("run_baseline: attitude gimbal locked at measurement anchor");
    double scale = 1.0;
    if (config.scale_overlapping) {
      scale = std::min((m.t_j - prev_t) / config.window, 1.0);
      if (scale <= 0.0) continue;
    }
    knots.emplace_back(m.t_j, knots.back().second +
                                  scale * (yaw_rotation(euler->yaw) * m.d));
    prev_t = m.t_j;
  }

  // Sample the piecewise-linear knot chain at IMU timestamps.
  result.trajectory.resize(result.attitude.size());
  size_t seg = 0;
  for (size_t k = 0; k < result.attitude.size(); ++k) {
    const double t = result.attitude[k].t;
    while (seg + 1 < knots.size() && knots[seg + 1].first <= t) ++seg;
    TrajectorySample& out = result.trajectory[k];
    out.t = t;
    out.R = result.attitude[k].R;
    out.v.setZero();
    if (seg + 1 < knots.size() && t > knots[seg].first) {
      const double a = (t - knots[seg].first) / (knots[seg + 1].first - knots[seg].first);
      out.p = (1.0 - a) * knots[seg].second + a * knots[seg + 1].second;
    } else {
      out.p = knots[seg].second;
    }
  }
  return result;
}

}  // namespace scekf
