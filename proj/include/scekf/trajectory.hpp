#pragma once

// Analytic ground-truth trajectories for pedestrian-style motion, and
// derivation of the ideal IMU stream a sensor on that trajectory would have
// produced. Positions and velocities come from closed-form expressions, so
// there is no discretization error at the source; the IMU derivation is the
// exact inverse of the discrete strapdown integrator used by the filter.

#include "scekf/imu.hpp"
#include "scekf/so3.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace scekf {

struct TrajectorySample {
  double t = 0.0;
  Mat3 R = Mat3::Identity();  // world from body
  Vec3 p = Vec3::Zero();      // m, world
  Vec3 v = Vec3::Zero();      // m/s, world
};

enum class MotionKind { standstill, straight_walk, circle_walk, stair_climb, figure_eight };

struct MotionProfile {
  MotionKind kind = MotionKind::circle_walk;
  double speed = 1.2;           // m/s along the path (horizontal for stairs)
  double radius = 5.0;          // m, circle radius / figure-eight half-width
  double slope = 0.3;           // rise over run for stair_climb
  double duration = 60.0;       // s
  double rate = 200.0;          // Hz
  double heading_offset = 0.0;  // device yaw relative to travel direction, rad
  double sway_roll_amp = 0.0;   // rad, sinusoidal roll sway
  double sway_pitch_amp = 0.0;  // rad, sinusoidal pitch sway (|.| <= 0.3)
  double sway_freq = 1.8;       // Hz
  Vec3 start = Vec3::Zero();
};

inline void validate(const MotionProfile& profile) {
  if (!(profile.duration > 0.0)) throw std::invalid_argument("MotionProfile: duration must be positive");
  if (!(profile.rate > 0.0)) throw std::invalid_argument("MotionProfile: rate must be positive");
  if (profile.speed < 0.0) throw std::invalid_argument("MotionProfile: speed must be nonnegative");
  if ((profile.kind == MotionKind::circle_walk || profile.kind == MotionKind::figure_eight) &&
      !(profile.radius > 0.0)) {
    throw std::invalid_argument("MotionProfile: radius must be positive");
  }
  if (std::abs(profile.sway_pitch_amp) > 0.3 || std::abs(profile.sway_roll_amp) > 0.3) {
    throw std::invalid_argument("MotionProfile: sway amplitude exceeds 0.3 rad");
  }
  if (!std::isfinite(profile.slope)) throw std::invalid_argument("MotionProfile: slope must be finite");
}

// Closed-form evaluation at an arbitrary time. Yaw tracks the travel
// direction plus heading_offset; roll/pitch carry the optional sway.
inline TrajectorySample sample_profile(const MotionProfile& profile, double t) {
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  double travel_heading = 0.0;

  switch (profile.kind) {
    case MotionKind::standstill:
      break;
    case MotionKind::straight_walk:
      p = Vec3(profile.speed * t, 0.0, 0.0);
      v = Vec3(profile.speed, 0.0, 0.0);
      break;
    case MotionKind::circle_walk: {
      const double omega = profile.speed / profile.radius;
      const double a = omega * t;
      p = profile.radius * Vec3(std::sin(a), 1.0 - std::cos(a), 0.0);
      v = profile.speed * Vec3(std::cos(a), std::sin(a), 0.0);
      travel_heading = a;
      break;
    }
    case MotionKind::stair_climb: {
      // Constant horizontal speed up a constant grade.
      const Vec3 dir(1.0, 0.0, profile.slope);
      p = profile.speed * t * dir;
      v = profile.speed * dir;
      break;
    }
    case MotionKind::figure_eight: {
      // Lissajous 1:2 figure; the speed never reaches zero on this shape.
      const double a = profile.radius;
      const double b = 0.5 * profile.radius;
      const double omega = profile.speed / profile.radius;
      p = Vec3(a * std::sin(omega * t), b * std::sin(2.0 * omega * t), 0.0);
      v = Vec3(a * omega * std::cos(omega * t), 2.0 * b * omega * std::cos(2.0 * omega * t), 0.0);
      travel_heading = std::atan2(v.y(), v.x());
      break;
    }
  }

  const double phase = 2.0 * kPi * profile.sway_freq * t;
  EulerXYZ e;
  e.roll = profile.sway_roll_amp * std::sin(phase);
  e.pitch = profile.sway_pitch_amp * std::cos(phase);
  e.yaw = travel_heading + profile.heading_offset;

  TrajectorySample s;
  s.t = t;
  s.p = profile.start + p;
  s.v = v;
  s.R = euler_to_rotation(e);
  return s;
}

inline std::vector<TrajectorySample> generate(const MotionProfile& profile) {
  validate(profile);
  const auto count = static_cast<size_t>(std::llround(profile.duration * profile.rate));
  if (count < 2) throw std::invalid_argument("MotionProfile: fewer than two samples");
  std::vector<TrajectorySample> traj;
  traj.reserve(count);
  for (size_t k = 0; k < count; ++k) {
    traj.push_back(sample_profile(profile, static_cast<double>(k) / profile.rate));
  }
  return traj;
}

// Index of the sample whose timestamp is closest to t. Works on any
// time-ordered sequence of records carrying a `t` field.
template <class Sample>
size_t nearest_time_index(const std::vector<Sample>& seq, double t) {
  if (seq.empty()) throw std::out_of_range("nearest_time_index: empty sequence");
  const auto it = std::lower_bound(seq.begin(), seq.end(), t,
                                   [](const Sample& s, double val) { return s.t < val; });
  if (it == seq.begin()) return 0;
  if (it == seq.end()) return seq.size() - 1;
  const size_t hi = static_cast<size_t>(it - seq.begin());
  return (t - seq[hi - 1].t) <= (seq[hi].t - t) ? hi - 1 : hi;
}

// Inverts the discrete strapdown step between consecutive samples, so that
// re-integrating the output with the filter's propagation model reproduces
// the rotations and velocities exactly and the positions to within the
// trapezoid-vs-rectangle quadrature residual (micrometres over a minute).
// The final sample repeats the previous rates to keep the streams aligned.
inline std::vector<ImuSample> derive_imu(const std::vector<TrajectorySample>& traj,
                                         const Vec3& g = kGravity) {
  if (traj.size() < 2) throw std::invalid_argument("derive_imu: need at least two samples");
  std::vector<ImuSample> imu(traj.size());
  for (size_t k = 0; k + 1 < traj.size(); ++k) {
    const double dt = traj[k + 1].t - traj[k].t;
    if (!(dt > 0.0)) throw std::invalid_argument("derive_imu: timestamps must increase");
    imu[k].t = traj[k].t;
    imu[k].gyro = log_so3(traj[k].R.transpose() * traj[k + 1].R) / dt;
    imu[k].accel = traj[k].R.transpose() * ((traj[k + 1].v - traj[k].v) / dt - g);
  }
  imu.back() = imu[imu.size() - 2];
  imu.back().t = traj.back().t;
  return imu;
}

}  // namespace scekf
