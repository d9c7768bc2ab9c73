#pragma once

// IMU sensor error model: additive bias plus white noise on each sample, and
// a per-sample random walk on the biases. All noise magnitudes are discrete
// per-sample standard deviations; any conversion from continuous-time
// densities is the caller's job.

#include "scekf/so3.hpp"

#include <random>
#include <utility>

namespace scekf {

inline const Vec3 kGravity{0.0, 0.0, -9.81};

struct ImuSample {
  double t = 0.0;
  Vec3 gyro = Vec3::Zero();   // rad/s, body frame
  Vec3 accel = Vec3::Zero();  // m/s^2, body frame, specific force
};

struct ImuNoiseSpec {
  double sigma_g = 1e-3;     // gyro white noise, rad/s per sample
  double sigma_a = 1e-2;     // accel white noise, m/s^2 per sample
  double sigma_bg_rw = 1e-5; // gyro bias random-walk step, rad/s
  double sigma_ba_rw = 1e-4; // accel bias random-walk step, m/s^2
  double dt = 0.005;         // sampling period, s
};

struct BiasState {
  Vec3 gyro = Vec3::Zero();
  Vec3 accel = Vec3::Zero();
};

// Thin wrapper so every consumer draws from the same engine type and the
// whole pipeline stays reproducible from a single integer seed.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  double gaussian() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  Vec3 gaussian3() { return Vec3(gaussian(), gaussian(), gaussian()); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

// What an ideal IMU reports given true kinematics: body angular rate and
// specific force (world acceleration minus gravity, rotated to body frame).
inline std::pair<Vec3, Vec3> true_imu_from_kinematics(const Mat3& R, const Vec3& a_world,
                                                      const Vec3& omega_body,
                                                      const Vec3& g = kGravity) {
  return {omega_body, R.transpose() * (a_world - g)};
}

struct CorruptedSample {
  ImuSample sample;
  BiasState bias;  // bias state advanced by one random-walk step
};

inline CorruptedSample corrupt(const ImuSample& truth, const BiasState& bias,
                               const ImuNoiseSpec& spec, Rng& rng) {
  CorruptedSample out;
  out.sample.t = truth.t;
  out.sample.gyro = truth.gyro + bias.gyro + spec.sigma_g * rng.gaussian3();
  out.sample.accel = truth.accel + bias.accel + spec.sigma_a * rng.gaussian3();
  out.bias.gyro = bias.gyro + spec.sigma_bg_rw * rng.gaussian3();
  out.bias.accel = bias.accel + spec.sigma_ba_rw * rng.gaussian3();
  return out;
}

}  // namespace scekf
