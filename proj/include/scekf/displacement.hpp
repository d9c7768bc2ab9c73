#pragma once

// The filter's measurement stream: window displacements in the anchor-yaw
// gravity-aligned frame, with per-axis uncertainty. A ground-truth oracle
// stands in for the learned regressor; the gravity-aligned buffer assembly
// mirrors what that regressor would consume as input.

#include "scekf/imu.hpp"
#include "scekf/so3.hpp"
#include "scekf/trajectory.hpp"

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace scekf {

struct DisplacementMeasurement {
  double t_i = 0.0;           // anchor time, start of the window
  double t_j = 0.0;           // target time, end of the window
  Vec3 d = Vec3::Zero();      // m, displacement in the anchor-yaw frame
  Vec3 sigma = Vec3::Ones();  // m, per-axis standard deviation

  Mat3 covariance() const { return sigma.array().square().matrix().asDiagonal(); }
  Vec3 log_std() const { return sigma.array().log(); }

  void validate() const {
    if (!(t_j > t_i)) throw std::invalid_argument("DisplacementMeasurement: t_j must exceed t_i");
    if (!(sigma.minCoeff() > 0.0) || !sigma.allFinite() || !d.allFinite()) {
      throw std::invalid_argument("DisplacementMeasurement: sigma must be positive and finite");
    }
  }
};

enum class OracleMode { fixed_sigma, heteroscedastic };

struct OracleSpec {
  OracleMode mode = OracleMode::fixed_sigma;
  Vec3 sigma{0.051, 0.051, 0.013};       // m, per-axis noise in fixed mode
  double outlier_rate = 0.0;             // probability of an inflated draw
  double outlier_sigma_multiplier = 10.0;
  double report_cov_scale = 1.0;         // reported Sigma = this * generating Sigma

  // Heteroscedastic mode: sigma scaled by window-average speed relative to
  // speed_ref, clamped to [scale_min, scale_max].
  double speed_ref = 1.2;
  double scale_min = 0.5;
  double scale_max = 2.0;

  void validate() const {
    if (!(sigma.minCoeff() > 0.0)) throw std::invalid_argument("OracleSpec: sigma must be positive");
    if (outlier_rate < 0.0 || outlier_rate >= 1.0) {
      throw std::invalid_argument("OracleSpec: outlier_rate must be in [0,1)");
    }
    if (report_cov_scale <= 0.0) throw std::invalid_argument("OracleSpec: report_cov_scale must be positive");
  }
};

namespace detail {

inline size_t locate_sample(const std::vector<TrajectorySample>& traj, double t) {
  const size_t idx = nearest_time_index(traj, t);
  const double half_period = traj.size() > 1 ? 0.5 * (traj[1].t - traj[0].t) : 0.0;
  if (std::abs(traj[idx].t - t) > half_period + 1e-12) {
    throw std::out_of_range("displacement: timestamp outside trajectory span");
  }
  return idx;
}

inline double anchor_yaw(const TrajectorySample& s) {
  const auto e = decompose_euler_xyz(s.R);
  if (!e) throw std::runtime_error("displacement: anchor attitude at gimbal lock");
  return e->yaw;
}

}  // namespace detail

// Ground-truth displacement over [t_i, t_j], expressed in the world frame
// rotated back by the anchor's yaw. Timestamps snap to the nearest sample.
inline Vec3 true_displacement(const std::vector<TrajectorySample>& traj, double t_i, double t_j) {
  if (!(t_j > t_i)) throw std::out_of_range("displacement: t_j must exceed t_i");
  const auto& si = traj[detail::locate_sample(traj, t_i)];
  const auto& sj = traj[detail::locate_sample(traj, t_j)];
  return yaw_rotation(detail::anchor_yaw(si)).transpose() * (sj.p - si.p);
}

inline DisplacementMeasurement sample_measurement(const std::vector<TrajectorySample>& traj,
                                                  double t_i, double t_j, const OracleSpec& spec,
                                                  Rng& rng) {
  spec.validate();
  Vec3 sigma_base = spec.sigma;
  if (spec.mode == OracleMode::heteroscedastic) {
    const size_t i = detail::locate_sample(traj, t_i);
    const size_t j = detail::locate_sample(traj, t_j);
    double speed_sum = 0.0;
    for (size_t k = i; k <= j; ++k) speed_sum += traj[k].v.norm();
    const double mean_speed = speed_sum / static_cast<double>(j - i + 1);
    const double scale = std::clamp(mean_speed / spec.speed_ref, spec.scale_min, spec.scale_max);
    sigma_base *= scale;
  }

  // Outliers inflate the generating noise only; the reported sigma stays at
  // the nominal value, emulating an overconfident wrong regression.
  Vec3 sigma_gen = sigma_base;
  if (spec.outlier_rate > 0.0 && rng.uniform() < spec.outlier_rate) {
    sigma_gen *= spec.outlier_sigma_multiplier;
  }

  DisplacementMeasurement m;
  m.t_i = t_i;
  m.t_j = t_j;
  m.d = true_displacement(traj, t_i, t_j) + sigma_gen.cwiseProduct(rng.gaussian3());
  m.sigma = sigma_base * std::sqrt(spec.report_cov_scale);
  m.validate();
  return m;
}

// Sliding-window schedule: windows of fixed duration ending at the update
// times t_j = window + k/update_freq, for as long as the trajectory lasts.
inline std::vector<DisplacementMeasurement> schedule_measurements(
    const std::vector<TrajectorySample>& traj, const OracleSpec& spec, double window,
    double update_freq, Rng& rng) {
  if (!(window > 0.0) || !(update_freq > 0.0)) {
    throw std::invalid_argument("schedule_measurements: window and update_freq must be positive");
  }
  const double t0 = traj.front().t;
  const double t_end = traj.back().t;
  std::vector<DisplacementMeasurement> out;
  const double period = 1.0 / update_freq;
  for (int k = 0;; ++k) {
    const double t_j = t0 + window + k * period;
    if (t_j > t_end + 1e-9) break;
    out.push_back(sample_measurement(traj, t_j - window, t_j, spec, rng));
  }
  return out;
}

// IMU window rotated into the anchor's gravity-aligned frame: the anchor
// attitude with its yaw factor removed, composed per sample with the
// gyro-propagated rotation since the window start. Rows are (gyro, accel).
inline Eigen::Matrix<double, Eigen::Dynamic, 6> gravity_aligned_buffer(
    std::span<const ImuSample> window, const Mat3& R_anchor) {
  if (window.empty()) throw std::invalid_argument("gravity_aligned_buffer: empty window");
  const auto e = decompose_euler_xyz(R_anchor);
  if (!e) throw std::runtime_error("gravity_aligned_buffer: anchor attitude at gimbal lock");
  const Mat3 R_ga0 = yaw_rotation(e->yaw).transpose() * R_anchor;

  Eigen::Matrix<double, Eigen::Dynamic, 6> out(window.size(), 6);
  Mat3 R_rel = Mat3::Identity();
  for (size_t k = 0; k < window.size(); ++k) {
    const Mat3 R_ga = R_ga0 * R_rel;
    out.row(k).head<3>() = (R_ga * window[k].gyro).transpose();
    out.row(k).tail<3>() = (R_ga * window[k].accel).transpose();
    if (k + 1 < window.size()) {
      const double dt = window[k + 1].t - window[k].t;
      R_rel = R_rel * exp_so3(window[k].gyro * dt);
    }
  }
  return out;
}

}  // namespace scekf
