#pragma once

// Stochastic-cloning error-state EKF over (attitude, velocity, position,
// gyro bias, accel bias) with a sliding window of pose clones. Measurements
// are relative displacements between a past clone and the current state,
// expressed in the anchor's gravity-aligned (yaw-removed) frame.
//
// Error-state convention, used consistently everywhere:
//   vector states:  dx = x_true - x_estimate
//   rotations:      R_true = exp_so3(theta_err) * R_estimate   (world frame)
//
// Covariance block order: clone 1 [theta(3), p(3)], ..., clone m, then the
// current state [theta(3), v(3), p(3), b_g(3), b_a(3)].

#include "scekf/displacement.hpp"
#include "scekf/imu.hpp"
#include "scekf/so3.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

namespace scekf {

inline constexpr int kNavDim = 15;
inline constexpr int kCloneDim = 6;

// Offsets of the error sub-blocks within the current-state block.
inline constexpr int kErrTheta = 0;
inline constexpr int kErrVel = 3;
inline constexpr int kErrPos = 6;
inline constexpr int kErrBg = 9;
inline constexpr int kErrBa = 12;

using Mat15 = Eigen::Matrix<double, 15, 15>;
using Mat15x6 = Eigen::Matrix<double, 15, 6>;
using Vec15 = Eigen::Matrix<double, 15, 1>;
using Mat12 = Eigen::Matrix<double, 12, 12>;

struct NavState {
  double t = 0.0;
  Mat3 R = Mat3::Identity();
  Vec3 v = Vec3::Zero();
  Vec3 p = Vec3::Zero();
  Vec3 b_g = Vec3::Zero();
  Vec3 b_a = Vec3::Zero();
};

struct CloneState {
  double t = 0.0;
  Mat3 R = Mat3::Identity();
  Vec3 p = Vec3::Zero();
};

struct FilterConfig {
  Vec3 gravity = kGravity;
  ImuNoiseSpec noise;
  double chi2_threshold = 11.345;  // 99th percentile of chi-square(3)
  double meas_cov_scale = 10.0;    // inflation of the reported measurement cov
  double update_freq = 20.0;       // Hz, clone/update cadence
  double window = 1.0;             // s, displacement window length
  double gimbal_tol = 1e-6;

  // Initial marginal standard deviations.
  double init_sigma_v = 0.1;                   // m/s
  double init_sigma_ba = 0.2;                  // m/s^2
  double init_sigma_bg = 1e-4;                 // rad/s
  Vec3 init_sigma_theta_deg{10.0, 10.0, 0.1};  // roll, pitch, yaw
  double init_sigma_p = 1e-6;                  // m, near-exact start position
};

struct FilterState {
  std::vector<CloneState> clones;
  NavState nav;
  Eigen::MatrixXd P;

  int nav_offset() const { return kCloneDim * static_cast<int>(clones.size()); }
  int dim() const { return nav_offset() + kNavDim; }
};

inline FilterState initialize(const FilterConfig& config, const NavState& init_nav) {
  FilterState st;
  st.nav = init_nav;
  st.P = Eigen::MatrixXd::Zero(kNavDim, kNavDim);
  const Vec3 sigma_theta = config.init_sigma_theta_deg * kPi / 180.0;
  st.P.block<3, 3>(kErrTheta, kErrTheta) = sigma_theta.array().square().matrix().asDiagonal();
  st.P.block<3, 3>(kErrVel, kErrVel) =
      Mat3::Identity() * config.init_sigma_v * config.init_sigma_v;
  st.P.block<3, 3>(kErrPos, kErrPos) =
      Mat3::Identity() * config.init_sigma_p * config.init_sigma_p;
  st.P.block<3, 3>(kErrBg, kErrBg) =
      Mat3::Identity() * config.init_sigma_bg * config.init_sigma_bg;
  st.P.block<3, 3>(kErrBa, kErrBa) =
      Mat3::Identity() * config.init_sigma_ba * config.init_sigma_ba;
  return st;
}

inline NavState propagate_mean(const NavState& nav, const ImuSample& s, double dt,
                               const Vec3& g = kGravity) {
  const Vec3 accel_world = nav.R * (s.accel - nav.b_a);
  NavState out = nav;
  out.t = nav.t + dt;
  out.R = nav.R * exp_so3((s.gyro - nav.b_g) * dt);
  out.v = nav.v + g * dt + accel_world * dt;
  out.p = nav.p + nav.v * dt + 0.5 * dt * dt * (g + accel_world);
  return out;
}

struct PropagationJacobians {
  Mat15 A;    // error-state transition
  Mat15x6 B;  // white-noise input (gyro, accel)
  Mat15x6 C;  // bias random-walk input (gyro walk, accel walk)
};

inline PropagationJacobians propagation_jacobians(const NavState& nav, const ImuSample& s,
                                                  double dt) {
  const Vec3 w = (s.gyro - nav.b_g) * dt;
  const Mat3 R_next = nav.R * exp_so3(w);
  const Mat3 gyro_gain = R_next * right_jacobian(w) * dt;
  const Mat3 accel_skew = skew(nav.R * (s.accel - nav.b_a));

  PropagationJacobians j;
  j.A.setIdentity();
  j.A.block<3, 3>(kErrTheta, kErrBg) = -gyro_gain;
  j.A.block<3, 3>(kErrVel, kErrTheta) = -accel_skew * dt;
  j.A.block<3, 3>(kErrVel, kErrBa) = -nav.R * dt;
  j.A.block<3, 3>(kErrPos, kErrTheta) = -0.5 * accel_skew * dt * dt;
  j.A.block<3, 3>(kErrPos, kErrVel) = Mat3::Identity() * dt;
  j.A.block<3, 3>(kErrPos, kErrBa) = -0.5 * nav.R * dt * dt;

  j.B.setZero();
  j.B.block<3, 3>(kErrTheta, 0) = gyro_gain;
  j.B.block<3, 3>(kErrVel, 3) = nav.R * dt;
  j.B.block<3, 3>(kErrPos, 3) = 0.5 * nav.R * dt * dt;

  j.C.setZero();
  j.C.block<3, 3>(kErrBg, 0) = Mat3::Identity();
  j.C.block<3, 3>(kErrBa, 3) = Mat3::Identity();
  return j;
}

// 12x12 process noise: white gyro/accel noise, then the bias walk steps.
inline Mat12 noise_covariance(const ImuNoiseSpec& spec) {
  Mat12 W = Mat12::Zero();
  W.diagonal().segment<3>(0).setConstant(spec.sigma_g * spec.sigma_g);
  W.diagonal().segment<3>(3).setConstant(spec.sigma_a * spec.sigma_a);
  W.diagonal().segment<3>(6).setConstant(spec.sigma_bg_rw * spec.sigma_bg_rw);
  W.diagonal().segment<3>(9).setConstant(spec.sigma_ba_rw * spec.sigma_ba_rw);
  return W;
}

// One exact covariance propagation step. The full transition is block
// diagonal (identity over the clones), so only the current-state block and
// the clone/current cross block change.
inline void propagate_covariance(Eigen::MatrixXd& P, const PropagationJacobians& jac,
                                 const Mat12& W, int nav_offset) {
  if (P.rows() != nav_offset + kNavDim || P.cols() != P.rows()) {
    throw std::invalid_argument("propagate_covariance: dimension mismatch");
  }
  Eigen::Matrix<double, 15, 12> BC;
  BC << jac.B, jac.C;
  const int o = nav_offset;
  if (o > 0) {
    P.block(0, o, o, kNavDim) = P.block(0, o, o, kNavDim) * jac.A.transpose();
    P.block(o, 0, kNavDim, o) = P.block(0, o, o, kNavDim).transpose();
  }
  const Mat15 nav_block = jac.A * P.block(o, o, kNavDim, kNavDim) * jac.A.transpose() +
                          BC * W * BC.transpose();
  P.block(o, o, kNavDim, kNavDim) = 0.5 * (nav_block + nav_block.transpose());
}

// Cost-deferred variant used by the run loop: the current-state block is
// propagated every step, while the clone/current cross block is touched only
// at flush points (clone ops and updates), using the accumulated transition.
// Algebraically identical to calling propagate_covariance per step.
class DeferredCovPropagator {
 public:
  void step(Eigen::MatrixXd& P, const PropagationJacobians& jac, const Mat12& W,
            int nav_offset) {
    Eigen::Matrix<double, 15, 12> BC;
    BC << jac.B, jac.C;
    const int o = nav_offset;
    const Mat15 nav_block = jac.A * P.block(o, o, kNavDim, kNavDim) * jac.A.transpose() +
                            BC * W * BC.transpose();
    P.block(o, o, kNavDim, kNavDim) = 0.5 * (nav_block + nav_block.transpose());
    acc_ = jac.A * acc_;
    pending_ = true;
  }

  void flush(Eigen::MatrixXd& P, int nav_offset) {
    if (!pending_) return;
    const int o = nav_offset;
    if (o > 0) {
      P.block(0, o, o, kNavDim) = P.block(0, o, o, kNavDim) * acc_.transpose();
      P.block(o, 0, kNavDim, o) = P.block(0, o, o, kNavDim).transpose();
    }
    acc_.setIdentity();
    pending_ = false;
  }

 private:
  Mat15 acc_ = Mat15::Identity();
  bool pending_ = false;
};

// Append a clone of the current pose. In error space this is a copy of the
// current attitude/position error rows, which makes the new clone perfectly
// correlated with the current state at creation.
inline void augment(FilterState& st) {
  const int o = st.nav_offset();
  const int d = st.dim();
  st.clones.push_back({st.nav.t, st.nav.R, st.nav.p});

  std::vector<int> idx(d + kCloneDim);
  for (int r = 0; r < o; ++r) idx[r] = r;
  const int pick[kCloneDim] = {o + kErrTheta, o + kErrTheta + 1, o + kErrTheta + 2,
                               o + kErrPos, o + kErrPos + 1, o + kErrPos + 2};
  for (int r = 0; r < kCloneDim; ++r) idx[o + r] = pick[r];
  for (int r = 0; r < kNavDim; ++r) idx[o + kCloneDim + r] = o + r;

  Eigen::MatrixXd grown(d + kCloneDim, d + kCloneDim);
  for (int r = 0; r < d + kCloneDim; ++r) {
    for (int c = 0; c < d + kCloneDim; ++c) grown(r, c) = st.P(idx[r], idx[c]);
  }
  st.P = std::move(grown);
}

// Drop every clone older than horizon_t. Gaussian marginalization of jointly
// Gaussian blocks is plain row/column removal.
inline void marginalize(FilterState& st, double horizon_t) {
  std::vector<int> keep_rows;
  std::vector<CloneState> kept;
  keep_rows.reserve(st.dim());
  for (size_t k = 0; k < st.clones.size(); ++k) {
    if (st.clones[k].t >= horizon_t) {
      kept.push_back(st.clones[k]);
      for (int r = 0; r < kCloneDim; ++r) keep_rows.push_back(static_cast<int>(k) * kCloneDim + r);
    }
  }
  if (kept.size() == st.clones.size()) return;
  const int o = st.nav_offset();
  for (int r = 0; r < kNavDim; ++r) keep_rows.push_back(o + r);

  const int nd = static_cast<int>(keep_rows.size());
  Eigen::MatrixXd shrunk(nd, nd);
  for (int r = 0; r < nd; ++r) {
    for (int c = 0; c < nd; ++c) shrunk(r, c) = st.P(keep_rows[r], keep_rows[c]);
  }
  st.clones = std::move(kept);
  st.P = std::move(shrunk);
}

// Measurement model: h(X) = Rz(yaw_i)^T (p_j - p_i), the displacement from
// anchor clone i to target j in the anchor's yaw frame. idx_j equal to the
// clone count addresses the current state. Returns nullopt at gimbal lock.
inline std::optional<Eigen::Matrix<double, 3, Eigen::Dynamic>> measurement_jacobian(
    const FilterState& st, int idx_i, int idx_j, double gimbal_tol = 1e-6) {
  const auto& anchor = st.clones.at(idx_i);
  const auto euler = decompose_euler_xyz(anchor.R, gimbal_tol);
  if (!euler) return std::nullopt;
  const auto proj = yaw_error_projection(euler->yaw, euler->pitch, gimbal_tol);
  if (!proj) return std::nullopt;

  const bool target_current = idx_j == static_cast<int>(st.clones.size());
  const Vec3& p_j = target_current ? st.nav.p : st.clones.at(idx_j).p;
  const int col_j = target_current ? st.nav_offset() + kErrPos : idx_j * kCloneDim + 3;

  const Mat3 Rg_t = yaw_rotation(euler->yaw).transpose();
  Eigen::Matrix<double, 3, Eigen::Dynamic> H(3, st.dim());
  H.setZero();
  H.block<3, 3>(0, idx_i * kCloneDim) = Rg_t * skew(p_j - anchor.p) * (*proj);
  H.block<3, 3>(0, idx_i * kCloneDim + 3) = -Rg_t;
  H.block<3, 3>(0, col_j) = Rg_t;
  return H;
}

struct UpdateOutcome {
  enum class Status {
    accepted,
    rejected_gate,
    rejected_gimbal,
    rejected_singular,
    skipped_no_anchor,
  };

  Status status = Status::skipped_no_anchor;
  double t_i = 0.0;
  double t_j = 0.0;
  Vec3 innovation = Vec3::Zero();
  double nis = -1.0;  // normalized innovation squared; negative = not computed
  int clone_count = 0;

  bool accepted() const { return status == Status::accepted; }
};

inline const char* to_string(UpdateOutcome::Status s) {
  switch (s) {
    case UpdateOutcome::Status::accepted: return "accepted";
    case UpdateOutcome::Status::rejected_gate: return "rejected_gate";
    case UpdateOutcome::Status::rejected_gimbal: return "rejected_gimbal";
    case UpdateOutcome::Status::rejected_singular: return "rejected_singular";
    case UpdateOutcome::Status::skipped_no_anchor: return "skipped_no_anchor";
  }
  return "unknown";
}

namespace detail {

inline int find_clone(const FilterState& st, double t, double tol) {
  for (size_t k = 0; k < st.clones.size(); ++k) {
    if (std::abs(st.clones[k].t - t) <= tol) return static_cast<int>(k);
  }
  return -1;
}

}  // namespace detail

// Displacement update with chi-square gating and Joseph-form covariance.
// A rejected or skipped update leaves the state bit-identical.
inline UpdateOutcome update(FilterState& st, const DisplacementMeasurement& meas,
                            const FilterConfig& config) {
  UpdateOutcome out;
  out.t_i = meas.t_i;
  out.t_j = meas.t_j;
  out.clone_count = static_cast<int>(st.clones.size());

  const double tol = 0.5 * config.noise.dt;
  const int idx_i = detail::find_clone(st, meas.t_i, tol);
  int idx_j = -1;
  if (std::abs(st.nav.t - meas.t_j) <= tol) {
    idx_j = static_cast<int>(st.clones.size());  // current state is the target
  } else {
    idx_j = detail::find_clone(st, meas.t_j, tol);
  }
  if (idx_i < 0 || idx_j < 0) {
    out.status = UpdateOutcome::Status::skipped_no_anchor;
    return out;
  }

  const auto H_opt = measurement_jacobian(st, idx_i, idx_j, config.gimbal_tol);
  if (!H_opt) {
    out.status = UpdateOutcome::Status::rejected_gimbal;
    return out;
  }
  const auto& H = *H_opt;

  const auto euler = decompose_euler_xyz(st.clones[idx_i].R, config.gimbal_tol);
  const Vec3& p_j =
      idx_j == static_cast<int>(st.clones.size()) ? st.nav.p : st.clones[idx_j].p;
  const Vec3 predicted = yaw_rotation(euler->yaw).transpose() * (p_j - st.clones[idx_i].p);
  const Vec3 r = meas.d - predicted;
  out.innovation = r;

  const Mat3 Sigma = meas.covariance() * config.meas_cov_scale;
  const Eigen::Matrix<double, 3, Eigen::Dynamic> HP = H * st.P;
  const Mat3 S = HP * H.transpose() + Sigma;
  const Eigen::LLT<Mat3> llt(S);
  if (llt.info() != Eigen::Success) {
    out.status = UpdateOutcome::Status::rejected_singular;
    return out;
  }
  out.nis = r.dot(llt.solve(r));
  if (out.nis > config.chi2_threshold) {
    out.status = UpdateOutcome::Status::rejected_gate;
    return out;
  }

  // K = P H^T S^-1, via S^-1 (H P) and the symmetry of P.
  const Eigen::MatrixXd K = llt.solve(HP).transpose();
  const Eigen::VectorXd dx = K * r;

  for (size_t k = 0; k < st.clones.size(); ++k) {
    st.clones[k].p += dx.segment<3>(static_cast<int>(k) * kCloneDim + 3);
  }
  const int o = st.nav_offset();
  st.nav.v += dx.segment<3>(o + kErrVel);
  st.nav.p += dx.segment<3>(o + kErrPos);
  st.nav.b_g += dx.segment<3>(o + kErrBg);
  st.nav.b_a += dx.segment<3>(o + kErrBa);
  for (size_t k = 0; k < st.clones.size(); ++k) {
    st.clones[k].R = exp_so3(dx.segment<3>(static_cast<int>(k) * kCloneDim)) * st.clones[k].R;
  }
  st.nav.R = exp_so3(dx.segment<3>(o + kErrTheta)) * st.nav.R;

  // Joseph form, expanded as P - K(HP) - (K(HP))^T + K S K^T.
  const Eigen::MatrixXd KHP = K * HP;
  st.P -= KHP + KHP.transpose() - K * S * K.transpose();
  st.P = (0.5 * (st.P + st.P.transpose())).eval();

  out.status = UpdateOutcome::Status::accepted;
  return out;
}

struct EstimateSample {
  NavState nav;
  Vec15 marginal_std = Vec15::Zero();  // sqrt of the current-state P diagonal
};

struct FilterRunResult {
  std::vector<EstimateSample> estimates;  // initial state plus one per IMU sample
  std::vector<UpdateOutcome> updates;
};

using UpdateHook = std::function<void(const FilterState&, const UpdateOutcome&)>;

// Full pipeline: propagate through the IMU stream, clone at the update
// cadence, apply each displacement measurement when its end time is reached,
// then drop clones no future measurement can reference. The optional hook
// observes the filter state right after each processed measurement.
inline FilterRunResult run(const std::vector<ImuSample>& imu,
                           const std::vector<DisplacementMeasurement>& meas,
                           const FilterConfig& config, const NavState& init,
                           const UpdateHook& hook = {}) {
  if (imu.empty()) throw std::invalid_argument("run: empty IMU stream");
  for (size_t k = 0; k + 1 < imu.size(); ++k) {
    if (!(imu[k + 1].t > imu[k].t)) throw std::invalid_argument("run: IMU timestamps must increase");
  }
  for (size_t k = 0; k + 1 < meas.size(); ++k) {
    if (meas[k + 1].t_j < meas[k].t_j) {
      throw std::invalid_argument("run: measurements must be ordered by t_j");
    }
  }
  const double tol = 0.5 * config.noise.dt;
  if (std::abs(init.t - imu.front().t) > tol) {
    throw std::invalid_argument("run: init state must be timestamped at the first IMU sample");
  }

  FilterState st = initialize(config, init);
  const Mat12 W = noise_covariance(config.noise);
  DeferredCovPropagator cov;
  const double period = 1.0 / config.update_freq;

  FilterRunResult result;
  result.estimates.reserve(imu.size() + 1);
  auto emit = [&] {
    EstimateSample e;
    e.nav = st.nav;
    e.marginal_std =
        st.P.diagonal().segment<kNavDim>(st.nav_offset()).cwiseMax(0.0).cwiseSqrt();
    result.estimates.push_back(std::move(e));
  };

  size_t meas_idx = 0;
  // Clones are only worth keeping while some measurement still needs them.
  if (meas_idx < meas.size()) augment(st);
  double next_clone_t = init.t + period;
  emit();

  for (size_t k = 0; k < imu.size(); ++k) {
    const double dt = k + 1 < imu.size() ? imu[k + 1].t - imu[k].t
                                         : (imu.size() > 1 ? imu[k].t - imu[k - 1].t
                                                           : config.noise.dt);
    const auto jac = propagation_jacobians(st.nav, imu[k], dt);
    st.nav = propagate_mean(st.nav, imu[k], dt, config.gravity);
    cov.step(st.P, jac, W, st.nav_offset());

    while (next_clone_t <= st.nav.t + tol) {
      if (meas_idx < meas.size()) {
        cov.flush(st.P, st.nav_offset());
        augment(st);
      }
      next_clone_t += period;
    }

    while (meas_idx < meas.size() && meas[meas_idx].t_j <= st.nav.t + tol) {
      cov.flush(st.P, st.nav_offset());
      const UpdateOutcome outcome = update(st, meas[meas_idx], config);
      result.updates.push_back(outcome);
      if (hook) hook(st, outcome);
      ++meas_idx;
      if (meas_idx < meas.size()) marginalize(st, meas[meas_idx].t_i - tol);
    }
    emit();
  }
  return result;
}

}  // namespace scekf
