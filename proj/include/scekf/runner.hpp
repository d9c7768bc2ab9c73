#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scekf/baseline.hpp"
#include "scekf/displacement.hpp"
#include "scekf/filter.hpp"
#include "scekf/imu.hpp"
#include "scekf/io.hpp"
#include "scekf/metrics.hpp"
#include "scekf/stats.hpp"
#include "scekf/trajectory.hpp"

namespace scekf {

// Raised when a linear-algebra step fails (covariance lost positive
// definiteness); callers distinguish it from data and config errors.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// How the injected constant part of the true IMU bias is chosen per run.
struct TrueBiasSpec {
  enum class Mode { fixed, uniform, prior };
  Mode mode = Mode::fixed;
  Vec3 gyro = Vec3::Zero();   // fixed mode
  Vec3 accel = Vec3::Zero();  // fixed mode
  double gyro_range = 0.05;   // uniform mode, rad/s per axis
  double accel_range = 0.2;   // uniform mode, m/s^2 per axis
};

struct RunConfig {
  MotionProfile profile;
  ImuNoiseSpec imu_noise;
  OracleSpec oracle;
  FilterConfig filter;
  BaselineConfig baseline;
  TrueBiasSpec true_bias;
  bool perturb_init = false;  // draw the initial estimate from the init prior
  uint64_t seed = 1;
};

namespace detail {

inline std::string motion_kind_name(MotionKind kind) {
  switch (kind) {
    case MotionKind::standstill: return "standstill";
    case MotionKind::straight_walk: return "straight_walk";
    case MotionKind::circle_walk: return "circle_walk";
    case MotionKind::stair_climb: return "stair_climb";
    case MotionKind::figure_eight: return "figure_eight";
  }
  throw std::invalid_argument("unknown motion kind");
}

inline MotionKind motion_kind_from(const std::string& name) {
  if (name == "standstill") return MotionKind::standstill;
  if (name == "straight_walk") return MotionKind::straight_walk;
  if (name == "circle_walk") return MotionKind::circle_walk;
  if (name == "stair_climb") return MotionKind::stair_climb;
  if (name == "figure_eight") return MotionKind::figure_eight;
  throw std::runtime_error("config: unknown motion kind '" + name + "'");
}

inline Vec3 vec3_from(const nlohmann::json& j, const Vec3& fallback, const char* key) {
  if (!j.contains(key)) return fallback;
  const auto& a = j.at(key);
  if (!a.is_array() || a.size() != 3)
    throw std::runtime_error(std::string("config: '") + key + "' must be a 3-array");
  return Vec3(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
}

inline nlohmann::json vec3_json(const Vec3& v) {
  return nlohmann::json::array({v.x(), v.y(), v.z()});
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const RunConfig& config) {
  nlohmann::ordered_json j;
  j["seed"] = config.seed;
  j["perturb_init"] = config.perturb_init;

  auto& p = j["profile"];
  p["kind"] = detail::motion_kind_name(config.profile.kind);
  p["speed"] = config.profile.speed;
  p["radius"] = config.profile.radius;
  p["slope"] = config.profile.slope;
  p["duration"] = config.profile.duration;
  p["rate"] = config.profile.rate;
  p["heading_offset"] = config.profile.heading_offset;
  p["sway_roll_amp"] = config.profile.sway_roll_amp;
  p["sway_pitch_amp"] = config.profile.sway_pitch_amp;
  p["sway_freq"] = config.profile.sway_freq;
  p["start"] = detail::vec3_json(config.profile.start);

  auto& n = j["imu_noise"];
  n["sigma_g"] = config.imu_noise.sigma_g;
  n["sigma_a"] = config.imu_noise.sigma_a;
  n["sigma_bg_rw"] = config.imu_noise.sigma_bg_rw;
  n["sigma_ba_rw"] = config.imu_noise.sigma_ba_rw;
  n["dt"] = config.imu_noise.dt;

  auto& o = j["oracle"];
  o["mode"] = config.oracle.mode == OracleMode::fixed_sigma ? "fixed_sigma" : "heteroscedastic";
  o["sigma"] = detail::vec3_json(config.oracle.sigma);
  o["outlier_rate"] = config.oracle.outlier_rate;
  o["outlier_sigma_multiplier"] = config.oracle.outlier_sigma_multiplier;
  o["report_cov_scale"] = config.oracle.report_cov_scale;
  o["speed_ref"] = config.oracle.speed_ref;
  o["scale_min"] = config.oracle.scale_min;
  o["scale_max"] = config.oracle.scale_max;

  auto& f = j["filter"];
  f["chi2_threshold"] = config.filter.chi2_threshold;
  f["meas_cov_scale"] = config.filter.meas_cov_scale;
  f["update_freq"] = config.filter.update_freq;
  f["window"] = config.filter.window;
  f["gimbal_tol"] = config.filter.gimbal_tol;
  f["init_sigma_v"] = config.filter.init_sigma_v;
  f["init_sigma_ba"] = config.filter.init_sigma_ba;
  f["init_sigma_bg"] = config.filter.init_sigma_bg;
  f["init_sigma_theta_deg"] = detail::vec3_json(config.filter.init_sigma_theta_deg);
  f["init_sigma_p"] = config.filter.init_sigma_p;

  auto& b = j["baseline"];
  b["accel_gain"] = config.baseline.accel_gain;
  b["scale_overlapping"] = config.baseline.scale_overlapping;

  auto& t = j["true_bias"];
  t["mode"] = config.true_bias.mode == TrueBiasSpec::Mode::fixed
                  ? "fixed"
                  : (config.true_bias.mode == TrueBiasSpec::Mode::uniform ? "uniform" : "prior");
  t["gyro"] = detail::vec3_json(config.true_bias.gyro);
  t["accel"] = detail::vec3_json(config.true_bias.accel);
  t["gyro_range"] = config.true_bias.gyro_range;
  t["accel_range"] = config.true_bias.accel_range;
  return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig config;
  config.seed = j.value("seed", config.seed);
  config.perturb_init = j.value("perturb_init", config.perturb_init);

  if (j.contains("profile")) {
    const auto& p = j.at("profile");
    if (p.contains("kind")) config.profile.kind = detail::motion_kind_from(p.at("kind"));
    config.profile.speed = p.value("speed", config.profile.speed);
    config.profile.radius = p.value("radius", config.profile.radius);
    config.profile.slope = p.value("slope", config.profile.slope);
    config.profile.duration = p.value("duration", config.profile.duration);
    config.profile.rate = p.value("rate", config.profile.rate);
    config.profile.heading_offset = p.value("heading_offset", config.profile.heading_offset);
    config.profile.sway_roll_amp = p.value("sway_roll_amp", config.profile.sway_roll_amp);
    config.profile.sway_pitch_amp = p.value("sway_pitch_amp", config.profile.sway_pitch_amp);
    config.profile.sway_freq = p.value("sway_freq", config.profile.sway_freq);
    config.profile.start = detail::vec3_from(p, config.profile.start, "start");
  }
  if (j.contains("imu_noise")) {
    const auto& n = j.at("imu_noise");
    config.imu_noise.sigma_g = n.value("sigma_g", config.imu_noise.sigma_g);
    config.imu_noise.sigma_a = n.value("sigma_a", config.imu_noise.sigma_a);
    config.imu_noise.sigma_bg_rw = n.value("sigma_bg_rw", config.imu_noise.sigma_bg_rw);
    config.imu_noise.sigma_ba_rw = n.value("sigma_ba_rw", config.imu_noise.sigma_ba_rw);
    config.imu_noise.dt = n.value("dt", config.imu_noise.dt);
  }
  if (j.contains("oracle")) {
    const auto& o = j.at("oracle");
    if (o.contains("mode")) {
      const std::string mode = o.at("mode");
      if (mode == "fixed_sigma") {
        config.oracle.mode = OracleMode::fixed_sigma;
      } else if (mode == "heteroscedastic") {
        config.oracle.mode = OracleMode::heteroscedastic;
      } else {
        throw std::runtime_error("config: unknown oracle mode '" + mode + "'");
      }
    }
    config.oracle.sigma = detail::vec3_from(o, config.oracle.sigma, "sigma");
    config.oracle.outlier_rate = o.value("outlier_rate", config.oracle.outlier_rate);
    config.oracle.outlier_sigma_multiplier =
        o.value("outlier_sigma_multiplier", config.oracle.outlier_sigma_multiplier);
    config.oracle.report_cov_scale = o.value("report_cov_scale", config.oracle.report_cov_scale);
    config.oracle.speed_ref = o.value("speed_ref", config.oracle.speed_ref);
    config.oracle.scale_min = o.value("scale_min", config.oracle.scale_min);
    config.oracle.scale_max = o.value("scale_max", config.oracle.scale_max);
  }
  if (j.contains("filter")) {
    const auto& f = j.at("filter");
    config.filter.chi2_threshold = f.value("chi2_threshold", config.filter.chi2_threshold);
    config.filter.meas_cov_scale = f.value("meas_cov_scale", config.filter.meas_cov_scale);
    config.filter.update_freq = f.value("update_freq", config.filter.update_freq);
    config.filter.window = f.value("window", config.filter.window);
    config.filter.gimbal_tol = f.value("gimbal_tol", config.filter.gimbal_tol);
    config.filter.init_sigma_v = f.value("init_sigma_v", config.filter.init_sigma_v);
    config.filter.init_sigma_ba = f.value("init_sigma_ba", config.filter.init_sigma_ba);
    config.filter.init_sigma_bg = f.value("init_sigma_bg", config.filter.init_sigma_bg);
    config.filter.init_sigma_theta_deg =
        detail::vec3_from(f, config.filter.init_sigma_theta_deg, "init_sigma_theta_deg");
    config.filter.init_sigma_p = f.value("init_sigma_p", config.filter.init_sigma_p);
  }
  if (j.contains("baseline")) {
    const auto& b = j.at("baseline");
    config.baseline.accel_gain = b.value("accel_gain", config.baseline.accel_gain);
    config.baseline.scale_overlapping =
        b.value("scale_overlapping", config.baseline.scale_overlapping);
  }
  if (j.contains("true_bias")) {
    const auto& t = j.at("true_bias");
    if (t.contains("mode")) {
      const std::string mode = t.at("mode");
      if (mode == "fixed") {
        config.true_bias.mode = TrueBiasSpec::Mode::fixed;
      } else if (mode == "uniform") {
        config.true_bias.mode = TrueBiasSpec::Mode::uniform;
      } else if (mode == "prior") {
        config.true_bias.mode = TrueBiasSpec::Mode::prior;
      } else {
        throw std::runtime_error("config: unknown true_bias mode '" + mode + "'");
      }
    }
    config.true_bias.gyro = detail::vec3_from(t, config.true_bias.gyro, "gyro");
    config.true_bias.accel = detail::vec3_from(t, config.true_bias.accel, "accel");
    config.true_bias.gyro_range = t.value("gyro_range", config.true_bias.gyro_range);
    config.true_bias.accel_range = t.value("accel_range", config.true_bias.accel_range);
  }
  // The filter integrates at the simulated sampling period.
  config.filter.noise = config.imu_noise;
  return config;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open config");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  return run_config_from_json(j);
}

inline void save_run_config(const std::string& path, const RunConfig& config) {
  detail::write_text_file(path, to_json(config).dump(2) + "\n");
}

// One synthetic sequence: ground truth, corrupted IMU with its true bias
// history, scheduled oracle measurements, and the filter's initial estimate.
// A single seeded generator drives every draw in a fixed order, so a run is
// fully reproducible from RunConfig alone.
struct SimulatedRun {
  std::vector<TrajectorySample> traj;
  std::vector<ImuSample> imu;
  std::vector<BiasState> true_bias;  // bias applied to each IMU sample
  std::vector<DisplacementMeasurement> meas;
  NavState init;
};

inline SimulatedRun simulate_run(const RunConfig& config) {
  SimulatedRun sim;
  sim.traj = generate(config.profile);
  sim.imu = derive_imu(sim.traj);
  Rng rng(config.seed);

  BiasState bias;
  switch (config.true_bias.mode) {
    case TrueBiasSpec::Mode::fixed:
      bias.gyro = config.true_bias.gyro;
      bias.accel = config.true_bias.accel;
      break;
    case TrueBiasSpec::Mode::uniform:
      for (int i = 0; i < 3; ++i) {
        bias.gyro[i] = (2.0 * rng.uniform() - 1.0) * config.true_bias.gyro_range;
        bias.accel[i] = (2.0 * rng.uniform() - 1.0) * config.true_bias.accel_range;
      }
      break;
    case TrueBiasSpec::Mode::prior:
      bias.gyro = config.filter.init_sigma_bg * rng.gaussian3();
      bias.accel = config.filter.init_sigma_ba * rng.gaussian3();
      break;
  }

  sim.init.t = sim.traj.front().t;
  sim.init.R = sim.traj.front().R;
  sim.init.v = sim.traj.front().v;
  sim.init.p = sim.traj.front().p;
  if (config.perturb_init) {
    // Draw the initial estimate from the filter's own init prior so the
    // stated covariance is exact at t0.
    const Vec3 sigma_theta = config.filter.init_sigma_theta_deg * kPi / 180.0;
    const Vec3 theta = sigma_theta.cwiseProduct(rng.gaussian3());
    sim.init.R = exp_so3(-theta) * sim.init.R;
    sim.init.v -= config.filter.init_sigma_v * rng.gaussian3();
    sim.init.p -= config.filter.init_sigma_p * rng.gaussian3();
  }

  sim.true_bias.reserve(sim.imu.size());
  for (auto& s : sim.imu) {
    sim.true_bias.push_back(bias);
    const auto c = corrupt(s, bias, config.imu_noise, rng);
    s = c.sample;
    bias = c.bias;
  }
  sim.meas = schedule_measurements(sim.traj, config.oracle, config.filter.window,
                                   config.filter.update_freq, rng);
  return sim;
}

inline std::vector<NavState> nav_of(const std::vector<EstimateSample>& estimates) {
  std::vector<NavState> out;
  out.reserve(estimates.size());
  for (const auto& e : estimates) out.push_back(e.nav);
  return out;
}

inline std::vector<EstimateSample> baseline_estimates(const BaselineResult& result) {
  std::vector<EstimateSample> out(result.trajectory.size());
  for (size_t k = 0; k < out.size(); ++k) {
    out[k].nav.t = result.trajectory[k].t;
    out[k].nav.R = result.trajectory[k].R;
    out[k].nav.v = result.trajectory[k].v;
    out[k].nav.p = result.trajectory[k].p;
  }
  return out;
}

inline double gate_pass_rate(const std::vector<UpdateOutcome>& updates) {
  if (updates.empty()) throw std::invalid_argument("gate_pass_rate: no updates");
  int accepted = 0;
  for (const auto& u : updates) accepted += u.accepted() ? 1 : 0;
  return static_cast<double>(accepted) / static_cast<double>(updates.size());
}

// One filter run over a simulated sequence, with the post-update state of the
// final measurement kept aside for consistency evaluation.
struct RunArtifacts {
  SimulatedRun sim;
  FilterRunResult filter;
  std::optional<FilterState> last_update_state;
};

inline RunArtifacts execute_filter_run(const RunConfig& config) {
  RunArtifacts art;
  art.sim = simulate_run(config);
  FilterConfig fc = config.filter;
  fc.noise = config.imu_noise;
  size_t processed = 0;
  const size_t total = art.sim.meas.size();
  art.filter = run(art.sim.imu, art.sim.meas, fc, art.sim.init,
                   [&](const FilterState& st, const UpdateOutcome&) {
                     if (++processed == total) art.last_update_state = st;
                   });
  return art;
}

// Normalized estimation error squared of the 15-dim current error state
// against ground truth, evaluated on a captured filter state.
inline double current_state_nees(const FilterState& st,
                                 const std::vector<TrajectorySample>& traj,
                                 const std::vector<BiasState>& true_bias) {
  const size_t idx = nearest_time_index(traj, st.nav.t);
  if (std::abs(traj[idx].t - st.nav.t) > 1e-6)
    throw std::invalid_argument("current_state_nees: no ground-truth sample at state time");
  Vec15 dx;
  dx.segment<3>(kErrTheta) = log_so3(traj[idx].R * st.nav.R.transpose());
  dx.segment<3>(kErrVel) = traj[idx].v - st.nav.v;
  dx.segment<3>(kErrPos) = traj[idx].p - st.nav.p;
  dx.segment<3>(kErrBg) = true_bias[std::min(idx, true_bias.size() - 1)].gyro - st.nav.b_g;
  dx.segment<3>(kErrBa) = true_bias[std::min(idx, true_bias.size() - 1)].accel - st.nav.b_a;
  const Mat15 P = st.P.block<kNavDim, kNavDim>(st.nav_offset(), st.nav_offset());
  const Eigen::LLT<Mat15> llt(P);
  if (llt.info() != Eigen::Success)
    throw NumericalError("current_state_nees: covariance is not positive definite");
  return dx.dot(llt.solve(dx));
}

// Per-axis 3-sigma recovery of both constant bias vectors at the end of a run.
inline bool bias_recovered(const EstimateSample& final_estimate, const BiasState& final_bias) {
  for (int i = 0; i < 3; ++i) {
    if (std::abs(final_estimate.nav.b_g[i] - final_bias.gyro[i]) >
        3.0 * final_estimate.marginal_std[kErrBg + i]) {
      return false;
    }
    if (std::abs(final_estimate.nav.b_a[i] - final_bias.accel[i]) >
        3.0 * final_estimate.marginal_std[kErrBa + i]) {
      return false;
    }
  }
  return true;
}

struct MonteCarloRunStats {
  uint64_t seed = 0;
  MetricsReport metrics;
  double nees_final = std::numeric_limits<double>::quiet_NaN();
  double gate_pass = 0.0;
  size_t update_count = 0;
  size_t accepted_count = 0;
  bool bias_ok = false;
};

struct MonteCarloSummary {
  std::vector<MonteCarloRunStats> runs;
  double nees_mean = 0.0;
  double nees_lo = 0.0;    // two-sided 95% envelope for the mean
  double nees_hi = 0.0;
  bool nees_pass = false;
  double gate_rate = 0.0;  // pooled over all updates
  double bias_recovery_frac = 0.0;
};

inline MonteCarloSummary montecarlo(const RunConfig& config, int n_runs) {
  if (n_runs < 2) throw std::invalid_argument("montecarlo: need at least 2 runs");
  MonteCarloSummary summary;
  summary.runs.reserve(static_cast<size_t>(n_runs));
  double nees_sum = 0.0;
  size_t accepted = 0, total = 0, bias_ok = 0;
  for (int i = 0; i < n_runs; ++i) {
    RunConfig cfg = config;
    cfg.seed = config.seed + static_cast<uint64_t>(i);
    const RunArtifacts art = execute_filter_run(cfg);

    MonteCarloRunStats stats;
    stats.seed = cfg.seed;
    stats.metrics = evaluate(nav_of(art.filter.estimates), art.sim.traj);
    if (art.last_update_state) {
      stats.nees_final = current_state_nees(*art.last_update_state, art.sim.traj,
                                            art.sim.true_bias);
    }
    stats.update_count = art.filter.updates.size();
    for (const auto& u : art.filter.updates) stats.accepted_count += u.accepted() ? 1 : 0;
    stats.gate_pass = stats.update_count == 0
                          ? 0.0
                          : static_cast<double>(stats.accepted_count) /
                                static_cast<double>(stats.update_count);
    stats.bias_ok =
        bias_recovered(art.filter.estimates.back(), art.sim.true_bias.back());

    nees_sum += stats.nees_final;
    accepted += stats.accepted_count;
    total += stats.update_count;
    bias_ok += stats.bias_ok ? 1 : 0;
    summary.runs.push_back(std::move(stats));
  }

  // The sum of n independent 15-dim NEES values is chi-square with 15n
  // degrees of freedom under correct modeling.
  const double dof = 15.0 * n_runs;
  summary.nees_mean = nees_sum / n_runs;
  summary.nees_lo = chi2_quantile(dof, 0.025) / n_runs;
  summary.nees_hi = chi2_quantile(dof, 0.975) / n_runs;
  summary.nees_pass = summary.nees_mean >= summary.nees_lo &&
                      summary.nees_mean <= summary.nees_hi &&
                      std::isfinite(summary.nees_mean);
  summary.gate_rate = total == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(total);
  summary.bias_recovery_frac = static_cast<double>(bias_ok) / static_cast<double>(n_runs);
  return summary;
}

inline nlohmann::ordered_json metrics_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["ate"] = report.ate;
  j["rte"] = report.rte;
  j["dr"] = report.dr;
  j["aye"] = report.aye;
  j["rye"] = report.rye;
  j["yaw_dr"] = report.yaw_dr;
  j["gimbal_skipped"] = report.gimbal_skipped;
  if (report.nll) j["nll"] = *report.nll;
  if (report.mahalanobis_outlier_frac)
    j["mahalanobis_outlier_frac"] = *report.mahalanobis_outlier_frac;
  if (report.nees_mean) j["nees_mean"] = *report.nees_mean;
  return j;
}

}  // namespace scekf
