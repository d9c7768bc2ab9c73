// Release gate: every check prints one verdict line so a failed run can be
// read off the log without digging through gtest output. Tolerances are
// pinned; do not loosen them to make a regression pass.

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "scekf/baseline.hpp"
#include "scekf/runner.hpp"

using namespace scekf;

namespace {

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

bool verdict(const char* slug, bool pass, const std::string& detail) {
  std::printf("[accept] %-24s %s  (%s)\n", slug, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  return pass;
}

std::string fmt(const char* f, ...) {
  va_list ap;
  va_start(ap, f);
  char buf[512];
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

Vec3 random_vec(std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  return Vec3(n(rng), n(rng), n(rng));
}

NavState random_nav(std::mt19937_64& rng) {
  NavState nav;
  nav.R = exp_so3(random_vec(rng, 0.6));
  nav.v = random_vec(rng, 1.5);
  nav.p = random_vec(rng, 8.0);
  nav.b_g = random_vec(rng, 0.02);
  nav.b_a = random_vec(rng, 0.1);
  return nav;
}

ImuSample random_imu(std::mt19937_64& rng) {
  ImuSample s;
  s.gyro = random_vec(rng, 0.8);
  s.accel = Vec3(0, 0, 9.81) + random_vec(rng, 2.0);
  return s;
}

Vec15 error_of(const NavState& truth, const NavState& est) {
  Vec15 e;
  e.segment<3>(kErrTheta) = log_so3(truth.R * est.R.transpose());
  e.segment<3>(kErrVel) = truth.v - est.v;
  e.segment<3>(kErrPos) = truth.p - est.p;
  e.segment<3>(kErrBg) = truth.b_g - est.b_g;
  e.segment<3>(kErrBa) = truth.b_a - est.b_a;
  return e;
}

NavState retract(const NavState& est, const Vec15& xi) {
  NavState out = est;
  out.R = exp_so3(xi.segment<3>(kErrTheta)) * est.R;
  out.v += xi.segment<3>(kErrVel);
  out.p += xi.segment<3>(kErrPos);
  out.b_g += xi.segment<3>(kErrBg);
  out.b_a += xi.segment<3>(kErrBa);
  return out;
}

NavState propagate_truth(const NavState& truth, const ImuSample& s, double dt, const Vec3& g,
                         const Vec3& n_g, const Vec3& n_a, const Vec3& eta_g,
                         const Vec3& eta_a) {
  NavState out = truth;
  out.t += dt;
  const Vec3 a_world = truth.R * (s.accel - truth.b_a + n_a);
  out.R = truth.R * exp_so3((s.gyro - truth.b_g + n_g) * dt);
  out.v = truth.v + g * dt + a_world * dt;
  out.p = truth.p + truth.v * dt + 0.5 * dt * dt * (g + a_world);
  out.b_g += eta_g;
  out.b_a += eta_a;
  return out;
}

Vec15 propagation_error_map(const NavState& est, const ImuSample& s, double dt, const Vec3& g,
                            const Eigen::Matrix<double, 27, 1>& input) {
  const NavState truth = retract(est, input.head<15>());
  const NavState truth_next = propagate_truth(truth, s, dt, g, input.segment<3>(15),
                                              input.segment<3>(18), input.segment<3>(21),
                                              input.segment<3>(24));
  return error_of(truth_next, propagate_mean(est, s, dt, g));
}

FilterState evolved_state(std::mt19937_64& rng, int m, const FilterConfig& config) {
  FilterState st = initialize(config, random_nav(rng));
  const Mat12 W = noise_covariance(config.noise);
  for (int c = 0; c < m; ++c) {
    augment(st);
    for (int k = 0; k < 10; ++k) {
      const ImuSample s = random_imu(rng);
      const auto jac = propagation_jacobians(st.nav, s, config.noise.dt);
      propagate_covariance(st.P, jac, W, st.nav_offset());
      st.nav = propagate_mean(st.nav, s, config.noise.dt, config.gravity);
    }
  }
  return st;
}

MotionProfile swaying_profile(MotionKind kind) {
  MotionProfile prof;
  prof.kind = kind;
  prof.duration = 60.0;
  prof.sway_roll_amp = 0.3;
  prof.sway_pitch_amp = 0.3;
  prof.sway_freq = 0.2;
  return prof;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

}  // namespace

TEST(Acceptance, JacobianAccuracy) {
  // Propagation and measurement Jacobians against central finite differences
  // of the nonlinear models, 100 random states each, max abs error < 1e-5,
  // wall time < 10 s.
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(42);
  const double h = 1e-6;
  double worst_prop = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const NavState nav = random_nav(rng);
    const ImuSample s = random_imu(rng);
    const double dt = trial % 2 == 0 ? 0.005 : 0.02;
    const auto jac = propagation_jacobians(nav, s, dt);
    Eigen::Matrix<double, 15, 27> analytic;
    analytic << jac.A, jac.B, jac.C;
    for (int col = 0; col < 27; ++col) {
      Eigen::Matrix<double, 27, 1> in = Eigen::Matrix<double, 27, 1>::Zero();
      in[col] = h;
      const Vec15 plus = propagation_error_map(nav, s, dt, kGravity, in);
      in[col] = -h;
      const Vec15 minus = propagation_error_map(nav, s, dt, kGravity, in);
      worst_prop =
          std::max(worst_prop, ((plus - minus) / (2.0 * h) - analytic.col(col)).cwiseAbs().maxCoeff());
    }
  }

  FilterConfig config;
  std::mt19937_64 rng_meas(50);
  double worst_meas = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    FilterState st = evolved_state(rng_meas, 2, config);
    const int idx_i = 0;
    const int idx_j = trial % 2 == 0 ? 1 : 2;
    const auto H_opt = measurement_jacobian(st, idx_i, idx_j, config.gimbal_tol);
    ASSERT_TRUE(H_opt.has_value());
    const int d = st.dim();
    const auto h_of = [&](const Eigen::VectorXd& err) {
      FilterState perturbed = st;
      for (size_t c = 0; c < perturbed.clones.size(); ++c) {
        const int base = static_cast<int>(c) * kCloneDim;
        perturbed.clones[c].R = exp_so3(err.segment<3>(base)) * st.clones[c].R;
        perturbed.clones[c].p += err.segment<3>(base + 3);
      }
      const int o = perturbed.nav_offset();
      perturbed.nav.R = exp_so3(err.segment<3>(o + kErrTheta)) * st.nav.R;
      perturbed.nav.p += err.segment<3>(o + kErrPos);
      const auto e = decompose_euler_xyz(perturbed.clones[idx_i].R);
      const Vec3& pj = idx_j == static_cast<int>(perturbed.clones.size())
                           ? perturbed.nav.p
                           : perturbed.clones[idx_j].p;
      return Vec3(yaw_rotation(e->yaw).transpose() * (pj - perturbed.clones[idx_i].p));
    };
    for (int col = 0; col < d; ++col) {
      Eigen::VectorXd err = Eigen::VectorXd::Zero(d);
      err[col] = h;
      const Vec3 plus = h_of(err);
      err[col] = -h;
      const Vec3 minus = h_of(err);
      worst_meas = std::max(worst_meas, ((plus - minus) / (2.0 * h) - H_opt->col(col)).cwiseAbs().maxCoeff());
    }
  }
  const double secs = seconds_since(t0);
  EXPECT_TRUE(verdict("jacobian_fd", worst_prop < 1e-5 && worst_meas < 1e-5 && secs < 10.0,
                      fmt("prop %.2e, meas %.2e, %.1f s", worst_prop, worst_meas, secs)));
}

TEST(Acceptance, GeometryKernel) {
  // Rotation kernel invariants: exp/log round trip, right Jacobian defining
  // property, Euler rate matrix determinant and inverse, yaw projection row
  // identity. Wall time < 5 s.
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> ang(-kPi, kPi);
  std::uniform_real_distribution<double> pit(-1.5, 1.5);

  double worst_round = 0.0;
  double worst_jr = 0.0;
  double worst_det = 0.0;
  double worst_inv = 0.0;
  double worst_row = 0.0;
  std::uniform_real_distribution<double> mag(0.0, 0.98 * kPi);
  for (int i = 0; i < 500; ++i) {
    // Round trip holds on the principal domain |theta| < pi only.
    const Vec3 theta = random_vec(rng, 1.0).normalized() * mag(rng);
    worst_round = std::max(worst_round, (log_so3(exp_so3(theta)) - theta).norm());

    // Defining property: exp(theta + d) approx exp(theta) exp(Jr(theta) d).
    const Vec3 d = random_vec(rng, 1e-7);
    const Mat3 lhs = exp_so3(theta + d);
    const Mat3 rhs = exp_so3(theta) * exp_so3(right_jacobian(theta) * d);
    worst_jr = std::max(worst_jr, (lhs - rhs).norm() / d.norm());

    const double yaw = ang(rng), pitch = pit(rng);
    worst_det = std::max(worst_det,
                         std::abs(euler_rate_matrix(yaw, pitch).determinant() + std::cos(pitch)));
    const auto inv = euler_rate_matrix_inverse(yaw, pitch);
    ASSERT_TRUE(inv.has_value());
    worst_inv = std::max(worst_inv,
                         (euler_rate_matrix(yaw, pitch) * (*inv) - Mat3::Identity()).norm());
    Mat3 selector = Mat3::Zero();
    selector(2, 0) = 1.0;  // yaw is the first Euler-rate coordinate
    const auto proj = yaw_error_projection(yaw, pitch);
    ASSERT_TRUE(proj.has_value());
    worst_row = std::max(worst_row, (*proj - selector * (*inv)).norm());
  }
  const double secs = seconds_since(t0);
  const bool pass = worst_round < 1e-9 && worst_jr < 1e-6 && worst_det < 1e-12 &&
                    worst_inv < 1e-9 && worst_row < 1e-12 && secs < 5.0;
  EXPECT_TRUE(verdict("geometry_kernel", pass,
                      fmt("round %.1e, Jr %.1e, det %.1e, inv %.1e, row %.1e, %.1f s", worst_round,
                          worst_jr, worst_det, worst_inv, worst_row, secs)));
}

TEST(Acceptance, DeadReckoningClosure) {
  // Noiseless IMU streams from every motion profile re-integrate to ground
  // truth within 1e-3 m over 60 s at 200 Hz.
  double worst = 0.0;
  std::string worst_name;
  for (MotionKind kind : {MotionKind::standstill, MotionKind::straight_walk,
                          MotionKind::circle_walk, MotionKind::stair_climb,
                          MotionKind::figure_eight}) {
    MotionProfile prof;
    prof.kind = kind;
    prof.duration = 60.0;
    const auto traj = generate(prof);
    const auto imu = derive_imu(traj);
    NavState nav;
    nav.t = traj[0].t;
    nav.R = traj[0].R;
    nav.v = traj[0].v;
    nav.p = traj[0].p;
    for (size_t k = 0; k + 1 < imu.size(); ++k) {
      nav = propagate_mean(nav, imu[k], imu[k + 1].t - imu[k].t, kGravity);
    }
    const double err = (nav.p - traj.back().p).norm();
    if (err > worst) {
      worst = err;
      worst_name = detail::motion_kind_name(kind);
    }
  }
  EXPECT_TRUE(verdict("dead_reckoning_closure", worst < 1e-3,
                      fmt("worst %.2e m (%s)", worst, worst_name.c_str())));
}

TEST(Acceptance, FilterConsistency) {
  // 50-run Monte Carlo on circle_walk, 60 s, consistent oracle at unit
  // covariance scale: mean NEES of the 15-dim current error state inside the
  // two-sided 95% chi-square envelope, gate pass rate 99% +- 0.5%, < 5 min.
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig cfg;
  cfg.seed = 500;
  cfg.profile.kind = MotionKind::circle_walk;
  cfg.profile.duration = 60.0;
  cfg.filter.meas_cov_scale = 1.0;
  cfg.filter.init_sigma_theta_deg = Vec3(0.5, 0.5, 0.5);
  cfg.perturb_init = true;
  cfg.true_bias.mode = TrueBiasSpec::Mode::prior;
  const auto sum = montecarlo(cfg, 50);
  const double secs = seconds_since(t0);
  const bool gate_ok = sum.gate_rate >= 0.985 && sum.gate_rate <= 0.995;
  EXPECT_TRUE(verdict("filter_consistency", sum.nees_pass && gate_ok && secs < 300.0,
                      fmt("NEES %.3f in [%.3f, %.3f], gate %.4f, %.0f s", sum.nees_mean,
                          sum.nees_lo, sum.nees_hi, sum.gate_rate, secs)));
}

TEST(Acceptance, BiasObservability) {
  // Constant biases drawn uniformly up to 0.05 rad/s (gyro) and 0.2 m/s^2
  // (accel) must land within 3 sigma of the filter's final marginals after
  // 60 s in at least 90% of 50 runs. The swaying profile keeps every gyro
  // axis excited; without body tilt variation the yaw-aligned gyro bias is
  // unobservable and no consistent filter can pin it down.
  RunConfig cfg;
  cfg.seed = 7000;
  cfg.profile = swaying_profile(MotionKind::circle_walk);
  cfg.filter.meas_cov_scale = 1.0;
  cfg.filter.init_sigma_bg = 0.05 / std::sqrt(3.0);
  cfg.filter.init_sigma_ba = 0.2 / std::sqrt(3.0);
  cfg.filter.init_sigma_theta_deg = Vec3(0.5, 0.5, 0.5);
  cfg.perturb_init = true;
  cfg.true_bias.mode = TrueBiasSpec::Mode::uniform;
  cfg.true_bias.gyro_range = 0.05;
  cfg.true_bias.accel_range = 0.2;
  const auto sum = montecarlo(cfg, 50);
  EXPECT_TRUE(verdict("bias_observability", sum.bias_recovery_frac >= 0.90,
                      fmt("recovered %.0f%% of 50 runs", 100.0 * sum.bias_recovery_frac)));
}

TEST(Acceptance, FusionBeatsConcatenation) {
  // Stochastic-cloning filter vs AHRS-plus-concatenation baseline on the
  // benchmark profiles with a 0.005 rad/s yaw gyro bias: median ATE and
  // median |yaw drift rate| strictly lower over 20 seeds, per profile.
  bool all_pass = true;
  std::string detail_line;
  for (MotionKind kind : {MotionKind::circle_walk, MotionKind::stair_climb}) {
    std::vector<double> f_ate, b_ate, f_yaw, b_yaw;
    for (int i = 0; i < 20; ++i) {
      RunConfig cfg;
      cfg.seed = 9000 + static_cast<unsigned>(i);
      cfg.profile = swaying_profile(kind);
      cfg.filter.meas_cov_scale = 1.0;
      cfg.filter.init_sigma_bg = 0.01;
      cfg.true_bias.mode = TrueBiasSpec::Mode::fixed;
      cfg.true_bias.gyro = Vec3(0.0, 0.0, 0.005);
      const auto art = execute_filter_run(cfg);
      const auto fm = evaluate(nav_of(art.filter.estimates), art.sim.traj);
      const auto br = run_baseline(art.sim.imu, art.sim.meas, art.sim.init.R, art.sim.init.p);
      const auto bm = evaluate(nav_of(baseline_estimates(br)), art.sim.traj);
      f_ate.push_back(fm.ate);
      b_ate.push_back(bm.ate);
      f_yaw.push_back(std::abs(fm.yaw_dr));
      b_yaw.push_back(std::abs(bm.yaw_dr));
    }
    const bool ate_ok = median(f_ate) < median(b_ate);
    const bool yaw_ok = median(f_yaw) < median(b_yaw);
    all_pass = all_pass && ate_ok && yaw_ok;
    detail_line += fmt("%s ATE %.3f<%.3f yaw %.0f<%.0f; ", detail::motion_kind_name(kind).c_str(),
                       median(f_ate), median(b_ate), median(f_yaw), median(b_yaw));
  }
  EXPECT_TRUE(verdict("fusion_beats_baseline", all_pass, detail_line));
}

TEST(Acceptance, OracleConsistency) {
  // Mahalanobis distance of oracle noise against its reported covariance:
  // the fraction above the 99th-percentile chi-square(3) threshold 11.345
  // must be 1.0% +- 0.3% over 1e5 samples.
  MotionProfile prof;
  prof.kind = MotionKind::circle_walk;
  prof.duration = 60.0;
  const auto traj = generate(prof);
  OracleSpec spec;
  Rng rng(77);
  const double t_i = 10.0, t_j = 11.0;
  const Vec3 truth = true_displacement(traj, t_i, t_j);
  int outliers = 0;
  const int n = 100000;
  for (int k = 0; k < n; ++k) {
    const auto m = sample_measurement(traj, t_i, t_j, spec, rng);
    const Vec3 r = m.d - truth;
    if (r.dot(m.covariance().ldlt().solve(r)) > 11.345) ++outliers;
  }
  const double frac = static_cast<double>(outliers) / n;
  EXPECT_TRUE(verdict("oracle_consistency", frac >= 0.007 && frac <= 0.013,
                      fmt("outlier fraction %.4f", frac)));
}

TEST(Acceptance, HeadingGaugeInvariance) {
  // Rotating the world about gravity must leave every innovation unchanged
  // to 1e-12: heading carries no information in this measurement model.
  MotionProfile prof;
  prof.kind = MotionKind::figure_eight;
  prof.duration = 10.0;
  const auto traj = generate(prof);
  auto imu = derive_imu(traj);
  ImuNoiseSpec noise;
  Rng rng(58);
  BiasState bias;
  for (auto& s : imu) {
    const auto c = corrupt(s, bias, noise, rng);
    s = c.sample;
    bias = c.bias;
  }
  Rng oracle_rng(59);
  OracleSpec oracle;
  const auto meas = schedule_measurements(traj, oracle, 1.0, 20.0, oracle_rng);
  FilterConfig config;
  config.noise = noise;
  config.meas_cov_scale = 1.0;
  NavState init;
  init.t = traj[0].t;
  init.R = traj[0].R;
  init.v = traj[0].v;
  init.p = traj[0].p;
  const auto base = run(imu, meas, config, init);

  NavState init_rot = init;
  const Mat3 Q = yaw_rotation(1.234);
  init_rot.R = Q * init.R;
  init_rot.v = Q * init.v;
  init_rot.p = Q * init.p;
  const auto rotated = run(imu, meas, config, init_rot);

  ASSERT_EQ(base.updates.size(), rotated.updates.size());
  double worst = 0.0;
  bool status_match = true;
  for (size_t k = 0; k < base.updates.size(); ++k) {
    worst = std::max(worst, (base.updates[k].innovation - rotated.updates[k].innovation).norm());
    status_match = status_match && base.updates[k].status == rotated.updates[k].status;
  }
  EXPECT_TRUE(verdict("heading_gauge_invariance", worst < 1e-12 && status_match,
                      fmt("max innovation shift %.2e", worst)));
}

TEST(Acceptance, CliDeterminism) {
  // The full CLI pipeline rerun with the same seed must produce byte
  // identical outputs.
  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() / "scekf_accept_cli";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string cli = SCEKF_CLI_PATH;

  auto pipeline = [&](const std::string& tag) {
    const fs::path sim = root / (tag + "_sim");
    const fs::path flt = root / (tag + "_flt");
    std::string cmd = "\"" + cli + "\" simulate --seed 3 --out \"" + sim.string() +
                      "\" > /dev/null 2>&1";
    if (std::system(cmd.c_str()) != 0) return std::pair<fs::path, fs::path>{};
    cmd = "\"" + cli + "\" run-filter --seed 3 --imu \"" + (sim / "imu.csv").string() +
          "\" --meas \"" + (sim / "meas.csv").string() + "\" --gt \"" + (sim / "gt.csv").string() +
          "\" --out \"" + flt.string() + "\" > /dev/null 2>&1";
    if (std::system(cmd.c_str()) != 0) return std::pair<fs::path, fs::path>{};
    return std::make_pair(sim, flt);
  };

  const auto [sim_a, flt_a] = pipeline("a");
  const auto [sim_b, flt_b] = pipeline("b");
  bool pass = !sim_a.empty() && !sim_b.empty();
  std::string mismatch = "all byte identical";
  if (pass) {
    for (const char* f : {"gt.csv", "imu.csv", "meas.csv"}) {
      if (slurp(sim_a / f) != slurp(sim_b / f) || slurp(sim_a / f).empty()) {
        pass = false;
        mismatch = f;
        break;
      }
    }
    for (const char* f : {"est.csv", "diag.jsonl", "config.json"}) {
      if (pass && (slurp(flt_a / f) != slurp(flt_b / f) || slurp(flt_a / f).empty())) {
        pass = false;
        mismatch = f;
      }
    }
  } else {
    mismatch = "pipeline command failed";
  }
  EXPECT_TRUE(verdict("cli_determinism", pass, mismatch));
  fs::remove_all(root);
}
