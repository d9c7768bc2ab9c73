#include <algorithm>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "scekf/runner.hpp"

namespace fs = std::filesystem;
using namespace scekf;

namespace {

// Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numerical.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::optional<uint64_t> seed;
  std::optional<double> chi2_threshold;
  std::optional<double> cov_scale;
};

void add_common(CLI::App* sub, CommonFlags& flags, bool with_filter_overrides) {
  sub->add_option("--config", flags.config_path, "run config JSON");
  sub->add_option("--out", flags.out_dir, "output directory (default: $SCEKF_OUT_ROOT/<command>)");
  sub->add_option("--seed", flags.seed, "override the config seed");
  if (with_filter_overrides) {
    sub->add_option("--chi2-threshold", flags.chi2_threshold, "override the innovation gate");
    sub->add_option("--cov-scale", flags.cov_scale, "override the measurement cov inflation");
  }
}

RunConfig resolve_config(const CommonFlags& flags) {
  RunConfig config;
  if (!flags.config_path.empty()) {
    try {
      config = load_run_config(flags.config_path);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  }
  if (flags.seed) config.seed = *flags.seed;
  if (flags.chi2_threshold) config.filter.chi2_threshold = *flags.chi2_threshold;
  if (flags.cov_scale) config.filter.meas_cov_scale = *flags.cov_scale;
  config.filter.noise = config.imu_noise;
  return config;
}

fs::path resolve_out(const CommonFlags& flags, const std::string& command) {
  if (!flags.out_dir.empty()) return flags.out_dir;
  if (const char* root = std::getenv("SCEKF_OUT_ROOT")) return fs::path(root) / command;
  throw ConfigError("--out is required (or set SCEKF_OUT_ROOT)");
}

fs::path prepare_out(const CommonFlags& flags, const std::string& command,
                     const RunConfig& config) {
  const fs::path out = resolve_out(flags, command);
  fs::create_directories(out);
  save_run_config((out / "config.json").string(), config);
  return out;
}

NavState init_from_gt(const std::vector<TrajectorySample>& gt) {
  if (gt.empty()) throw std::runtime_error("ground truth is empty");
  NavState init;
  init.t = gt.front().t;
  init.R = gt.front().R;
  init.v = gt.front().v;
  init.p = gt.front().p;
  return init;
}

std::vector<EstimateSample> read_estimates(const std::string& path) {
  return read_est_csv(path);
}

void cmd_simulate(const CommonFlags& flags) {
  const RunConfig config = resolve_config(flags);
  const SimulatedRun sim = simulate_run(config);
  const fs::path out = prepare_out(flags, "simulate", config);
  write_gt_csv((out / "gt.csv").string(), sim.traj);
  write_imu_csv((out / "imu.csv").string(), sim.imu);
  write_meas_csv((out / "meas.csv").string(), sim.meas);
  std::cout << "wrote " << (out / "gt.csv").string() << ", imu.csv, meas.csv ("
            << sim.traj.size() << " samples, " << sim.meas.size() << " measurements)\n";
}

void cmd_run_filter(const CommonFlags& flags, const std::string& imu_path,
                    const std::string& meas_path, const std::string& gt_path) {
  const RunConfig config = resolve_config(flags);
  const auto imu = read_imu_csv(imu_path);
  const auto meas = read_meas_csv(meas_path);
  const auto gt = read_gt_csv(gt_path);
  const NavState init = init_from_gt(gt);
  const FilterRunResult result = run(imu, meas, config.filter, init);
  const fs::path out = prepare_out(flags, "run-filter", config);
  write_est_csv((out / "est.csv").string(), result.estimates);
  write_diag_jsonl((out / "diag.jsonl").string(), result.updates);
  int accepted = 0;
  for (const auto& u : result.updates) accepted += u.accepted() ? 1 : 0;
  std::cout << "wrote " << (out / "est.csv").string() << " (" << result.estimates.size()
            << " states), diag.jsonl (" << accepted << "/" << result.updates.size()
            << " updates accepted)\n";
}

void cmd_run_baseline(const CommonFlags& flags, const std::string& imu_path,
                      const std::string& meas_path, const std::string& gt_path) {
  const RunConfig config = resolve_config(flags);
  const auto imu = read_imu_csv(imu_path);
  const auto meas = read_meas_csv(meas_path);
  const auto gt = read_gt_csv(gt_path);
  const NavState init = init_from_gt(gt);
  const BaselineResult result =
      run_baseline(imu, meas, init.R, init.p, config.baseline);
  const fs::path out = prepare_out(flags, "run-baseline", config);
  write_est_csv((out / "est.csv").string(), baseline_estimates(result));
  std::cout << "wrote " << (out / "est.csv").string() << " (" << result.trajectory.size()
            << " states)\n";
}

void cmd_evaluate(const CommonFlags& flags, const std::string& est_path,
                  const std::string& gt_path, const std::string& diag_path,
                  const std::string& baseline_est_path) {
  const auto est = read_estimates(est_path);
  const auto gt = read_gt_csv(gt_path);
  nlohmann::ordered_json report;
  report["est"] = metrics_json(evaluate(nav_of(est), gt));
  if (!diag_path.empty()) {
    const auto diag = read_diag_jsonl(diag_path);
    if (diag.empty()) throw std::runtime_error(diag_path + ": no update records");
    int accepted = 0;
    double nis_sum = 0.0, nis_max = 0.0;
    int nis_count = 0;
    for (const auto& d : diag) {
      accepted += d.accepted ? 1 : 0;
      if (d.nis >= 0.0) {
        nis_sum += d.nis;
        nis_max = std::max(nis_max, d.nis);
        ++nis_count;
      }
    }
    auto& g = report["gate"];
    g["updates"] = diag.size();
    g["pass_rate"] = static_cast<double>(accepted) / static_cast<double>(diag.size());
    g["nis_mean"] = nis_count == 0 ? 0.0 : nis_sum / nis_count;
    g["nis_max"] = nis_max;
  }
  if (!baseline_est_path.empty()) {
    const auto base = read_estimates(baseline_est_path);
    const MetricsReport base_report = evaluate(nav_of(base), gt);
    report["baseline"] = metrics_json(base_report);
    if (base_report.dr > 0.0) {
      report["drift_reduction_pct"] =
          100.0 * (1.0 - report["est"]["dr"].get<double>() / base_report.dr);
    }
  }
  const fs::path out = prepare_out(flags, "evaluate", resolve_config(flags));
  const std::string text = report.dump(2) + "\n";
  detail::write_text_file((out / "report.json").string(), text);
  std::cout << text;
}

void cmd_montecarlo(const CommonFlags& flags, int n_runs) {
  if (n_runs < 2) throw ConfigError("--runs must be at least 2");
  const RunConfig config = resolve_config(flags);
  const MonteCarloSummary summary = montecarlo(config, n_runs);
  const fs::path out = prepare_out(flags, "montecarlo", config);

  std::string csv = "seed,ate,rte,dr,aye,rye,yaw_dr,nees_final,gate_pass,bias_ok\n";
  for (const auto& r : summary.runs) {
    csv += std::to_string(r.seed);
    for (double v : {r.metrics.ate, r.metrics.rte, r.metrics.dr, r.metrics.aye, r.metrics.rye,
                     r.metrics.yaw_dr, r.nees_final, r.gate_pass}) {
      csv.push_back(',');
      detail::append_number(csv, v);
    }
    csv += r.bias_ok ? ",1\n" : ",0\n";
  }
  detail::write_text_file((out / "runs.csv").string(), csv);

  auto median_of = [&](auto&& get) {
    std::vector<double> v;
    v.reserve(summary.runs.size());
    for (const auto& r : summary.runs) v.push_back(get(r));
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };

  nlohmann::ordered_json agg;
  agg["n_runs"] = n_runs;
  agg["nees_mean"] = summary.nees_mean;
  agg["nees_lo"] = summary.nees_lo;
  agg["nees_hi"] = summary.nees_hi;
  agg["nees_verdict"] = summary.nees_pass ? "PASS" : "FAIL";
  agg["gate_rate"] = summary.gate_rate;
  agg["bias_recovery_frac"] = summary.bias_recovery_frac;
  agg["median_ate"] = median_of([](const MonteCarloRunStats& r) { return r.metrics.ate; });
  agg["median_yaw_dr_abs"] =
      median_of([](const MonteCarloRunStats& r) { return std::abs(r.metrics.yaw_dr); });
  detail::write_text_file((out / "aggregate.json").string(), agg.dump(2) + "\n");
  std::cout << "NEES " << agg["nees_verdict"].get<std::string>() << ": mean "
            << summary.nees_mean << " in [" << summary.nees_lo << ", " << summary.nees_hi
            << "], gate rate " << summary.gate_rate << ", wrote "
            << (out / "aggregate.json").string() << "\n";
}

void cmd_export_net_input(const CommonFlags& flags, const std::string& imu_path,
                          const std::string& gt_path, double t_end, double window) {
  if (window <= 0.0) throw ConfigError("--window must be positive");
  const auto imu = read_imu_csv(imu_path);
  const auto gt = read_gt_csv(gt_path);
  const double t_start = t_end - window;
  const double dt = imu.size() > 1 ? (imu.back().t - imu.front().t) / (imu.size() - 1) : 0.0;
  const double tol = 0.5 * dt;
  std::vector<ImuSample> slice;
  for (const auto& s : imu) {
    if (s.t >= t_start - tol && s.t <= t_end + tol) slice.push_back(s);
  }
  if (slice.empty())
    throw std::runtime_error(imu_path + ": no samples in the requested window");
  const size_t anchor = nearest_time_index(gt, t_start);
  if (std::abs(gt[anchor].t - t_start) > tol)
    throw std::runtime_error(gt_path + ": no attitude sample at the window start");
  const auto buffer = gravity_aligned_buffer(slice, gt[anchor].R);
  const fs::path out = prepare_out(flags, "export-net-input", resolve_config(flags));
  write_buffer_csv((out / "buffer.csv").string(), buffer, dt > 0.0 ? 1.0 / dt : 0.0, t_start);
  std::cout << "wrote " << (out / "buffer.csv").string() << " (" << buffer.rows()
            << " rows)\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic inertial odometry workbench: simulator, displacement oracle, "
               "sliding-window fusion filter, concatenation baseline, metrics"};
  app.require_subcommand(1);

  CommonFlags sim_flags;
  auto* sim = app.add_subcommand("simulate", "generate gt.csv, imu.csv, meas.csv");
  add_common(sim, sim_flags, false);

  CommonFlags filt_flags;
  std::string filt_imu, filt_meas, filt_gt;
  auto* filt = app.add_subcommand("run-filter", "fuse IMU and displacement measurements");
  add_common(filt, filt_flags, true);
  filt->add_option("--imu", filt_imu, "imu.csv")->required();
  filt->add_option("--meas", filt_meas, "meas.csv")->required();
  filt->add_option("--gt", filt_gt, "gt.csv, provides the initial state")->required();

  CommonFlags base_flags;
  std::string base_imu, base_meas, base_gt;
  auto* base = app.add_subcommand("run-baseline", "concatenate measurements over AHRS yaw");
  add_common(base, base_flags, false);
  base->add_option("--imu", base_imu, "imu.csv")->required();
  base->add_option("--meas", base_meas, "meas.csv")->required();
  base->add_option("--gt", base_gt, "gt.csv, provides the initial state")->required();

  CommonFlags eval_flags;
  std::string eval_est, eval_gt, eval_diag, eval_base;
  auto* eval = app.add_subcommand("evaluate", "compute metrics against ground truth");
  add_common(eval, eval_flags, false);
  eval->add_option("--est", eval_est, "est.csv")->required();
  eval->add_option("--gt", eval_gt, "gt.csv")->required();
  eval->add_option("--diag", eval_diag, "diag.jsonl for gate statistics");
  eval->add_option("--baseline-est", eval_base, "baseline est.csv for comparison");

  CommonFlags mc_flags;
  int mc_runs = 0;
  auto* mc = app.add_subcommand("montecarlo", "repeated runs with derived seeds");
  add_common(mc, mc_flags, true);
  mc->add_option("--runs", mc_runs, "number of runs, at least 2")->required();

  CommonFlags net_flags;
  std::string net_imu, net_gt;
  double net_t = 0.0, net_window = 1.0;
  auto* net = app.add_subcommand("export-net-input", "gravity-aligned IMU window");
  add_common(net, net_flags, false);
  net->add_option("--imu", net_imu, "imu.csv")->required();
  net->add_option("--gt", net_gt, "gt.csv, provides the anchor attitude")->required();
  net->add_option("--t", net_t, "window end time")->required();
  net->add_option("--window", net_window, "window length, s");

  try {
    app.parse(argc, argv);
    if (sim->parsed()) cmd_simulate(sim_flags);
    if (filt->parsed()) cmd_run_filter(filt_flags, filt_imu, filt_meas, filt_gt);
    if (base->parsed()) cmd_run_baseline(base_flags, base_imu, base_meas, base_gt);
    if (eval->parsed()) cmd_evaluate(eval_flags, eval_est, eval_gt, eval_diag, eval_base);
    if (mc->parsed()) cmd_montecarlo(mc_flags, mc_runs);
    if (net->parsed()) cmd_export_net_input(net_flags, net_imu, net_gt, net_t, net_window);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
