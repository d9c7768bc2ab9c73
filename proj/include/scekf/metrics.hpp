#pragma once

#include <Eigen/Cholesky>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "scekf/so3.hpp"

namespace scekf {

struct MetricsReport {
  double ate = 0.0;     // m, RMSE of position error
  double rte = 0.0;     // m, RMSE of yaw-aligned relative displacement error
  double dr = 0.0;      // percent of ground-truth path length
  double aye = 0.0;     // deg, RMSE of wrapped yaw error
  double rye = 0.0;     // deg, RMSE of relative yaw error
  double yaw_dr = 0.0;  // deg/hour, signed endpoint yaw drift rate
  std::optional<double> nll;
  std::optional<double> mahalanobis_outlier_frac;
  std::optional<double> nees_mean;
  int gimbal_skipped = 0;
};

namespace detail {

template <class Traj>
void require_increasing(const Traj& traj, const char* what) {
  if (traj.size() < 2) throw std::invalid_argument(std::string(what) + ": too few samples");
  for (size_t k = 1; k < traj.size(); ++k) {
    if (traj[k].t <= traj[k - 1].t)
      throw std::invalid_argument(std::string(what) + ": timestamps must increase");
  }
}

}  // namespace detail

// Pair est samples with gt samples by nearest timestamp, keeping matches
// within half of the gt sample period. No interpolation.
template <class EstTraj, class GtTraj>
std::vector<std::pair<size_t, size_t>> align_trajectories(const EstTraj& est,
                                                          const GtTraj& gt) {
  detail::require_increasing(est, "align_trajectories: est");
  detail::require_increasing(gt, "align_trajectories: gt");
  const double period = (gt.back().t - gt.front().t) / static_cast<double>(gt.size() - 1);
  const double tol = 0.5 * period;
  std::vector<std::pair<size_t, size_t>> pairs;
  size_t g = 0;
  for (size_t e = 0; e < est.size(); ++e) {
    while (g + 1 < gt.size() &&
           std::abs(gt[g + 1].t - est[e].t) <= std::abs(gt[g].t - est[e].t)) {
      ++g;
    }
    if (std::abs(gt[g].t - est[e].t) <= tol) pairs.emplace_back(e, g);
  }
  if (pairs.empty()) throw std::invalid_argument("align_trajectories: no time overlap");
  return pairs;
}

template <class EstTraj, class GtTraj>
double ate(const EstTraj& est, const GtTraj& gt) {
  const auto pairs = align_trajectories(est, gt);
  double acc = 0.0;
  for (const auto& [e, g] : pairs) acc += (Vec3(est[e].p) - Vec3(gt[g].p)).squaredNorm();
  return std::sqrt(acc / static_cast<double>(pairs.size()));
}

namespace detail {

// Non-overlapping windows of duration dt over the aligned pairs: for each
// window start, the aligned sample nearest to start + dt within half a period.
template <class GtTraj>
std::vector<std::pair<size_t, size_t>> window_bounds(
    const std::vector<std::pair<size_t, size_t>>& pairs, const GtTraj& gt, double dt) {
  const double period = (gt.back().t - gt.front().t) / static_cast<double>(gt.size() - 1);
  std::vector<std::pair<size_t, size_t>> windows;  // indices into pairs
  size_t start = 0;
  while (start < pairs.size()) {
    const double t_end = gt[pairs[start].second].t + dt;
    size_t end = start;
    while (end + 1 < pairs.size() && gt[pairs[end + 1].second].t <= t_end + 0.5 * period) ++end;
    if (std::abs(gt[pairs[end].second].t - t_end) > 0.5 * period) break;
    windows.emplace_back(start, end);
    start = end;
  }
  return windows;
}

}  // namespace detail

template <class EstTraj, class GtTraj>
double rte(const EstTraj& est, const GtTraj& gt, double dt = 1.0) {
  const auto pairs = align_trajectories(est, gt);
  const auto windows = detail::window_bounds(pairs, gt, dt);
  if (windows.empty()) throw std::invalid_argument("rte: no complete window");
  double acc = 0.0;
  int used = 0;
  for (const auto& [a, b] : windows) {
    const auto& [ea, ga] = pairs[a];
    const auto& [eb, gb] = pairs[b];
    const auto yaw_gt = decompose_euler_xyz(Mat3(gt[ga].R));
    const auto yaw_est = decompose_euler_xyz(Mat3(est[ea].R));
    if (!yaw_gt || !yaw_est) continue;  // gimbal-locked window start
    const Vec3 rel_gt = Vec3(gt[gb].p) - Vec3(gt[ga].p);
    const Vec3 rel_est = Vec3(est[eb].p) - Vec3(est[ea].p);
    const Vec3 err =
        rel_gt - yaw_rotation(yaw_gt->yaw) * yaw_rotation(yaw_est->yaw).transpose() * rel_est;
    acc += err.squaredNorm();
    ++used;
  }
  if (used == 0) throw std::invalid_argument("rte: all windows gimbal locked");
  return std::sqrt(acc / used);
}

template <class GtTraj>
double path_length(const GtTraj& gt) {
  double len = 0.0;
  for (size_t k = 1; k < gt.size(); ++k) len += (Vec3(gt[k].p) - Vec3(gt[k - 1].p)).norm();
  return len;
}

template <class EstTraj, class GtTraj>
double dr(const EstTraj& est, const GtTraj& gt) {
  const auto pairs = align_trajectories(est, gt);
  const double len = path_length(gt);
  if (len <= 1e-12) throw std::invalid_argument("dr: ground-truth path length is zero");
  const auto& [e, g] = pairs.back();
  return 100.0 * (Vec3(est[e].p) - Vec3(gt[g].p)).norm() / len;
}

struct YawMetrics {
  double aye = 0.0;     // deg
  double rye = 0.0;     // deg
  double yaw_dr = 0.0;  // deg/hour, signed
  int gimbal_skipped = 0;
};

template <class EstTraj, class GtTraj>
YawMetrics yaw_metrics(const EstTraj& est, const GtTraj& gt, double dt = 1.0) {
  const auto pairs = align_trajectories(est, gt);
  YawMetrics out;

  struct YawPair {
    double t, yaw_gt, yaw_est;
  };
  std::vector<YawPair> yaws;
  yaws.reserve(pairs.size());
  for (const auto& [e, g] : pairs) {
    const auto ye = decompose_euler_xyz(Mat3(est[e].R));
    const auto yg = decompose_euler_xyz(Mat3(gt[g].R));
    if (!ye || !yg) {
      ++out.gimbal_skipped;
      continue;
    }
    yaws.push_back({gt[g].t, yg->yaw, ye->yaw});
  }
  if (yaws.size() < 2) throw std::invalid_argument("yaw_metrics: too few usable samples");

  const double rad2deg = 180.0 / kPi;
  double acc = 0.0;
  for (const auto& y : yaws) {
    const double err = wrap_angle(y.yaw_gt - y.yaw_est);
    acc += err * err;
  }
  out.aye = rad2deg * std::sqrt(acc / static_cast<double>(yaws.size()));

  const double period = (gt.back().t - gt.front().t) / static_cast<double>(gt.size() - 1);
  double racc = 0.0;
  int rcount = 0;
  size_t start = 0;
  while (start < yaws.size()) {
    const double t_end = yaws[start].t + dt;
    size_t end = start;
    while (end + 1 < yaws.size() && yaws[end + 1].t <= t_end + 0.5 * period) ++end;
    if (std::abs(yaws[end].t - t_end) > 0.5 * period) break;
    const double rel = wrap_angle((yaws[end].yaw_gt - yaws[start].yaw_gt) -
                                  (yaws[end].yaw_est - yaws[start].yaw_est));
    racc += rel * rel;
    ++rcount;
    start = end;
  }
  if (rcount > 0) out.rye = rad2deg * std::sqrt(racc / rcount);

  // Drift rate: endpoint yaw error relative to the initial offset, so a
  // constant misalignment reports zero drift.
  const double duration = yaws.back().t - yaws.front().t;
  const double drift = wrap_angle((yaws.back().yaw_gt - yaws.back().yaw_est) -
                                  (yaws.front().yaw_gt - yaws.front().yaw_est));
  out.yaw_dr = rad2deg * drift / duration * 3600.0;
  return out;
}

// Mean Gaussian negative log-likelihood of residuals under per-sample diagonal
// covariances, constant term included so values are comparable across runs.
inline double nll(const std::vector<std::pair<Vec3, Vec3>>& errors) {
  if (errors.empty()) throw std::invalid_argument("nll: empty input");
  double acc = 0.0;
  for (const auto& [e, sigma] : errors) {
    if (!(sigma.array() > 0.0).all()) throw std::invalid_argument("nll: sigma must be positive");
    const Vec3 var = sigma.cwiseProduct(sigma);
    acc += 0.5 * std::log(var.prod()) + 0.5 * (e.array().square() / var.array()).sum();
  }
  return acc / static_cast<double>(errors.size()) + 1.5 * std::log(2.0 * kPi);
}

inline double mahalanobis_outlier_frac(const std::vector<std::pair<Vec3, Vec3>>& errors,
                                       double critical = 11.345) {
  if (errors.empty()) throw std::invalid_argument("mahalanobis_outlier_frac: empty input");
  int outliers = 0;
  for (const auto& [e, sigma] : errors) {
    if (!(sigma.array() > 0.0).all())
      throw std::invalid_argument("mahalanobis_outlier_frac: sigma must be positive");
    const double d2 = (e.array().square() / sigma.array().square()).sum();
    if (d2 > critical) ++outliers;
  }
  return static_cast<double>(outliers) / static_cast<double>(errors.size());
}

inline double nees(const std::vector<std::pair<Eigen::VectorXd, Eigen::MatrixXd>>& errors) {
  if (errors.empty()) throw std::invalid_argument("nees: empty input");
  double acc = 0.0;
  for (const auto& [dx, P] : errors) {
    const Eigen::LLT<Eigen::MatrixXd> llt(P);
    if (llt.info() != Eigen::Success)
      throw std::invalid_argument("nees: covariance is not positive definite");
    acc += dx.dot(llt.solve(dx));
  }
  return acc / static_cast<double>(errors.size());
}

template <class EstTraj, class GtTraj>
MetricsReport evaluate(const EstTraj& est, const GtTraj& gt, double rte_dt = 1.0) {
  MetricsReport report;
  report.ate = ate(est, gt);
  report.rte = rte(est, gt, rte_dt);
  report.dr = dr(est, gt);
  const YawMetrics y = yaw_metrics(est, gt, rte_dt);
  report.aye = y.aye;
  report.rye = y.rye;
  report.yaw_dr = y.yaw_dr;
  report.gimbal_skipped = y.gimbal_skipped;
  return report;
}

}  // namespace scekf
