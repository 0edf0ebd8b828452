#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "hybridckf/csv.hpp"
#include "hybridckf/errors.hpp"
#include "hybridckf/gaussian.hpp"
#include "hybridckf/metrics.hpp"
#include "hybridckf/state_space.hpp"

namespace hybridckf {

struct GaussianBelief {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;

  int dim() const { return static_cast<int>(mean.size()); }
};

// The 2d third-degree cubature points, each weighted 1/(2d). Columns j and
// d+j are mean +/- sqrt(d) * L.col(j).
struct CubatureSet {
  Eigen::MatrixXd points;  // d x 2d
  double weight = 0.0;
};

// Tracks how hard ensure_spd had to work across a filter run. Rung 0 means
// plain symmetrization sufficed.
struct FilterStats {
  int max_jitter_rung = 0;
  long repairs = 0;

  void note(int rung) {
    if (rung > max_jitter_rung) max_jitter_rung = rung;
    if (rung > 0) ++repairs;
  }
};

inline CubatureSet cubature_points(const GaussianBelief& belief, double jitter_base = 1e-9,
                                   FilterStats* stats = nullptr) {
  const int d = belief.dim();
  const SpdRepair repair = ensure_spd_factor(SymmetricMatrix(belief.cov), jitter_base);
  if (stats) stats->note(repair.rung);
  const double scale = std::sqrt(static_cast<double>(d));
  CubatureSet set;
  set.points.resize(d, 2 * d);
  set.weight = 1.0 / (2.0 * d);
  for (int j = 0; j < d; ++j) {
    const Eigen::VectorXd spread = scale * repair.factor.col(j);
    set.points.col(j) = belief.mean + spread;
    set.points.col(d + j) = belief.mean - spread;
  }
  return set;
}

struct CubatureStats {
  Eigen::VectorXd mean;       // E[fn(x)]
  Eigen::MatrixXd cov;        // Cov[fn(x)]
  Eigen::MatrixXd cross;      // Cov[x, fn(x)]
};

// Weighted point statistics of fn under the belief: the third-degree rule is
// exact for polynomials of total degree <= 3.
template <class Fn>
inline CubatureStats cubature_expectation(Fn&& fn, const GaussianBelief& belief,
                                          double jitter_base = 1e-9, FilterStats* stats = nullptr) {
  const CubatureSet set = cubature_points(belief, jitter_base, stats);
  const int d = belief.dim();
  const int n = 2 * d;

  Eigen::VectorXd first = fn(Eigen::VectorXd(set.points.col(0)));
  const int m = static_cast<int>(first.size());
  Eigen::MatrixXd values(m, n);
  values.col(0) = first;
  for (int j = 1; j < n; ++j) {
    values.col(j) = fn(Eigen::VectorXd(set.points.col(j)));
  }
  if (!values.allFinite()) throw NonFinite("cubature_expectation: fn returned non-finite values");

  CubatureStats out;
  out.mean = values.rowwise().sum() * set.weight;
  const Eigen::VectorXd point_mean = set.points.rowwise().sum() * set.weight;
  Eigen::MatrixXd centered_vals = values.colwise() - out.mean;
  Eigen::MatrixXd centered_pts = set.points.colwise() - point_mean;
  out.cov.setZero(m, m);
  out.cov.selfadjointView<Eigen::Lower>().rankUpdate(centered_vals, set.weight);
  out.cov = out.cov.selfadjointView<Eigen::Lower>();
  out.cross = set.weight * centered_pts * centered_vals.transpose();
  return out;
}

// Time update: propagate the cubature points through the transition and add
// the process noise to the reconstructed covariance.
template <class Fn>
inline GaussianBelief ckf_predict_generic(const GaussianBelief& posterior, Fn&& transition,
                                          const Eigen::MatrixXd& process_noise, double jitter_base,
                                          FilterStats* stats = nullptr) {
  const CubatureSet set = cubature_points(posterior, jitter_base, stats);
  const int d = posterior.dim();
  const int n = 2 * d;
  Eigen::MatrixXd propagated(d, n);
  for (int j = 0; j < n; ++j) {
    propagated.col(j) = transition(Eigen::VectorXd(set.points.col(j)));
  }
  if (!propagated.allFinite()) throw NonFinite("ckf_predict: transition returned non-finite state");

  GaussianBelief prior;
  prior.mean = propagated.rowwise().sum() * set.weight;
  Eigen::MatrixXd centered = propagated.colwise() - prior.mean;
  prior.cov.setZero(d, d);
  prior.cov.selfadjointView<Eigen::Lower>().rankUpdate(centered, set.weight);
  prior.cov = prior.cov.selfadjointView<Eigen::Lower>();
  prior.cov += process_noise;
  return prior;
}

struct UpdateResult {
  GaussianBelief posterior;
  Eigen::VectorXd innovation;
};

// Measurement update exploiting a linear h = Hx analytically (exact for the
// selection measurement; half the work of re-propagating points).
inline UpdateResult ckf_update_linear(const GaussianBelief& prior, const Eigen::MatrixXd& h,
                                      const Eigen::MatrixXd& meas_noise, const Eigen::VectorXd& y,
                                      double jitter_base, FilterStats* stats = nullptr) {
  const Eigen::VectorXd predicted = h * prior.mean;
  const Eigen::MatrixXd cross = prior.cov * h.transpose();        // d x m
  Eigen::MatrixXd innovation_cov = h * cross + meas_noise;        // m x m
  Eigen::MatrixXd s_factor;
  if (!try_cholesky(0.5 * (innovation_cov + innovation_cov.transpose()), s_factor)) {
    throw SingularInnovation("ckf_update: innovation covariance is numerically singular");
  }
  const Eigen::MatrixXd gain = solve_cholesky(s_factor, Eigen::MatrixXd(cross.transpose())).transpose();

  UpdateResult out;
  out.innovation = y - predicted;
  out.posterior.mean = prior.mean + gain * out.innovation;
  Eigen::MatrixXd cov = prior.cov - gain * innovation_cov * gain.transpose();
  const SpdRepair repair = ensure_spd_factor(SymmetricMatrix(cov), jitter_base);
  if (stats) stats->note(repair.rung);
  out.posterior.cov = std::move(repair.matrix);
  return out;
}

// Generic cubature measurement update for nonlinear h.
template <class Hn>
inline UpdateResult ckf_update_cubature(const GaussianBelief& prior, Hn&& h,
                                        const Eigen::MatrixXd& meas_noise, const Eigen::VectorXd& y,
                                        double jitter_base, FilterStats* stats = nullptr) {
  const CubatureStats cs = cubature_expectation(h, prior, jitter_base, stats);
  Eigen::MatrixXd innovation_cov = cs.cov + meas_noise;
  Eigen::MatrixXd s_factor;
  if (!try_cholesky(0.5 * (innovation_cov + innovation_cov.transpose()), s_factor)) {
    throw SingularInnovation("ckf_update: innovation covariance is numerically singular");
  }
  const Eigen::MatrixXd gain = solve_cholesky(s_factor, Eigen::MatrixXd(cs.cross.transpose())).transpose();

  UpdateResult out;
  out.innovation = y - cs.mean;
  out.posterior.mean = prior.mean + gain * out.innovation;
  Eigen::MatrixXd cov = prior.cov - gain * innovation_cov * gain.transpose();
  const SpdRepair repair = ensure_spd_factor(SymmetricMatrix(cov), jitter_base);
  if (stats) stats->note(repair.rung);
  out.posterior.cov = std::move(repair.matrix);
  return out;
}

enum class InitPressureMode { from_first_measurement, steady_state, explicit_values };

struct FilterConfig {
  HybridModelConfig model;
  double sigma_w0 = 0.3;   // initial weight std dev
  double sigma_s0 = 5.0;   // initial pressure std dev, mmHg
  InitPressureMode init_pressures = InitPressureMode::from_first_measurement;
  Eigen::Vector4d explicit_pressures = Eigen::Vector4d::Zero();
  double jitter_base = 1e-9;
  std::optional<Eigen::VectorXd> init_weights;  // overrides mlp_init when set
  std::uint64_t init_seed = 0;
  int curve_window = 100;
  bool use_cubature_update = false;

  void validate() const {
    model.validate();
    if (!(sigma_w0 > 0.0) || !(sigma_s0 > 0.0)) throw ConfigError("filter: init std devs must be > 0");
    if (!(jitter_base > 0.0)) throw ConfigError("filter: jitter_base must be > 0");
    if (curve_window < 1) throw ConfigError("filter: curve_window must be >= 1");
  }
};

inline Eigen::Vector4d initial_pressures(const TimeSeriesDataset& ds, InitPressureMode mode,
                                         const RetinaParams& params,
                                         const Eigen::Vector4d& explicit_values) {
  switch (mode) {
    case InitPressureMode::explicit_values:
      return explicit_values;
    case InitPressureMode::steady_state:
      return steady_state(params, ds.pin_noisy[0], ds.pout_noisy[0]);
    case InitPressureMode::from_first_measurement:
    default: {
      const Eigen::Vector4d ss = steady_state(params, ds.pin_noisy[0], ds.pout_noisy[0]);
      return Eigen::Vector4d(ds.y_noisy(0, 0), ds.y_noisy(0, 1), ss[2], ds.y_noisy(0, 2));
    }
  }
}

// Convenience wrappers over the generic machinery, bound to the hybrid
// augmented model.
inline GaussianBelief ckf_predict(const GaussianBelief& posterior, double pin, double pout,
                                  const FilterConfig& cfg, FilterStats* stats = nullptr) {
  Eigen::VectorXd q_diag(kAugmentedDim);
  q_diag.head(kMlpFlatLen).setConstant(cfg.model.q_weights);
  q_diag.tail(kPressureCount).setConstant(cfg.model.q_pressures);
  return ckf_predict_generic(
      posterior,
      [&](const Eigen::VectorXd& x) { return hybrid_transition(x, pin, pout, cfg.model); },
      Eigen::MatrixXd(q_diag.asDiagonal()), cfg.jitter_base, stats);
}

inline UpdateResult ckf_update(const GaussianBelief& prior, const Eigen::Vector3d& y,
                               const FilterConfig& cfg, FilterStats* stats = nullptr) {
  const Eigen::MatrixXd r =
      cfg.model.meas_noise_r * Eigen::MatrixXd::Identity(kObservedCount, kObservedCount);
  if (cfg.use_cubature_update) {
    return ckf_update_cubature(
        prior, [](const Eigen::VectorXd& x) { return Eigen::VectorXd(measure(x)); }, r, y,
        cfg.jitter_base, stats);
  }
  return ckf_update_linear(prior, measurement_matrix_augmented(), r, y, cfg.jitter_base, stats);
}

struct FilteredTrajectory {
  std::vector<double> times;
  Eigen::MatrixXd mean;  // n x 4
  Eigen::MatrixXd var;   // n x 4 (posterior variances)
};

inline constexpr double kPressureDivergenceBound = 500.0;  // mmHg

namespace detail {

inline void check_pressures(const Eigen::Vector4d& p, int step) {
  if (!p.allFinite() || p.cwiseAbs().maxCoeff() > kPressureDivergenceBound) {
    throw Diverged("filter diverged at step " + std::to_string(step) +
                   ": pressure mean left [-500, 500] mmHg");
  }
}

}  // namespace detail

struct CkfTrainResult {
  MlpParams weights;
  FilteredTrajectory filtered;
  std::vector<double> learning_curve;  // windowed NRMSE of observed estimates vs clean truth
  FilterStats stats;
};

// Joint weight/state filtering over the 105-dimensional augmented model.
// Deterministic for a fixed dataset and config.
inline CkfTrainResult ckf_train(const TimeSeriesDataset& ds, const FilterConfig& cfg) {
  ds.validate();
  cfg.validate();
  const int n = ds.n_t();

  const MlpParams nn0 =
      cfg.init_weights ? unflatten(*cfg.init_weights, cfg.model.nn_template)
                       : mlp_init(cfg.init_seed, cfg.model.nn_template.in_scale,
                                  cfg.model.nn_template.out_gain);
  const Eigen::Vector4d p0 =
      initial_pressures(ds, cfg.init_pressures, cfg.model.params, cfg.explicit_pressures);

  GaussianBelief belief;
  belief.mean = assemble(nn0.flat, p0);
  Eigen::VectorXd cov_diag(kAugmentedDim);
  cov_diag.head(kMlpFlatLen).setConstant(cfg.sigma_w0 * cfg.sigma_w0);
  cov_diag.tail(kPressureCount).setConstant(cfg.sigma_s0 * cfg.sigma_s0);
  belief.cov = cov_diag.asDiagonal();

  CkfTrainResult result;
  result.filtered.times = ds.times;
  result.filtered.mean.resize(n, kPressureCount);
  result.filtered.var.resize(n, kPressureCount);
  result.filtered.mean.row(0) = p0.transpose();
  result.filtered.var.row(0) = belief.cov.diagonal().tail(kPressureCount).transpose();

  for (int k = 1; k < n; ++k) {
    belief = ckf_predict(belief, ds.pin_noisy[k - 1], ds.pout_noisy[k - 1], cfg, &result.stats);
    UpdateResult up = ckf_update(belief, Eigen::Vector3d(ds.y_noisy.row(k)), cfg, &result.stats);
    belief = std::move(up.posterior);
    const Eigen::Vector4d p = belief.mean.tail(kPressureCount);
    detail::check_pressures(p, k);
    result.filtered.mean.row(k) = p.transpose();
    result.filtered.var.row(k) = belief.cov.diagonal().tail(kPressureCount).transpose();
  }

  result.weights = unflatten(belief.mean.head(kMlpFlatLen), cfg.model.nn_template);
  result.learning_curve =
      windowed_nrmse(detail::observed_columns(result.filtered.mean),
                     detail::observed_columns(ds.p_true), cfg.curve_window);
  return result;
}

struct CkfTestResult {
  FilteredTrajectory filtered;
  std::vector<double> learning_curve;
  FilterStats stats;
};

// Frozen-weight test filter: a 4-dimensional state-only CKF with the trained
// network fixed inside the transition.
inline CkfTestResult ckf_test(const TimeSeriesDataset& ds, const MlpParams& weights,
                              const FilterConfig& cfg) {
  ds.validate();
  cfg.validate();
  const int n = ds.n_t();

  GaussianBelief belief;
  belief.mean = initial_pressures(ds, cfg.init_pressures, cfg.model.params, cfg.explicit_pressures);
  belief.cov = cfg.sigma_s0 * cfg.sigma_s0 * Eigen::MatrixXd::Identity(kPressureCount, kPressureCount);

  const Eigen::MatrixXd q =
      cfg.model.q_pressures * Eigen::MatrixXd::Identity(kPressureCount, kPressureCount);
  const Eigen::MatrixXd r =
      cfg.model.meas_noise_r * Eigen::MatrixXd::Identity(kObservedCount, kObservedCount);
  const Eigen::MatrixXd h = measurement_matrix_pressures();

  CkfTestResult result;
  result.filtered.times = ds.times;
  result.filtered.mean.resize(n, kPressureCount);
  result.filtered.var.resize(n, kPressureCount);
  result.filtered.mean.row(0) = belief.mean.transpose();
  result.filtered.var.row(0) = belief.cov.diagonal().transpose();

  for (int k = 1; k < n; ++k) {
    belief = ckf_predict_generic(
        belief,
        [&](const Eigen::VectorXd& x) {
          return Eigen::VectorXd(hybrid_pressure_step(Eigen::Vector4d(x), ds.pin_noisy[k - 1],
                                                      ds.pout_noisy[k - 1], cfg.model,
                                                      weights.flat.data()));
        },
        q, cfg.jitter_base, &result.stats);
    UpdateResult up;
    if (cfg.use_cubature_update) {
      up = ckf_update_cubature(
          belief,
          [](const Eigen::VectorXd& x) { return Eigen::VectorXd(measure_pressures(Eigen::Vector4d(x))); },
          r, Eigen::Vector3d(ds.y_noisy.row(k)), cfg.jitter_base, &result.stats);
    } else {
      up = ckf_update_linear(belief, h, r, Eigen::Vector3d(ds.y_noisy.row(k)), cfg.jitter_base,
                             &result.stats);
    }
    belief = std::move(up.posterior);
    const Eigen::Vector4d p = belief.mean;
    detail::check_pressures(p, k);
    result.filtered.mean.row(k) = p.transpose();
    result.filtered.var.row(k) = belief.cov.diagonal().transpose();
  }

  result.learning_curve =
      windowed_nrmse(detail::observed_columns(result.filtered.mean),
                     detail::observed_columns(ds.p_true), cfg.curve_window);
  return result;
}

// CSV schema: t,p1_mean,p1_var,p2_mean,p2_var,p4_mean,p4_var,p5_mean,p5_var.
inline void save_filtered(const FilteredTrajectory& traj, const std::filesystem::path& path) {
  CsvWriter w(path);
  w.write_row({"t", "p1_mean", "p1_var", "p2_mean", "p2_var", "p4_mean", "p4_var", "p5_mean",
               "p5_var"});
  for (std::size_t k = 0; k < traj.times.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    w.write_doubles({traj.times[k], traj.mean(i, 0), traj.var(i, 0), traj.mean(i, 1),
                     traj.var(i, 1), traj.mean(i, 2), traj.var(i, 2), traj.mean(i, 3),
                     traj.var(i, 3)});
  }
}

}  // namespace hybridckf
