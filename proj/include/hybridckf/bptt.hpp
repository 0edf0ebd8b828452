#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "hybridckf/csv.hpp"
#include "hybridckf/errors.hpp"
#include "hybridckf/metrics.hpp"
#include "hybridckf/state_space.hpp"

namespace hybridckf {

// First/second moment accumulators of the Adam optimizer.
struct AdamState {
  Eigen::VectorXd m, v;
  long step_count = 0;
  double lr = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState init(int n, double lr) {
    AdamState s;
    s.m = Eigen::VectorXd::Zero(n);
    s.v = Eigen::VectorXd::Zero(n);
    s.lr = lr;
    return s;
  }
};

// Standard Adam with bias correction: w' = w - lr * m_hat / (sqrt(v_hat) + eps).
inline std::pair<AdamState, Eigen::VectorXd> adam_step(const AdamState& state,
                                                       const Eigen::VectorXd& w,
                                                       const Eigen::VectorXd& grad) {
  if (w.size() != grad.size() || w.size() != state.m.size()) {
    throw LengthMismatch("adam_step: vector lengths differ");
  }
  AdamState next = state;
  next.step_count = state.step_count + 1;
  next.m = state.beta1 * state.m + (1.0 - state.beta1) * grad;
  next.v = state.beta2 * state.v + (1.0 - state.beta2) * grad.cwiseProduct(grad);
  const double m_corr = 1.0 - std::pow(state.beta1, static_cast<double>(next.step_count));
  const double v_corr = 1.0 - std::pow(state.beta2, static_cast<double>(next.step_count));
  const Eigen::VectorXd m_hat = next.m / m_corr;
  const Eigen::VectorXd v_hat = next.v / v_corr;
  Eigen::VectorXd denom = v_hat.cwiseSqrt();
  denom.array() += next.eps;
  Eigen::VectorXd w_next = w - next.lr * m_hat.cwiseQuotient(denom);
  return {std::move(next), std::move(w_next)};
}

struct BpttConfig {
  int epochs = 300;
  std::optional<int> truncation_window;  // nullopt = full-sequence BPTT
  enum class InitP4 { steady_state, explicit_value } init_p4 = InitP4::steady_state;
  double explicit_p4 = 0.0;
  double lr = 5e-3;
  std::uint64_t seed = 0;
  bool estimate_initial_p4 = false;  // experimental: train P4(0) as an extra parameter
  double loss_scale = 1.0;
  int divergence_patience = 10;

  void validate() const {
    if (epochs < 1) throw ConfigError("bptt: epochs must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("bptt: lr must be > 0");
    if (truncation_window && *truncation_window < 0) {
      throw ConfigError("bptt: truncation_window must be >= 0");
    }
  }
};

namespace detail {

inline double bptt_initial_p4(const TimeSeriesDataset& ds, const HybridModelConfig& model,
                              const BpttConfig& cfg) {
  if (cfg.init_p4 == BpttConfig::InitP4::explicit_value) return cfg.explicit_p4;
  return steady_state(model.params, ds.pin_noisy[0], ds.pout_noisy[0])[2];
}

inline Eigen::Vector4d bptt_initial_state(const TimeSeriesDataset& ds,
                                          const HybridModelConfig& model, const BpttConfig& cfg,
                                          std::optional<double> p4_override = std::nullopt) {
  const double p4 = p4_override ? *p4_override : bptt_initial_p4(ds, model, cfg);
  return Eigen::Vector4d(ds.y_noisy(0, 0), ds.y_noisy(0, 1), p4, ds.y_noisy(0, 2));
}

}  // namespace detail

// Open-loop rollout of the hybrid recursion from the first noisy measurement,
// driven by the noisy inputs. Measurements are never fed back.
inline Eigen::MatrixXd open_loop_rollout(const Eigen::VectorXd& weights,
                                         const TimeSeriesDataset& ds,
                                         const HybridModelConfig& model, const BpttConfig& cfg,
                                         std::optional<double> p4_override = std::nullopt) {
  const int n = ds.n_t();
  Eigen::MatrixXd traj(n, kPressureCount);
  Eigen::Vector4d p = detail::bptt_initial_state(ds, model, cfg, p4_override);
  traj.row(0) = p.transpose();
  for (int k = 1; k < n; ++k) {
    p = hybrid_pressure_step(p, ds.pin_noisy[k - 1], ds.pout_noisy[k - 1], model, weights.data());
    traj.row(k) = p.transpose();
  }
  return traj;
}

struct UnrollResult {
  double loss = 0.0;
  Eigen::MatrixXd trajectory;  // n x 4, row 0 is the initial state
  bool finite = true;
};

// Mean squared error between the rollout's observed channels and y_noisy over
// steps 1..n-1. Non-finite rollouts report +inf so the optimizer can skip.
inline UnrollResult unroll_loss(const Eigen::VectorXd& weights, const TimeSeriesDataset& ds,
                                const HybridModelConfig& model, const BpttConfig& cfg,
                                std::optional<double> p4_override = std::nullopt) {
  ds.validate();
  if (weights.size() != kMlpFlatLen) throw LengthMismatch("unroll_loss: bad weight length");
  UnrollResult out;
  out.trajectory = open_loop_rollout(weights, ds, model, cfg, p4_override);
  if (!out.trajectory.allFinite()) {
    out.loss = std::numeric_limits<double>::infinity();
    out.finite = false;
    return out;
  }
  const int n = ds.n_t();
  double acc = 0.0;
  for (int k = 1; k < n; ++k) {
    const double e1 = out.trajectory(k, 0) - ds.y_noisy(k, 0);
    const double e2 = out.trajectory(k, 1) - ds.y_noisy(k, 1);
    const double e5 = out.trajectory(k, 3) - ds.y_noisy(k, 2);
    acc += e1 * e1 + e2 * e2 + e5 * e5;
  }
  out.loss = cfg.loss_scale * acc / (3.0 * static_cast<double>(n - 1));
  if (!std::isfinite(out.loss)) out.finite = false;
  return out;
}

struct BpttGradient {
  double loss = 0.0;
  Eigen::VectorXd d_weights = Eigen::VectorXd::Zero(kMlpFlatLen);
  double d_initial_p4 = 0.0;
  bool finite = true;
};

// Exact reverse accumulation through the unrolled recursion. The known node
// balances contribute constant partials; the network block contributes
// mlp_gradient evaluated at the stored forward states. With a truncation
// window W, adjoints stop flowing across chunk boundaries (W = 0 detaches
// everything and the gradient is zero).
inline BpttGradient bptt_gradient(const Eigen::VectorXd& weights, const TimeSeriesDataset& ds,
                                  const HybridModelConfig& model, const BpttConfig& cfg,
                                  std::optional<double> p4_override = std::nullopt) {
  BpttGradient out;
  const UnrollResult fwd = unroll_loss(weights, ds, model, cfg, p4_override);
  out.loss = fwd.loss;
  if (!fwd.finite) {
    out.finite = false;
    return out;
  }
  const int n = ds.n_t();
  if (cfg.truncation_window && *cfg.truncation_window == 0) return out;

  const RetinaParams& rp = model.params;
  const double dt = model.dt;
  // Constant partials of the Euler-stepped known balances.
  const double j11 = 1.0 + dt * (-1.0 / rp.r_in1 - 1.0 / rp.r_12) / rp.c1;
  const double j12 = dt / (rp.r_12 * rp.c1);
  const double j21 = dt / (rp.r_12 * rp.c2);
  const double j22 = 1.0 + dt * (-1.0 / rp.r_12 - 1.0 / rp.r_24) / rp.c2;
  const double j24 = dt / (rp.r_24 * rp.c2);
  const double j54 = dt / (rp.r_45 * rp.c5);
  const double j55 = 1.0 + dt * (-1.0 / rp.r_45 - 1.0 / rp.r_out5) / rp.c5;

  const double scale = cfg.loss_scale * 2.0 / (3.0 * static_cast<double>(n - 1));
  Eigen::Vector4d adjoint = Eigen::Vector4d::Zero();
  for (int k = n - 1; k >= 1; --k) {
    adjoint[0] += scale * (fwd.trajectory(k, 0) - ds.y_noisy(k, 0));
    adjoint[1] += scale * (fwd.trajectory(k, 1) - ds.y_noisy(k, 1));
    adjoint[3] += scale * (fwd.trajectory(k, 3) - ds.y_noisy(k, 2));

    // State s_k was produced from s_{k-1}; accumulate weight gradient and
    // pull the adjoint back one step.
    const Eigen::Vector4d prev = fwd.trajectory.row(k - 1).transpose();
    const double nn_input[kMlpInputs] = {prev[1], prev[2], prev[3]};
    double d_input[kMlpInputs];
    mlp_gradient_accum(weights.data(), model.nn_template.in_scale, model.nn_template.out_gain,
                       nn_input, adjoint[2], out.d_weights.data(), d_input);

    Eigen::Vector4d next_adj;
    next_adj[0] = j11 * adjoint[0] + j21 * adjoint[1];
    next_adj[1] = j12 * adjoint[0] + j22 * adjoint[1] + d_input[0];
    next_adj[2] = j24 * adjoint[1] + adjoint[2] + d_input[1] + j54 * adjoint[3];
    next_adj[3] = d_input[2] + j55 * adjoint[3];
    adjoint = next_adj;

    // Truncation: states at multiples of the window are detached inputs for
    // the chunk above them, so the adjoint stops there (never at s_0, which
    // is the genuine initial condition).
    if (cfg.truncation_window && k - 1 > 0 && (k - 1) % *cfg.truncation_window == 0) {
      adjoint.setZero();
    }
  }
  out.d_initial_p4 = adjoint[2];
  return out;
}

struct BpttTrainResult {
  MlpParams weights;
  std::vector<double> train_curve;  // per-epoch NRMSE, observed channels vs clean truth
  std::vector<double> test_curve;   // per-epoch open-loop test NRMSE (empty without a test set)
  Eigen::MatrixXd test_rollout;     // final open-loop test trajectory
  double initial_p4 = 0.0;
  int skipped_epochs = 0;
};

// Full-sequence gradient descent with Adam: one batch gradient per epoch from
// a fresh Glorot initialization.
inline BpttTrainResult bptt_train(const TimeSeriesDataset& train,
                                  const TimeSeriesDataset* test, const HybridModelConfig& model,
                                  const BpttConfig& cfg) {
  train.validate();
  cfg.validate();
  model.validate();
  if (test) test->validate();

  const MlpParams nn0 = mlp_init(cfg.seed, model.nn_template.in_scale, model.nn_template.out_gain);
  Eigen::VectorXd w = nn0.flat;
  AdamState adam = AdamState::init(kMlpFlatLen, cfg.lr);

  double p4_0 = detail::bptt_initial_p4(train, model, cfg);
  AdamState adam_p4 = AdamState::init(1, cfg.lr);

  BpttTrainResult result;
  result.train_curve.reserve(static_cast<std::size_t>(cfg.epochs));
  if (test) result.test_curve.reserve(static_cast<std::size_t>(cfg.epochs));

  const Eigen::MatrixXd train_truth = detail::observed_columns(train.p_true);
  int consecutive_failures = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const BpttGradient grad = bptt_gradient(w, train, model, cfg,
                                            cfg.estimate_initial_p4 ? std::optional<double>(p4_0)
                                                                    : std::nullopt);
    if (!grad.finite) {
      ++consecutive_failures;
      ++result.skipped_epochs;
      if (consecutive_failures >= cfg.divergence_patience) {
        throw Diverged("bptt_train: " + std::to_string(consecutive_failures) +
                       " consecutive non-finite losses");
      }
    } else {
      consecutive_failures = 0;
      auto [next_adam, next_w] = adam_step(adam, w, grad.d_weights);
      adam = std::move(next_adam);
      w = std::move(next_w);
      if (cfg.estimate_initial_p4) {
        Eigen::VectorXd p4v(1), p4g(1);
        p4v[0] = p4_0;
        p4g[0] = grad.d_initial_p4;
        auto [next_adam_p4, next_p4] = adam_step(adam_p4, p4v, p4g);
        adam_p4 = std::move(next_adam_p4);
        p4_0 = next_p4[0];
      }
    }

    const Eigen::MatrixXd rollout = open_loop_rollout(
        w, train, model, cfg, cfg.estimate_initial_p4 ? std::optional<double>(p4_0) : std::nullopt);
    result.train_curve.push_back(
        rollout.allFinite()
            ? nrmse(detail::observed_columns(rollout), train_truth)
            : std::numeric_limits<double>::infinity());
    if (test) {
      const Eigen::MatrixXd test_rollout = open_loop_rollout(w, *test, model, cfg);
      result.test_curve.push_back(
          test_rollout.allFinite()
              ? nrmse(detail::observed_columns(test_rollout), detail::observed_columns(test->p_true))
              : std::numeric_limits<double>::infinity());
    }
  }

  result.weights = unflatten(w, model.nn_template);
  result.initial_p4 = p4_0;
  if (test) result.test_rollout = open_loop_rollout(w, *test, model, cfg);
  return result;
}

// CSV schema: epoch,train_nrmse,test_nrmse.
inline void save_learning_curve(const std::vector<double>& train_curve,
                                const std::vector<double>& test_curve,
                                const std::filesystem::path& path) {
  CsvWriter w(path);
  w.write_row({"epoch", "train_nrmse", "test_nrmse"});
  for (std::size_t i = 0; i < train_curve.size(); ++i) {
    const double test = i < test_curve.size() ? test_curve[i] : std::numeric_limits<double>::quiet_NaN();
    w.write_doubles({static_cast<double>(i + 1), train_curve[i], test});
  }
}

}  // namespace hybridckf
