#pragma once

#include <Eigen/Core>
#include <utility>

#include "hybridckf/errors.hpp"
#include "hybridckf/mlp.hpp"
#include "hybridckf/retina.hpp"

namespace hybridckf {

inline constexpr int kPressureCount = 4;   // (P1, P2, P4, P5)
inline constexpr int kObservedCount = 3;   // (P1, P2, P5)
inline constexpr int kAugmentedDim = kMlpFlatLen + kPressureCount;  // 105
inline constexpr const char* kAugmentedLayoutVersion = "aug-w101-s4-v1";

// Block layout of the augmented state [weights | pressures]. A slot for
// learnable measurement-model parameters is reserved at zero length: the
// measurement here is a fixed 0/1 selection with nothing to learn.
struct AugmentedLayout {
  static constexpr int weight_offset() { return 0; }
  static constexpr int weight_len() { return kMlpFlatLen; }
  static constexpr int meas_param_len() { return 0; }
  static constexpr int pressure_offset() { return kMlpFlatLen; }
  static constexpr int pressure_len() { return kPressureCount; }
  static constexpr int total() { return kAugmentedDim; }
};

// Discrete-time hybrid model: known Euler-stepped node balances for P1, P2,
// P5 plus the network increment for P4, with diagonal process/measurement
// noise levels used by the filter.
struct HybridModelConfig {
  double dt = 0.01;
  RetinaParams params;
  MlpParams nn_template;           // supplies in_scale / out_gain
  double q_weights = 1e-7;         // weight random-walk variance per step
  double q_pressures = 1e-6;       // pressure process variance per step
  double meas_noise_r = 0.01;      // per-channel measurement variance

  void validate() const {
    if (!(dt > 0.0)) throw ConfigError("model: dt must be > 0");
    if (!(meas_noise_r > 0.0)) throw ConfigError("model: meas_noise_r must be > 0");
    if (q_weights < 0.0 || q_pressures < 0.0) throw ConfigError("model: process noise must be >= 0");
    params.validate();
    nn_template.in_scale.validate();
  }
};

inline Eigen::VectorXd assemble(const Eigen::VectorXd& weights, const Eigen::Vector4d& pressures) {
  if (weights.size() != kMlpFlatLen) {
    throw LengthMismatch("assemble: weight block must have length " + std::to_string(kMlpFlatLen));
  }
  Eigen::VectorXd x(kAugmentedDim);
  x.head(kMlpFlatLen) = weights;
  x.tail(kPressureCount) = pressures;
  return x;
}

inline std::pair<Eigen::VectorXd, Eigen::Vector4d> split(const Eigen::VectorXd& x) {
  if (x.size() != kAugmentedDim) {
    throw LengthMismatch("split: augmented state must have length " + std::to_string(kAugmentedDim));
  }
  return {x.head(kMlpFlatLen), Eigen::Vector4d(x.tail(kPressureCount))};
}

// One Euler step of the pressure block with a caller-supplied P4 increment.
// The known rate for P4 is computed but never used by the hybrid model; the
// oracle-wired tests pass dt * rates[2] to recover the full Euler step.
template <class P4Increment>
inline Eigen::Vector4d pressure_step(const Eigen::Vector4d& p, double pin, double pout,
                                     const RetinaParams& params, double dt, P4Increment&& p4_inc) {
  const Eigen::Vector4d rates = retina_derivatives(p, pin, pout, params);
  Eigen::Vector4d next;
  next[0] = p[0] + dt * rates[0];
  next[1] = p[1] + dt * rates[1];
  next[2] = p[2] + p4_inc(p[1], p[2], p[3]);
  next[3] = p[3] + dt * rates[3];
  return next;
}

inline Eigen::Vector4d hybrid_pressure_step(const Eigen::Vector4d& p, double pin, double pout,
                                            const HybridModelConfig& cfg, const double* weights) {
  return pressure_step(p, pin, pout, cfg.params, cfg.dt,
                       [&](double p2, double p4, double p5) {
                         const double in[kMlpInputs] = {p2, p4, p5};
                         return mlp_forward_flat(weights, cfg.nn_template.in_scale,
                                                 cfg.nn_template.out_gain, in);
                       });
}

// Augmented transition: weight block copied unchanged, pressures advanced by
// one hybrid step. Deterministic; process noise lives in the filter's Q.
inline Eigen::VectorXd hybrid_transition(const Eigen::VectorXd& x, double pin, double pout,
                                         const HybridModelConfig& cfg) {
  if (x.size() != kAugmentedDim) {
    throw LengthMismatch("hybrid_transition: bad augmented state length");
  }
  Eigen::VectorXd next = x;
  const Eigen::Vector4d p = x.tail(kPressureCount);
  next.tail(kPressureCount) = hybrid_pressure_step(p, pin, pout, cfg, x.data());
  if (!next.tail(kPressureCount).allFinite()) {
    throw NonFinite("hybrid_transition: pressure update is non-finite");
  }
  return next;
}

inline Eigen::Vector3d measure_pressures(const Eigen::Vector4d& p) {
  return Eigen::Vector3d(p[0], p[1], p[3]);
}

// Selection of the observed pressures (P1, P2, P5); weights are blocked.
inline Eigen::Vector3d measure(const Eigen::VectorXd& x) {
  if (x.size() != kAugmentedDim) throw LengthMismatch("measure: bad augmented state length");
  return measure_pressures(Eigen::Vector4d(x.tail(kPressureCount)));
}

// 3x4 zero/one selection matrix for the pressure block.
inline Eigen::MatrixXd measurement_matrix_pressures() {
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(kObservedCount, kPressureCount);
  h(0, 0) = 1.0;
  h(1, 1) = 1.0;
  h(2, 3) = 1.0;
  return h;
}

// 3x105 selection matrix over the augmented state.
inline Eigen::MatrixXd measurement_matrix_augmented() {
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(kObservedCount, kAugmentedDim);
  h.rightCols(kPressureCount) = measurement_matrix_pressures();
  return h;
}

namespace detail {

// Picks the observed (P1, P2, P5) columns out of a 4-channel matrix.
inline Eigen::MatrixXd observed_columns(const Eigen::MatrixXd& four_channel) {
  Eigen::MatrixXd out(four_channel.rows(), kObservedCount);
  out.col(0) = four_channel.col(0);
  out.col(1) = four_channel.col(1);
  out.col(2) = four_channel.col(3);
  return out;
}

}  // namespace detail

}  // namespace hybridckf
