#pragma once

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "hybridckf/errors.hpp"
#include "hybridckf/rng.hpp"

namespace hybridckf {

// Pulsatile inlet / constant outlet pressures driving the vascular network.
struct DriverConfig {
  double pin_mean = 62.0;       // mmHg
  double pin_amplitude = 8.0;   // mmHg
  double pin_frequency = 1.0;   // Hz
  double pout_mean = 14.0;      // mmHg

  void validate() const {
    if (pin_amplitude < 0.0) throw ConfigError("drivers: pin_amplitude must be >= 0");
    if (!(pin_frequency > 0.0)) throw ConfigError("drivers: pin_frequency must be > 0");
    if (!(pin_mean - pin_amplitude > pout_mean)) {
      throw ConfigError("drivers: pin_mean - pin_amplitude must exceed pout_mean (forward perfusion)");
    }
  }
};

inline double inlet_pressure(const DriverConfig& d, double t) {
  return d.pin_mean + d.pin_amplitude * std::sin(2.0 * 3.141592653589793238462643383279502884 * d.pin_frequency * t);
}

inline double outlet_pressure(const DriverConfig& d, double /*t*/) { return d.pout_mean; }

// Five-compartment RC ladder: four pressure nodes (P1 CRA, P2 arterioles,
// P4 venules, P5 CRV) joined by five resistances, capillaries purely
// resistive. Values are artifact defaults, not measured physiology.
struct RetinaParams {
  double r_in1 = 0.8;   // mmHg * s / flow-unit
  double r_12 = 1.2;
  double r_24 = 2.0;
  double r_45 = 1.0;
  double r_out5 = 0.6;
  double c1 = 0.05;     // flow-unit * s / mmHg
  double c2 = 0.08;
  double c4 = 0.12;
  double c5 = 0.10;
  DriverConfig drivers;

  void validate() const {
    const double vals[] = {r_in1, r_12, r_24, r_45, r_out5, c1, c2, c4, c5};
    for (double v : vals) {
      if (!(v > 0.0)) throw ConfigError("retina: resistances and compliances must be > 0");
    }
    drivers.validate();
  }
};

// Node balances of the ladder. Pressure order is (P1, P2, P4, P5).
inline Eigen::Vector4d retina_derivatives(const Eigen::Vector4d& p, double pin, double pout,
                                          const RetinaParams& k) {
  Eigen::Vector4d rates;
  rates[0] = ((pin - p[0]) / k.r_in1 - (p[0] - p[1]) / k.r_12) / k.c1;
  rates[1] = ((p[0] - p[1]) / k.r_12 - (p[1] - p[2]) / k.r_24) / k.c2;
  rates[2] = ((p[1] - p[2]) / k.r_24 - (p[2] - p[3]) / k.r_45) / k.c4;
  rates[3] = ((p[2] - p[3]) / k.r_45 - (p[3] - pout) / k.r_out5) / k.c5;
  return rates;
}

// Analytic fixed point of the series chain for constant drivers.
inline Eigen::Vector4d steady_state(const RetinaParams& k, double pin, double pout) {
  const double q = (pin - pout) / (k.r_in1 + k.r_12 + k.r_24 + k.r_45 + k.r_out5);
  Eigen::Vector4d p;
  p[0] = pin - q * k.r_in1;
  p[1] = p[0] - q * k.r_12;
  p[2] = p[1] - q * k.r_24;
  p[3] = p[2] - q * k.r_45;
  return p;
}

enum class IntegratorMethod { euler, rk4 };

// Uniformly sampled drivers, true pressures and (optionally) noisy
// observations. Noisy fields equal the clean ones until inject_noise runs.
struct TimeSeriesDataset {
  double dt = 0.0;
  std::vector<double> times;
  std::vector<double> pin, pout;
  std::vector<double> pin_noisy, pout_noisy;
  Eigen::MatrixXd p_true;   // n_t x 4, columns (P1, P2, P4, P5)
  Eigen::MatrixXd y_noisy;  // n_t x 3, columns (P1, P2, P5)
  std::optional<double> snr_db;
  std::uint64_t seed = 0;

  int n_t() const { return static_cast<int>(times.size()); }

  void validate() const {
    const auto n = times.size();
    if (n < 2) throw ConfigError("dataset: need at least 2 samples");
    if (pin.size() != n || pout.size() != n || pin_noisy.size() != n || pout_noisy.size() != n ||
        static_cast<std::size_t>(p_true.rows()) != n || static_cast<std::size_t>(y_noisy.rows()) != n) {
      throw LengthMismatch("dataset: sequence lengths differ");
    }
    if (p_true.cols() != 4 || y_noisy.cols() != 3) {
      throw LengthMismatch("dataset: expected 4 truth channels and 3 observed channels");
    }
    if (!(dt > 0.0)) throw ConfigError("dataset: dt must be > 0");
  }
};

// Integrates the ladder ODEs with continuously evaluated drivers. RK4 is the
// reference integrator; Euler exists for convergence checks and matches the
// hybrid model's discretization.
inline TimeSeriesDataset simulate_ground_truth(const RetinaParams& params, double dt, int n_t,
                                               IntegratorMethod method = IntegratorMethod::rk4,
                                               std::optional<Eigen::Vector4d> initial = std::nullopt) {
  if (!(dt > 0.0)) throw ConfigError("simulate_ground_truth: dt must be > 0");
  if (n_t < 2) throw ConfigError("simulate_ground_truth: n_t must be >= 2");
  params.validate();

  TimeSeriesDataset ds;
  ds.dt = dt;
  ds.times.resize(n_t);
  ds.pin.resize(n_t);
  ds.pout.resize(n_t);
  ds.p_true.resize(n_t, 4);
  ds.y_noisy.resize(n_t, 3);

  Eigen::Vector4d p = initial ? *initial
                              : steady_state(params, inlet_pressure(params.drivers, 0.0),
                                             outlet_pressure(params.drivers, 0.0));
  for (int k = 0; k < n_t; ++k) {
    const double t = k * dt;
    ds.times[k] = t;
    ds.pin[k] = inlet_pressure(params.drivers, t);
    ds.pout[k] = outlet_pressure(params.drivers, t);
    ds.p_true.row(k) = p.transpose();
    if (!p.allFinite()) {
      throw NonFinite("simulate_ground_truth: state became non-finite (dt too large for the time constants?)");
    }
    if (k + 1 == n_t) break;

    if (method == IntegratorMethod::euler) {
      p += dt * retina_derivatives(p, ds.pin[k], ds.pout[k], params);
    } else {
      const double th = t + 0.5 * dt;
      const double t1 = t + dt;
      const double pin_h = inlet_pressure(params.drivers, th);
      const double pout_h = outlet_pressure(params.drivers, th);
      const double pin_1 = inlet_pressure(params.drivers, t1);
      const double pout_1 = outlet_pressure(params.drivers, t1);
      const Eigen::Vector4d k1 = retina_derivatives(p, ds.pin[k], ds.pout[k], params);
      const Eigen::Vector4d k2 = retina_derivatives(p + 0.5 * dt * k1, pin_h, pout_h, params);
      const Eigen::Vector4d k3 = retina_derivatives(p + 0.5 * dt * k2, pin_h, pout_h, params);
      const Eigen::Vector4d k4 = retina_derivatives(p + dt * k3, pin_1, pout_1, params);
      p += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
  }

  ds.pin_noisy = ds.pin;
  ds.pout_noisy = ds.pout;
  ds.y_noisy.col(0) = ds.p_true.col(0);
  ds.y_noisy.col(1) = ds.p_true.col(1);
  ds.y_noisy.col(2) = ds.p_true.col(3);
  ds.snr_db = std::nullopt;
  return ds;
}

// Mean squared deviation from the time mean (AC power).
inline double ac_power(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double acc = 0.0;
  for (double v : x) acc += (v - mean) * (v - mean);
  return acc / static_cast<double>(x.size());
}

inline double ac_power(const Eigen::VectorXd& x) {
  const double mean = x.mean();
  return (x.array() - mean).square().mean();
}

// Per-channel noise sigmas for a requested SNR (dB against AC power).
// Channel order: pin, pout, P1, P2, P5. pout is constant, so its sigma is the
// mean of the other channels' sigmas.
inline std::array<double, 5> noise_sigmas(const TimeSeriesDataset& ds, double snr_db) {
  const double ratio = std::pow(10.0, snr_db / 10.0);
  std::array<double, 5> sigma{};
  sigma[0] = std::sqrt(ac_power(ds.pin) / ratio);
  sigma[2] = std::sqrt(ac_power(Eigen::VectorXd(ds.p_true.col(0))) / ratio);
  sigma[3] = std::sqrt(ac_power(Eigen::VectorXd(ds.p_true.col(1))) / ratio);
  sigma[4] = std::sqrt(ac_power(Eigen::VectorXd(ds.p_true.col(3))) / ratio);
  sigma[1] = (sigma[0] + sigma[2] + sigma[3] + sigma[4]) / 4.0;
  return sigma;
}

// Adds white Gaussian noise to the drivers and the three observable
// pressures. Truth channels (including the unobserved P4) are untouched.
// Each channel draws from its own substream of `seed`.
inline TimeSeriesDataset inject_noise(const TimeSeriesDataset& ds, std::optional<double> snr_db,
                                      std::uint64_t seed) {
  ds.validate();
  if (ds.snr_db) throw ConfigError("inject_noise: dataset already carries noise");
  TimeSeriesDataset out = ds;
  if (!snr_db) return out;

  const auto sigma = noise_sigmas(ds, *snr_db);
  const int n = ds.n_t();
  const auto add_noise = [&](std::vector<double>& x, double s, int channel) {
    NormalStream stream(derive_seed(seed, "noise-channel", static_cast<std::uint64_t>(channel)));
    for (int k = 0; k < n; ++k) x[k] += s * stream.next();
  };
  out.pin_noisy = ds.pin;
  out.pout_noisy = ds.pout;
  add_noise(out.pin_noisy, sigma[0], 0);
  add_noise(out.pout_noisy, sigma[1], 1);
  for (int c = 0; c < 3; ++c) {
    NormalStream stream(derive_seed(seed, "noise-channel", static_cast<std::uint64_t>(2 + c)));
    for (int k = 0; k < n; ++k) out.y_noisy(k, c) += sigma[2 + c] * stream.next();
  }
  out.snr_db = snr_db;
  out.seed = seed;
  return out;
}

}  // namespace hybridckf
