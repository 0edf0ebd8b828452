#pragma once

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include "hybridckf/csv.hpp"
#include "hybridckf/errors.hpp"
#include "hybridckf/rng.hpp"

namespace hybridckf {

inline constexpr int kMlpInputs = 3;
inline constexpr int kMlpHidden = 20;
// w1 (20x3, row-major) | b1 (20) | w2 (20) | b2 -> 101 trainable values.
inline constexpr int kMlpFlatLen = kMlpHidden * kMlpInputs + kMlpHidden + kMlpHidden + 1;
inline constexpr const char* kMlpLayoutVersion = "mlp-3x20x1-rowmajor-v1";

// Affine input normalization: scaled_i = (x_i - offset_i) * gain_i. Fixed
// configuration, not part of the trainable parameter vector.
struct InputScale {
  std::array<double, kMlpInputs> offset{0.0, 0.0, 0.0};
  std::array<double, kMlpInputs> gain{1.0, 1.0, 1.0};

  static InputScale identity() { return InputScale{}; }

  // offset = range midpoint, gain = 2 / range width, mapping the nominal
  // range onto [-1, 1].
  static InputScale from_ranges(const std::array<double, kMlpInputs>& lo,
                                const std::array<double, kMlpInputs>& hi) {
    InputScale s;
    for (int i = 0; i < kMlpInputs; ++i) {
      const double width = hi[i] - lo[i];
      if (!(width > 0.0)) throw ConfigError("InputScale: range width must be > 0");
      s.offset[i] = 0.5 * (lo[i] + hi[i]);
      s.gain[i] = 2.0 / width;
    }
    return s;
  }

  void validate() const {
    for (double g : gain) {
      if (g == 0.0) throw ConfigError("InputScale: gain must be nonzero");
    }
  }
};

// Single-hidden-layer tanh network. Weights live in one flat vector (the
// layout the filter state uses); named accessors expose the blocks.
struct MlpParams {
  Eigen::VectorXd flat = Eigen::VectorXd::Zero(kMlpFlatLen);
  InputScale in_scale = InputScale::identity();
  double out_gain = 1.0;

  double w1(int unit, int input) const { return flat[unit * kMlpInputs + input]; }
  double& w1(int unit, int input) { return flat[unit * kMlpInputs + input]; }
  double b1(int unit) const { return flat[kMlpHidden * kMlpInputs + unit]; }
  double& b1(int unit) { return flat[kMlpHidden * kMlpInputs + unit]; }
  double w2(int unit) const { return flat[kMlpHidden * kMlpInputs + kMlpHidden + unit]; }
  double& w2(int unit) { return flat[kMlpHidden * kMlpInputs + kMlpHidden + unit]; }
  double b2() const { return flat[kMlpFlatLen - 1]; }
  double& b2() { return flat[kMlpFlatLen - 1]; }
};

// out_gain * (w2 . tanh(w1 u + b1) + b2) with u the scaled input. The output
// is the per-step P4 increment; the time step is absorbed in the weights.
inline double mlp_forward_flat(const double* flat, const InputScale& scale, double out_gain,
                               const double* input) {
  double u[kMlpInputs];
  for (int i = 0; i < kMlpInputs; ++i) u[i] = (input[i] - scale.offset[i]) * scale.gain[i];
  const double* w1 = flat;
  const double* b1 = flat + kMlpHidden * kMlpInputs;
  const double* w2 = b1 + kMlpHidden;
  const double b2 = flat[kMlpFlatLen - 1];
  double acc = b2;
  for (int j = 0; j < kMlpHidden; ++j) {
    double a = b1[j];
    for (int i = 0; i < kMlpInputs; ++i) a += w1[j * kMlpInputs + i] * u[i];
    acc += w2[j] * std::tanh(a);
  }
  return out_gain * acc;
}

inline double mlp_forward(const MlpParams& p, const Eigen::Vector3d& input) {
  return mlp_forward_flat(p.flat.data(), p.in_scale, p.out_gain, input.data());
}

enum class InitScheme { uniform_glorot };

// Uniform Glorot weights, zero biases. Draw order is w1 row-major then w2,
// so equal seeds give bit-identical parameters.
inline MlpParams mlp_init(std::uint64_t seed, const InputScale& scale, double out_gain = 1.0,
                          InitScheme scheme = InitScheme::uniform_glorot) {
  (void)scheme;  // single scheme
  scale.validate();
  MlpParams p;
  p.in_scale = scale;
  p.out_gain = out_gain;
  NormalStream stream(seed);
  const double bound1 = std::sqrt(6.0 / (kMlpInputs + kMlpHidden));
  const double bound2 = std::sqrt(6.0 / (kMlpHidden + 1));
  for (int j = 0; j < kMlpHidden; ++j) {
    for (int i = 0; i < kMlpInputs; ++i) p.w1(j, i) = stream.uniform_in(-bound1, bound1);
  }
  for (int j = 0; j < kMlpHidden; ++j) p.w2(j) = stream.uniform_in(-bound2, bound2);
  return p;
}

inline Eigen::VectorXd flatten(const MlpParams& p) { return p.flat; }

// Rebuilds parameters from a flat vector, keeping the template's scaling.
inline MlpParams unflatten(const Eigen::VectorXd& v, const MlpParams& templ) {
  if (v.size() != kMlpFlatLen) {
    throw LengthMismatch("unflatten: expected " + std::to_string(kMlpFlatLen) + " values, got " +
                         std::to_string(v.size()));
  }
  MlpParams p = templ;
  p.flat = v;
  return p;
}

// Reverse-mode derivatives of upstream * mlp_forward. Accumulates the weight
// gradient into d_weights (length 101) and writes the input gradient.
inline void mlp_gradient_accum(const double* flat, const InputScale& scale, double out_gain,
                               const double* input, double upstream, double* d_weights,
                               double* d_input) {
  double u[kMlpInputs];
  for (int i = 0; i < kMlpInputs; ++i) u[i] = (input[i] - scale.offset[i]) * scale.gain[i];
  const double* w1 = flat;
  const double* b1 = flat + kMlpHidden * kMlpInputs;
  const double* w2 = b1 + kMlpHidden;
  double* dw1 = d_weights;
  double* db1 = d_weights + kMlpHidden * kMlpInputs;
  double* dw2 = db1 + kMlpHidden;
  double du[kMlpInputs] = {0.0, 0.0, 0.0};

  const double g = upstream * out_gain;
  d_weights[kMlpFlatLen - 1] += g;  // b2
  for (int j = 0; j < kMlpHidden; ++j) {
    double a = b1[j];
    for (int i = 0; i < kMlpInputs; ++i) a += w1[j * kMlpInputs + i] * u[i];
    const double h = std::tanh(a);
    dw2[j] += g * h;
    const double delta = g * w2[j] * (1.0 - h * h);
    db1[j] += delta;
    for (int i = 0; i < kMlpInputs; ++i) {
      dw1[j * kMlpInputs + i] += delta * u[i];
      du[i] += delta * w1[j * kMlpInputs + i];
    }
  }
  for (int i = 0; i < kMlpInputs; ++i) d_input[i] = du[i] * scale.gain[i];
}

struct MlpGradient {
  Eigen::VectorXd d_weights = Eigen::VectorXd::Zero(kMlpFlatLen);
  Eigen::Vector3d d_input = Eigen::Vector3d::Zero();
};

inline MlpGradient mlp_gradient(const MlpParams& p, const Eigen::Vector3d& input, double upstream) {
  MlpGradient g;
  mlp_gradient_accum(p.flat.data(), p.in_scale, p.out_gain, input.data(), upstream,
                     g.d_weights.data(), g.d_input.data());
  return g;
}

// Weight file: one metadata line (layout version, in_scale, out_gain), then
// the 101 flat values one per line, all in round-trip decimal form.
inline void save_mlp(const MlpParams& p, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write weights file: " + path.string());
  out << kMlpLayoutVersion;
  for (int i = 0; i < kMlpInputs; ++i) {
    out << ',' << format_double(p.in_scale.offset[i]) << ',' << format_double(p.in_scale.gain[i]);
  }
  out << ',' << format_double(p.out_gain) << '\n';
  for (int i = 0; i < kMlpFlatLen; ++i) out << format_double(p.flat[i]) << '\n';
}

inline MlpParams load_mlp(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("cannot open weights file: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("empty weights file: " + path.string());
  const auto meta = split_csv_line(line);
  if (meta.size() != 2 + 2 * kMlpInputs || meta[0] != kMlpLayoutVersion) {
    throw ConfigError("weights file layout mismatch: expected '" + std::string(kMlpLayoutVersion) +
                      "', got '" + (meta.empty() ? "" : meta[0]) + "'");
  }
  MlpParams p;
  for (int i = 0; i < kMlpInputs; ++i) {
    p.in_scale.offset[i] = parse_double(meta[1 + 2 * i]);
    p.in_scale.gain[i] = parse_double(meta[2 + 2 * i]);
  }
  p.out_gain = parse_double(meta[1 + 2 * kMlpInputs]);
  for (int i = 0; i < kMlpFlatLen; ++i) {
    if (!std::getline(in, line)) throw ConfigError("weights file truncated: " + path.string());
    p.flat[i] = parse_double(line);
  }
  return p;
}

}  // namespace hybridckf
