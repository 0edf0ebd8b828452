#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "hybridckf/bptt.hpp"
#include "hybridckf/ckf.hpp"
#include "hybridckf/dataset_io.hpp"
#include "hybridckf/metrics.hpp"

namespace hybridckf {

inline constexpr const char* kArtifactTreeVersion = "artifact-tree-v1";

struct SimConfig {
  double dt = 0.01;
  double train_duration = 12.0;  // seconds
  double test_duration = 8.0;
  IntegratorMethod integrator = IntegratorMethod::rk4;

  int train_steps() const { return static_cast<int>(std::lround(train_duration / dt)) + 1; }
  int test_steps() const { return static_cast<int>(std::lround(test_duration / dt)) + 1; }

  void validate() const {
    if (!(dt > 0.0)) throw ConfigError("sim.dt must be > 0");
    if (train_steps() < 2 || test_steps() < 2) throw ConfigError("sim horizons too short for dt");
  }
};

struct NnSettings {
  // Output scale of the network head. The per-step P4 increment is on the
  // order of 0.1 mmHg, so a 0.1 gain centers the randomly initialized
  // function class on the physical scale.
  double out_gain = 0.1;
  double range_width = 20.0;  // mmHg window around the steady pressures

  void validate() const {
    if (!(range_width > 0.0)) throw ConfigError("nn.range_width must be > 0");
  }
};

struct FilterSettings {
  double q_weights = 1e-7;
  double q_pressures = 1e-6;
  std::optional<double> meas_noise_r;  // unset = derive from the requested SNR
  double sigma_w0 = 0.3;
  double sigma_s0 = 5.0;
  double jitter_base = 1e-9;
  std::string init_pressures = "from_first_measurement";  // or a 4-array in the config
  std::optional<Eigen::Vector4d> explicit_pressures;
  int curve_window = 100;
  bool use_cubature_update = false;

  InitPressureMode init_mode() const {
    if (explicit_pressures) return InitPressureMode::explicit_values;
    if (init_pressures == "from_first_measurement") return InitPressureMode::from_first_measurement;
    if (init_pressures == "steady_state") return InitPressureMode::steady_state;
    throw ConfigError(
        "filter.init_pressures must be from_first_measurement, steady_state, or a 4-array");
  }
};

struct BpttSettings {
  int epochs = 300;
  double lr = 5e-3;
  std::optional<int> truncation_window;
  std::string init_p4 = "steady_state";
  bool estimate_initial_p4 = false;
};

struct ExperimentConfig {
  RetinaParams retina;
  SimConfig sim;
  std::vector<double> snr_levels = {49.53, 39.52, 32.58, 29.51, 22.56};
  std::vector<std::string> methods = {"ckf", "bptt"};
  int n_runs = 10;
  FilterSettings filter;
  BpttSettings bptt;
  NnSettings nn;
  std::string output_dir = "out";
  std::uint64_t master_seed = 1234;
  int jobs = 0;  // 0 = hardware concurrency

  void validate() const {
    retina.validate();
    sim.validate();
    nn.validate();
    if (snr_levels.empty()) throw ConfigError("snr_levels must be nonempty");
    if (n_runs < 1) throw ConfigError("n_runs must be >= 1");
    if (methods.empty()) throw ConfigError("methods must be nonempty");
    for (const auto& m : methods) {
      if (m != "ckf" && m != "bptt") throw ConfigError("methods entries must be ckf or bptt");
    }
    if (bptt.epochs < 1) throw ConfigError("bptt.epochs must be >= 1");
    if (!(bptt.lr > 0.0)) throw ConfigError("bptt.lr must be > 0");
    filter.init_mode();
  }
};

// ---------------------------------------------------------------------------
// JSON config parsing (every field has a default; unknown keys are rejected
// with their full dotted path)
// ---------------------------------------------------------------------------

namespace detail {

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                       const std::string& prefix) {
  if (!j.is_object()) throw ConfigError("config section '" + prefix + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) throw ConfigError("unknown config key: " + prefix + it.key());
  }
}

template <class T>
inline void read_field(const nlohmann::json& j, const char* key, T& out, const std::string& prefix) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key has wrong type: " + prefix + key);
  }
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  ExperimentConfig cfg;
  detail::check_keys(j,
                     {"retina", "sim", "snr_levels", "methods", "n_runs", "filter", "bptt", "nn",
                      "output_dir", "master_seed", "jobs"},
                     "");

  if (j.contains("retina")) {
    const auto& r = j.at("retina");
    detail::check_keys(r, {"r_in1", "r_12", "r_24", "r_45", "r_out5", "c1", "c2", "c4", "c5", "drivers"},
                       "retina.");
    detail::read_field(r, "r_in1", cfg.retina.r_in1, "retina.");
    detail::read_field(r, "r_12", cfg.retina.r_12, "retina.");
    detail::read_field(r, "r_24", cfg.retina.r_24, "retina.");
    detail::read_field(r, "r_45", cfg.retina.r_45, "retina.");
    detail::read_field(r, "r_out5", cfg.retina.r_out5, "retina.");
    detail::read_field(r, "c1", cfg.retina.c1, "retina.");
    detail::read_field(r, "c2", cfg.retina.c2, "retina.");
    detail::read_field(r, "c4", cfg.retina.c4, "retina.");
    detail::read_field(r, "c5", cfg.retina.c5, "retina.");
    if (r.contains("drivers")) {
      const auto& d = r.at("drivers");
      detail::check_keys(d, {"pin_mean", "pin_amplitude", "pin_frequency", "pout_mean"},
                         "retina.drivers.");
      detail::read_field(d, "pin_mean", cfg.retina.drivers.pin_mean, "retina.drivers.");
      detail::read_field(d, "pin_amplitude", cfg.retina.drivers.pin_amplitude, "retina.drivers.");
      detail::read_field(d, "pin_frequency", cfg.retina.drivers.pin_frequency, "retina.drivers.");
      detail::read_field(d, "pout_mean", cfg.retina.drivers.pout_mean, "retina.drivers.");
    }
  }

  if (j.contains("sim")) {
    const auto& s = j.at("sim");
    detail::check_keys(s, {"dt", "train_duration", "test_duration", "integrator"}, "sim.");
    detail::read_field(s, "dt", cfg.sim.dt, "sim.");
    detail::read_field(s, "train_duration", cfg.sim.train_duration, "sim.");
    detail::read_field(s, "test_duration", cfg.sim.test_duration, "sim.");
    if (s.contains("integrator")) {
      const std::string name = s.at("integrator").get<std::string>();
      if (name == "euler") {
        cfg.sim.integrator = IntegratorMethod::euler;
      } else if (name == "rk4") {
        cfg.sim.integrator = IntegratorMethod::rk4;
      } else {
        throw ConfigError("sim.integrator must be euler or rk4");
      }
    }
  }

  detail::read_field(j, "snr_levels", cfg.snr_levels, "");
  detail::read_field(j, "methods", cfg.methods, "");
  detail::read_field(j, "n_runs", cfg.n_runs, "");

  if (j.contains("filter")) {
    const auto& f = j.at("filter");
    detail::check_keys(f,
                       {"q_weights", "q_pressures", "meas_noise_r", "sigma_w0", "sigma_s0",
                        "jitter_base", "init_pressures", "curve_window", "use_cubature_update"},
                       "filter.");
    detail::read_field(f, "q_weights", cfg.filter.q_weights, "filter.");
    detail::read_field(f, "q_pressures", cfg.filter.q_pressures, "filter.");
    if (f.contains("meas_noise_r") && !f.at("meas_noise_r").is_null()) {
      if (f.at("meas_noise_r").is_string()) {
        if (f.at("meas_noise_r").get<std::string>() != "auto") {
          throw ConfigError("filter.meas_noise_r must be a number or \"auto\"");
        }
      } else {
        cfg.filter.meas_noise_r = f.at("meas_noise_r").get<double>();
      }
    }
    detail::read_field(f, "sigma_w0", cfg.filter.sigma_w0, "filter.");
    detail::read_field(f, "sigma_s0", cfg.filter.sigma_s0, "filter.");
    detail::read_field(f, "jitter_base", cfg.filter.jitter_base, "filter.");
    if (f.contains("init_pressures") && f.at("init_pressures").is_array()) {
      const auto arr = f.at("init_pressures").get<std::vector<double>>();
      if (arr.size() != 4) throw ConfigError("filter.init_pressures array must have 4 entries");
      cfg.filter.explicit_pressures = Eigen::Vector4d(arr[0], arr[1], arr[2], arr[3]);
    } else {
      detail::read_field(f, "init_pressures", cfg.filter.init_pressures, "filter.");
    }
    detail::read_field(f, "curve_window", cfg.filter.curve_window, "filter.");
    detail::read_field(f, "use_cubature_update", cfg.filter.use_cubature_update, "filter.");
  }

  if (j.contains("bptt")) {
    const auto& b = j.at("bptt");
    detail::check_keys(b, {"epochs", "lr", "truncation_window", "init_p4", "estimate_initial_p4"},
                       "bptt.");
    detail::read_field(b, "epochs", cfg.bptt.epochs, "bptt.");
    detail::read_field(b, "lr", cfg.bptt.lr, "bptt.");
    if (b.contains("truncation_window") && !b.at("truncation_window").is_null()) {
      if (b.at("truncation_window").is_string()) {
        if (b.at("truncation_window").get<std::string>() != "full") {
          throw ConfigError("bptt.truncation_window must be a count or \"full\"");
        }
      } else {
        cfg.bptt.truncation_window = b.at("truncation_window").get<int>();
      }
    }
    detail::read_field(b, "init_p4", cfg.bptt.init_p4, "bptt.");
    detail::read_field(b, "estimate_initial_p4", cfg.bptt.estimate_initial_p4, "bptt.");
  }

  if (j.contains("nn")) {
    const auto& n = j.at("nn");
    detail::check_keys(n, {"out_gain", "range_width"}, "nn.");
    detail::read_field(n, "out_gain", cfg.nn.out_gain, "nn.");
    detail::read_field(n, "range_width", cfg.nn.range_width, "nn.");
  }

  detail::read_field(j, "output_dir", cfg.output_dir, "");
  detail::read_field(j, "master_seed", cfg.master_seed, "");
  detail::read_field(j, "jobs", cfg.jobs, "");

  cfg.validate();
  return cfg;
}

inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["retina"] = retina_to_json(cfg.retina);
  j["sim"] = {{"dt", cfg.sim.dt},
              {"train_duration", cfg.sim.train_duration},
              {"test_duration", cfg.sim.test_duration},
              {"integrator", cfg.sim.integrator == IntegratorMethod::rk4 ? "rk4" : "euler"}};
  j["snr_levels"] = cfg.snr_levels;
  j["methods"] = cfg.methods;
  j["n_runs"] = cfg.n_runs;
  nlohmann::json init_pressures = cfg.filter.init_pressures;
  if (cfg.filter.explicit_pressures) {
    const Eigen::Vector4d& p = *cfg.filter.explicit_pressures;
    init_pressures = {p[0], p[1], p[2], p[3]};
  }
  j["filter"] = {{"q_weights", cfg.filter.q_weights},
                 {"q_pressures", cfg.filter.q_pressures},
                 {"meas_noise_r", cfg.filter.meas_noise_r ? nlohmann::json(*cfg.filter.meas_noise_r)
                                                          : nlohmann::json("auto")},
                 {"sigma_w0", cfg.filter.sigma_w0},
                 {"sigma_s0", cfg.filter.sigma_s0},
                 {"jitter_base", cfg.filter.jitter_base},
                 {"init_pressures", init_pressures},
                 {"curve_window", cfg.filter.curve_window},
                 {"use_cubature_update", cfg.filter.use_cubature_update}};
  j["bptt"] = {{"epochs", cfg.bptt.epochs},
               {"lr", cfg.bptt.lr},
               {"truncation_window", cfg.bptt.truncation_window
                                         ? nlohmann::json(*cfg.bptt.truncation_window)
                                         : nlohmann::json("full")},
               {"init_p4", cfg.bptt.init_p4},
               {"estimate_initial_p4", cfg.bptt.estimate_initial_p4}};
  j["nn"] = {{"out_gain", cfg.nn.out_gain}, {"range_width", cfg.nn.range_width}};
  j["output_dir"] = cfg.output_dir;
  j["master_seed"] = cfg.master_seed;
  j["jobs"] = cfg.jobs;
  return j;
}

// Applies a repeatable --set override of the form "dotted.path=value"; the
// value is parsed as JSON when possible, else taken as a string.
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override must look like key.path=value: '" + assignment + "'");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;  // bare string
  }
  nlohmann::json* node = &j;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) throw ConfigError("override has an empty path segment: '" + assignment + "'");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      break;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

inline ExperimentConfig load_config(const std::optional<std::filesystem::path>& path,
                                    const std::vector<std::string>& overrides) {
  nlohmann::json j = nlohmann::json::object();
  if (path) {
    std::ifstream in(*path);
    if (!in) throw ConfigError("cannot open config file: " + path->string());
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config file is not valid JSON: " + std::string(e.what()));
    }
  }
  for (const auto& o : overrides) apply_override(j, o);
  return parse_config(j);
}

// ---------------------------------------------------------------------------
// Model assembly
// ---------------------------------------------------------------------------

// Input normalization window centered on the steady pressures under the mean
// drivers; raw mmHg magnitudes would saturate tanh at initialization.
inline InputScale nominal_input_scale(const RetinaParams& params, double range_width) {
  const Eigen::Vector4d ss = steady_state(params, params.drivers.pin_mean, params.drivers.pout_mean);
  const double half = 0.5 * range_width;
  return InputScale::from_ranges({ss[1] - half, ss[2] - half, ss[3] - half},
                                 {ss[1] + half, ss[2] + half, ss[3] + half});
}

// Scalar measurement variance for "auto" mode: the mean injected variance of
// the observed channels at the requested SNR. Falls back to a small positive
// value for noise-free data.
inline double auto_meas_noise(const TimeSeriesDataset& clean, std::optional<double> snr_db) {
  if (!snr_db) return 1e-6;
  const auto sigma = noise_sigmas(clean, *snr_db);
  return (sigma[2] * sigma[2] + sigma[3] * sigma[3] + sigma[4] * sigma[4]) / 3.0;
}

inline HybridModelConfig make_model(const ExperimentConfig& cfg, const TimeSeriesDataset& train_clean,
                                    std::optional<double> snr_db) {
  HybridModelConfig model;
  model.dt = cfg.sim.dt;
  model.params = cfg.retina;
  model.nn_template.in_scale = nominal_input_scale(cfg.retina, cfg.nn.range_width);
  model.nn_template.out_gain = cfg.nn.out_gain;
  model.q_weights = cfg.filter.q_weights;
  model.q_pressures = cfg.filter.q_pressures;
  model.meas_noise_r =
      cfg.filter.meas_noise_r ? *cfg.filter.meas_noise_r : auto_meas_noise(train_clean, snr_db);
  return model;
}

inline FilterConfig make_filter_config(const ExperimentConfig& cfg,
                                       const TimeSeriesDataset& train_clean,
                                       std::optional<double> snr_db, std::uint64_t init_seed) {
  FilterConfig fc;
  fc.model = make_model(cfg, train_clean, snr_db);
  fc.sigma_w0 = cfg.filter.sigma_w0;
  fc.sigma_s0 = cfg.filter.sigma_s0;
  fc.init_pressures = cfg.filter.init_mode();
  if (cfg.filter.explicit_pressures) fc.explicit_pressures = *cfg.filter.explicit_pressures;
  fc.jitter_base = cfg.filter.jitter_base;
  fc.init_seed = init_seed;
  fc.curve_window = cfg.filter.curve_window;
  fc.use_cubature_update = cfg.filter.use_cubature_update;
  return fc;
}

inline BpttConfig make_bptt_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  BpttConfig bc;
  bc.epochs = cfg.bptt.epochs;
  bc.truncation_window = cfg.bptt.truncation_window;
  if (cfg.bptt.init_p4 == "steady_state") {
    bc.init_p4 = BpttConfig::InitP4::steady_state;
  } else {
    throw ConfigError("bptt.init_p4 must be steady_state");
  }
  bc.lr = cfg.bptt.lr;
  bc.seed = seed;
  bc.estimate_initial_p4 = cfg.bptt.estimate_initial_p4;
  return bc;
}

inline std::pair<TimeSeriesDataset, TimeSeriesDataset> build_clean_datasets(
    const ExperimentConfig& cfg) {
  TimeSeriesDataset train = simulate_ground_truth(cfg.retina, cfg.sim.dt, cfg.sim.train_steps(),
                                                  cfg.sim.integrator);
  // Test horizon continues the same trajectory after the training window.
  TimeSeriesDataset both = simulate_ground_truth(
      cfg.retina, cfg.sim.dt, cfg.sim.train_steps() + cfg.sim.test_steps() - 1, cfg.sim.integrator);
  TimeSeriesDataset test;
  test.dt = cfg.sim.dt;
  const int offset = cfg.sim.train_steps() - 1;
  const int n_test = cfg.sim.test_steps();
  test.times.assign(both.times.begin() + offset, both.times.end());
  test.pin.assign(both.pin.begin() + offset, both.pin.end());
  test.pout.assign(both.pout.begin() + offset, both.pout.end());
  test.pin_noisy = test.pin;
  test.pout_noisy = test.pout;
  test.p_true = both.p_true.bottomRows(n_test);
  test.y_noisy = both.y_noisy.bottomRows(n_test);
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Single runs
// ---------------------------------------------------------------------------

// First step whose windowed NRMSE is below the noise floor; the trajectory
// length when it never crosses.
inline double steps_to_floor(const std::vector<double>& curve, double floor_value) {
  for (std::size_t k = 0; k < curve.size(); ++k) {
    if (curve[k] < floor_value) return static_cast<double>(k);
  }
  return static_cast<double>(curve.size());
}

// First epoch within 5% of the best test NRMSE reached over the run.
inline double epochs_to_own_floor(const std::vector<double>& test_curve) {
  double best = std::numeric_limits<double>::infinity();
  for (double v : test_curve) {
    if (std::isfinite(v) && v < best) best = v;
  }
  if (!std::isfinite(best)) return static_cast<double>(test_curve.size());
  for (std::size_t e = 0; e < test_curve.size(); ++e) {
    if (test_curve[e] <= 1.05 * best) return static_cast<double>(e + 1);
  }
  return static_cast<double>(test_curve.size());
}

namespace detail {

inline double observed_noise_floor(const TimeSeriesDataset& noisy) {
  return nrmse(noisy.y_noisy, observed_columns(noisy.p_true));
}

inline void record_test_metrics(RunRecord& rec, const Eigen::MatrixXd& estimate,
                                const TimeSeriesDataset& test) {
  rec.metrics["mape"] = mape(estimate, test.p_true);
  rec.metrics["nrmse"] = nrmse(estimate, test.p_true);
  rec.metrics["nrmse_range2"] = nrmse_range2(estimate, test.p_true);
  const char* names[] = {"p1", "p2", "p4", "p5"};
  for (int c = 0; c < 4; ++c) {
    std::vector<double> traj(static_cast<std::size_t>(estimate.rows()));
    for (Eigen::Index k = 0; k < estimate.rows(); ++k) traj[static_cast<std::size_t>(k)] = estimate(k, c);
    rec.trajectories[names[c]] = std::move(traj);
  }
}

}  // namespace detail

// Metric channel set is the four dynamic pressures (P1, P2, P4, P5) against
// noise-free ground truth, the unobserved P4 included.
inline RunRecord run_ckf_once(const TimeSeriesDataset& train_noisy,
                              const TimeSeriesDataset& test_noisy, const FilterConfig& fc,
                              const std::optional<std::filesystem::path>& run_dir = std::nullopt) {
  const CkfTrainResult trained = ckf_train(train_noisy, fc);
  const CkfTestResult tested = ckf_test(test_noisy, trained.weights, fc);

  RunRecord rec;
  detail::record_test_metrics(rec, tested.filtered.mean, test_noisy);
  rec.metrics["train_nrmse"] = nrmse(trained.filtered.mean, train_noisy.p_true);
  const double floor_value = detail::observed_noise_floor(train_noisy);
  rec.metrics["noise_floor_train"] = floor_value;
  rec.metrics["steps_to_floor"] = steps_to_floor(tested.learning_curve, floor_value);
  rec.metrics["max_jitter_rung"] = static_cast<double>(
      std::max(trained.stats.max_jitter_rung, tested.stats.max_jitter_rung));

  if (run_dir) {
    std::filesystem::create_directories(*run_dir);
    save_mlp(trained.weights, *run_dir / "weights.csv");
    save_filtered(trained.filtered, *run_dir / "train_filtered.csv");
    save_filtered(tested.filtered, *run_dir / "test_filtered.csv");
    CsvWriter wtrain(*run_dir / "curve_train.csv");
    wtrain.write_row({"step", "nrmse"});
    for (std::size_t k = 0; k < trained.learning_curve.size(); ++k) {
      wtrain.write_doubles({static_cast<double>(k), trained.learning_curve[k]});
    }
    CsvWriter wtest(*run_dir / "curve_test.csv");
    wtest.write_row({"step", "nrmse"});
    for (std::size_t k = 0; k < tested.learning_curve.size(); ++k) {
      wtest.write_doubles({static_cast<double>(k), tested.learning_curve[k]});
    }
  }
  return rec;
}

inline RunRecord run_bptt_once(const TimeSeriesDataset& train_noisy,
                               const TimeSeriesDataset& test_noisy, const HybridModelConfig& model,
                               const BpttConfig& bc,
                               const std::optional<std::filesystem::path>& run_dir = std::nullopt) {
  const BpttTrainResult trained = bptt_train(train_noisy, &test_noisy, model, bc);

  RunRecord rec;
  detail::record_test_metrics(rec, trained.test_rollout, test_noisy);
  rec.metrics["train_nrmse"] = trained.train_curve.empty()
                                   ? std::numeric_limits<double>::quiet_NaN()
                                   : trained.train_curve.back();
  const double floor_value = detail::observed_noise_floor(train_noisy);
  rec.metrics["noise_floor_train"] = floor_value;
  rec.metrics["epochs_to_floor"] = epochs_to_own_floor(trained.test_curve);

  if (run_dir) {
    std::filesystem::create_directories(*run_dir);
    save_mlp(trained.weights, *run_dir / "weights.csv");
    save_learning_curve(trained.train_curve, trained.test_curve, *run_dir / "curve.csv");
    CsvWriter w(*run_dir / "test_rollout.csv");
    w.write_row({"t", "p1", "p2", "p4", "p5"});
    for (int k = 0; k < test_noisy.n_t(); ++k) {
      w.write_doubles({test_noisy.times[static_cast<std::size_t>(k)], trained.test_rollout(k, 0),
                       trained.test_rollout(k, 1), trained.test_rollout(k, 2),
                       trained.test_rollout(k, 3)});
    }
  }
  return rec;
}

// ---------------------------------------------------------------------------
// Cells and the sweep
// ---------------------------------------------------------------------------

struct CellSpec {
  double snr_db = 0.0;
  int snr_index = 0;
  std::string method;
};

// Seeds are derived per (snr, run) only, so both methods see the same noise
// realizations and weight initializations (paired comparison).
inline std::vector<std::uint64_t> cell_run_seeds(const ExperimentConfig& cfg, int snr_index) {
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(cfg.n_runs));
  for (int r = 0; r < cfg.n_runs; ++r) {
    seeds[static_cast<std::size_t>(r)] = derive_seed(cfg.master_seed, "run",
                                                     static_cast<std::uint64_t>(snr_index),
                                                     static_cast<std::uint64_t>(r));
  }
  return seeds;
}

inline MonteCarloSummary run_cell(const ExperimentConfig& cfg, const TimeSeriesDataset& train_clean,
                                  const TimeSeriesDataset& test_clean, const CellSpec& cell,
                                  const std::optional<std::filesystem::path>& cell_dir = std::nullopt) {
  const std::vector<std::uint64_t> seeds = cell_run_seeds(cfg, cell.snr_index);
  const auto run_one = [&](std::uint64_t run_seed) {
    const auto it = std::find(seeds.begin(), seeds.end(), run_seed);
    const int run_index = static_cast<int>(it - seeds.begin());
    const TimeSeriesDataset train_noisy =
        inject_noise(train_clean, cell.snr_db, derive_seed(run_seed, "train-noise"));
    const TimeSeriesDataset test_noisy =
        inject_noise(test_clean, cell.snr_db, derive_seed(run_seed, "test-noise"));
    const std::uint64_t init_seed = derive_seed(run_seed, "init");

    std::optional<std::filesystem::path> run_dir;
    if (cell_dir) {
      char name[16];
      std::snprintf(name, sizeof(name), "run_%03d", run_index);
      run_dir = *cell_dir / name;
    }
    RunRecord rec;
    if (cell.method == "ckf") {
      rec = run_ckf_once(train_noisy, test_noisy,
                         make_filter_config(cfg, train_clean, cell.snr_db, init_seed), run_dir);
    } else {
      BpttConfig bc = make_bptt_config(cfg, init_seed);
      rec = run_bptt_once(train_noisy, test_noisy, make_model(cfg, train_clean, cell.snr_db), bc,
                          run_dir);
    }
    if (run_dir) {
      nlohmann::json meta;
      meta["run_seed"] = run_seed;
      meta["run_index"] = run_index;
      meta["train_noise_seed"] = derive_seed(run_seed, "train-noise");
      meta["test_noise_seed"] = derive_seed(run_seed, "test-noise");
      meta["init_seed"] = init_seed;
      std::ofstream out(*run_dir / "run_meta.json");
      out << meta.dump(2) << '\n';
    }
    return rec;
  };

  return monte_carlo(run_one, seeds, cfg.jobs);
}

inline std::string snr_label(double snr_db) { return format_double(snr_db); }

inline std::filesystem::path cell_path(const std::filesystem::path& out_dir, double snr_db,
                                       const std::string& method) {
  return out_dir / "cells" / ("snr_" + snr_label(snr_db)) / method;
}

// Key/value summary plus the per-run metric rows (seed,method,snr_db,mape,nrmse).
inline void save_cell(const MonteCarloSummary& summary, const CellSpec& cell,
                      const std::filesystem::path& cell_dir,
                      const std::vector<double>& band_times = {}) {
  std::filesystem::create_directories(cell_dir);
  {
    std::ofstream out(cell_dir / "summary.txt");
    if (!out) throw ConfigError("cannot write " + (cell_dir / "summary.txt").string());
    out << "method=" << cell.method << '\n';
    out << "snr_db=" << format_double(cell.snr_db) << '\n';
    out << "n_attempted=" << summary.n_attempted << '\n';
    out << "n_runs=" << summary.runs.size() << '\n';
    out << "n_failed=" << summary.failures.size() << '\n';
    out << "seeds=";
    for (std::size_t i = 0; i < summary.seeds.size(); ++i) {
      if (i) out << ',';
      out << format_u64(summary.seeds[i]);
    }
    out << '\n';
    for (const auto& [key, m] : summary.metrics) {
      out << "metric." << key << ".mean=" << format_double(m.mean) << '\n';
      out << "metric." << key << ".sd=" << format_double(m.sd) << '\n';
      out << "metric." << key << ".ci95_low=" << format_double(m.ci95_low) << '\n';
      out << "metric." << key << ".ci95_high=" << format_double(m.ci95_high) << '\n';
    }
    for (const auto& f : summary.failures) {
      out << "failure." << format_u64(f.seed) << '=' << f.message << '\n';
    }
  }
  {
    CsvWriter w(cell_dir / "runs.csv");
    w.write_row({"seed", "method", "snr_db", "mape", "nrmse"});
    for (const auto& r : summary.runs) {
      w.write_row({format_u64(r.seed), cell.method, format_double(cell.snr_db),
                   format_double(r.metrics.at("mape")), format_double(r.metrics.at("nrmse"))});
    }
  }
  if (!summary.bands.empty()) {
    CsvWriter w(cell_dir / "bands_test.csv");
    std::vector<std::string> header = {"t"};
    for (const char* ch : {"p1", "p2", "p4", "p5"}) {
      header.push_back(std::string(ch) + "_mean");
      header.push_back(std::string(ch) + "_lo");
      header.push_back(std::string(ch) + "_hi");
    }
    w.write_row(header);
    const std::size_t n = summary.bands.at("p1").mean.size();
    for (std::size_t k = 0; k < n; ++k) {
      std::vector<double> row;
      row.push_back(k < band_times.size() ? band_times[k] : static_cast<double>(k));
      for (const char* ch : {"p1", "p2", "p4", "p5"}) {
        const auto& band = summary.bands.at(ch);
        row.push_back(band.mean[k]);
        row.push_back(band.lo[k]);
        row.push_back(band.hi[k]);
      }
      w.write_doubles(row);
    }
  }
}

struct SweepResult {
  int cells_total = 0;
  int cells_failed = 0;
  std::filesystem::path out_dir;
};

// Full Monte Carlo sweep over (snr, method). Cells that exceed the 20% run
// failure budget are recorded and the sweep continues.
inline SweepResult run_experiment(const ExperimentConfig& cfg,
                                  const std::filesystem::path& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream out(out_dir / "config.resolved.json");
    out << config_to_json(cfg).dump(2) << '\n';
    std::ofstream ver(out_dir / "tree_version.txt");
    ver << kArtifactTreeVersion << '\n';
  }

  auto [train_clean, test_clean] = build_clean_datasets(cfg);
  std::filesystem::create_directories(out_dir / "datasets");
  save_dataset(train_clean, cfg.retina, out_dir / "datasets" / "train_clean.csv");
  save_dataset(test_clean, cfg.retina, out_dir / "datasets" / "test_clean.csv");

  SweepResult result;
  result.out_dir = out_dir;
  CsvWriter summary_csv(out_dir / "summary.csv");
  summary_csv.write_row({"snr_db", "method", "n_runs", "n_failed", "mape_mean", "mape_ci95_low",
                         "mape_ci95_high", "nrmse_mean", "nrmse_ci95_low", "nrmse_ci95_high",
                         "nrmse_range2_mean", "train_nrmse_mean"});

  for (int s = 0; s < static_cast<int>(cfg.snr_levels.size()); ++s) {
    for (const auto& method : cfg.methods) {
      const CellSpec cell{cfg.snr_levels[static_cast<std::size_t>(s)], s, method};
      const std::filesystem::path dir = cell_path(out_dir, cell.snr_db, method);
      ++result.cells_total;
      try {
        const MonteCarloSummary summary = run_cell(cfg, train_clean, test_clean, cell, dir);
        save_cell(summary, cell, dir, test_clean.times);
        const auto& m = summary.metrics;
        summary_csv.write_row(
            {format_double(cell.snr_db), method, std::to_string(summary.runs.size()),
             std::to_string(summary.failures.size()), format_double(m.at("mape").mean),
             format_double(m.at("mape").ci95_low), format_double(m.at("mape").ci95_high),
             format_double(m.at("nrmse").mean), format_double(m.at("nrmse").ci95_low),
             format_double(m.at("nrmse").ci95_high), format_double(m.at("nrmse_range2").mean),
             format_double(m.at("train_nrmse").mean)});
      } catch (const TooManyFailures& e) {
        ++result.cells_failed;
        std::filesystem::create_directories(dir);
        std::ofstream out(dir / "cell_failure.txt");
        out << e.what() << '\n';
        summary_csv.write_row({format_double(cell.snr_db), method, "0", std::to_string(cfg.n_runs),
                               "nan", "nan", "nan", "nan", "nan", "nan", "nan", "nan"});
      }
    }
  }
  return result;
}

}  // namespace hybridckf
