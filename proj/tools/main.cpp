// Command-line driver: dataset generation, single trainings, evaluation,
// Monte Carlo sweeps over SNR levels, and SVG figure emission.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "hybridckf/bptt.hpp"
#include "hybridckf/ckf.hpp"
#include "hybridckf/dataset_io.hpp"
#include "hybridckf/experiment.hpp"
#include "hybridckf/plots.hpp"

namespace fs = std::filesystem;
using namespace hybridckf;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::string out_dir;
};

void add_common(CLI::App* cmd, CommonOpts& opts, const char* default_out) {
  cmd->add_option("--config", opts.config_path, "JSON config file (all fields optional)");
  cmd->add_option("--set", opts.overrides, "Override a config value, e.g. --set sim.dt=0.005")
      ->take_all();
  cmd->add_option("--seed", opts.seed, "Override master_seed");
  cmd->add_option("--jobs", opts.jobs, "Worker pool size (default: available processors)");
  cmd->add_option("--out", opts.out_dir, "Output directory")->default_val(default_out);
}

ExperimentConfig resolve_config(const CommonOpts& opts) {
  std::optional<fs::path> path;
  if (!opts.config_path.empty()) path = opts.config_path;
  ExperimentConfig cfg = load_config(path, opts.overrides);
  if (opts.seed) cfg.master_seed = *opts.seed;
  if (opts.jobs) cfg.jobs = *opts.jobs;
  return cfg;
}

std::optional<double> parse_snr_flag(const std::string& snr_flag, const ExperimentConfig& cfg) {
  if (snr_flag == "none") return std::nullopt;
  if (snr_flag.empty()) return cfg.snr_levels.front();
  return parse_double(snr_flag);
}

int cmd_simulate(const CommonOpts& opts, const std::string& snr_flag) {
  const ExperimentConfig cfg = resolve_config(opts);
  const std::optional<double> snr = parse_snr_flag(snr_flag, cfg);
  auto [train_clean, test_clean] = build_clean_datasets(cfg);
  fs::create_directories(opts.out_dir);
  save_dataset(train_clean, cfg.retina, fs::path(opts.out_dir) / "train_clean.csv");
  save_dataset(test_clean, cfg.retina, fs::path(opts.out_dir) / "test_clean.csv");
  if (snr) {
    const TimeSeriesDataset train_noisy =
        inject_noise(train_clean, snr, derive_seed(cfg.master_seed, "train-noise", 0, 0));
    const TimeSeriesDataset test_noisy =
        inject_noise(test_clean, snr, derive_seed(cfg.master_seed, "test-noise", 0, 0));
    save_dataset(train_noisy, cfg.retina, fs::path(opts.out_dir) / "train_noisy.csv");
    save_dataset(test_noisy, cfg.retina, fs::path(opts.out_dir) / "test_noisy.csv");
  }
  std::cout << "wrote datasets to " << opts.out_dir << "\n";
  return 0;
}

int cmd_train(const CommonOpts& opts, const std::string& method, const std::string& snr_flag,
              const std::string& train_path, const std::string& test_path) {
  const ExperimentConfig cfg = resolve_config(opts);
  std::optional<double> snr = parse_snr_flag(snr_flag, cfg);

  TimeSeriesDataset train_clean, test_clean, train_noisy, test_noisy;
  if (!train_path.empty()) {
    train_noisy = load_dataset(train_path).ds;
    train_clean = train_noisy;
    snr = train_noisy.snr_db;  // auto-R follows the stored noise level
    if (test_path.empty()) throw ConfigError("train: --test-data is required with --train-data");
    test_noisy = load_dataset(test_path).ds;
  } else {
    std::tie(train_clean, test_clean) = build_clean_datasets(cfg);
    const std::uint64_t run_seed = derive_seed(cfg.master_seed, "run", 0, 0);
    train_noisy = inject_noise(train_clean, snr, derive_seed(run_seed, "train-noise"));
    test_noisy = inject_noise(test_clean, snr, derive_seed(run_seed, "test-noise"));
  }

  fs::create_directories(opts.out_dir);
  const std::uint64_t init_seed = derive_seed(derive_seed(cfg.master_seed, "run", 0, 0), "init");
  RunRecord rec;
  if (method == "ckf") {
    rec = run_ckf_once(train_noisy, test_noisy, make_filter_config(cfg, train_clean, snr, init_seed),
                       fs::path(opts.out_dir));
  } else {
    rec = run_bptt_once(train_noisy, test_noisy, make_model(cfg, train_clean, snr),
                        make_bptt_config(cfg, init_seed), fs::path(opts.out_dir));
  }
  for (const auto& [key, value] : rec.metrics) {
    std::cout << key << "=" << format_double(value) << "\n";
  }
  return 0;
}

int cmd_evaluate(const CommonOpts& opts, const std::string& method, const std::string& snr_flag,
                 const std::string& weights_path, const std::string& test_path) {
  const ExperimentConfig cfg = resolve_config(opts);
  std::optional<double> snr = parse_snr_flag(snr_flag, cfg);
  const MlpParams weights = load_mlp(weights_path);

  TimeSeriesDataset train_clean, test_noisy;
  if (!test_path.empty()) {
    test_noisy = load_dataset(test_path).ds;
    train_clean = test_noisy;
    snr = test_noisy.snr_db;  // auto-R follows the stored noise level
  } else {
    TimeSeriesDataset test_clean;
    std::tie(train_clean, test_clean) = build_clean_datasets(cfg);
    test_noisy = inject_noise(test_clean, snr,
                              derive_seed(derive_seed(cfg.master_seed, "run", 0, 0), "test-noise"));
  }

  fs::create_directories(opts.out_dir);
  Eigen::MatrixXd estimate;
  if (method == "ckf") {
    FilterConfig fc = make_filter_config(cfg, train_clean, snr, 0);
    fc.model.nn_template = weights;  // adopt the stored scaling
    const CkfTestResult tested = ckf_test(test_noisy, weights, fc);
    save_filtered(tested.filtered, fs::path(opts.out_dir) / "test_filtered.csv");
    estimate = tested.filtered.mean;
  } else {
    HybridModelConfig model = make_model(cfg, train_clean, snr);
    model.nn_template = weights;
    estimate = open_loop_rollout(weights.flat, test_noisy, model, make_bptt_config(cfg, 0));
  }
  CsvWriter w(fs::path(opts.out_dir) / "metrics.csv");
  w.write_row({"method", "snr_db", "mape", "nrmse", "nrmse_range2"});
  w.write_row({method, snr ? format_double(*snr) : "none",
               format_double(mape(estimate, test_noisy.p_true)),
               format_double(nrmse(estimate, test_noisy.p_true)),
               format_double(nrmse_range2(estimate, test_noisy.p_true))});
  std::cout << "nrmse=" << format_double(nrmse(estimate, test_noisy.p_true)) << "\n";
  return 0;
}

int cmd_sweep(const CommonOpts& opts) {
  const ExperimentConfig cfg = resolve_config(opts);
  const SweepResult result = run_experiment(cfg, opts.out_dir);
  std::cout << "sweep finished: " << (result.cells_total - result.cells_failed) << "/"
            << result.cells_total << " cells ok, artifacts in " << opts.out_dir << "\n";
  return result.cells_failed > 0 ? 2 : 0;
}

int cmd_plot(const std::string& artifact_dir) {
  const auto written = emit_plots(artifact_dir);
  for (const auto& p : written) std::cout << "wrote " << p.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid ODE/NN estimation: CKF joint state/weight filtering vs BPTT baseline"};
  app.require_subcommand(1);

  CommonOpts sim_opts, train_opts, eval_opts, sweep_opts;
  std::string snr_flag, train_method = "ckf", eval_method = "ckf";
  std::string train_data, test_data, weights_path, artifact_dir = "out";

  CLI::App* sim = app.add_subcommand("simulate", "Generate ground-truth and noisy datasets");
  add_common(sim, sim_opts, "datasets");
  sim->add_option("--snr", snr_flag, "SNR in dB, or 'none' (default: first configured level)");

  CLI::App* train = app.add_subcommand("train", "Run a single training (one Monte Carlo run)");
  add_common(train, train_opts, "train_out");
  train->add_option("--method", train_method, "ckf or bptt")
      ->check(CLI::IsMember({"ckf", "bptt"}));
  train->add_option("--snr", snr_flag, "SNR in dB, or 'none'");
  train->add_option("--train-data", train_data, "Use an existing dataset CSV instead of simulating");
  train->add_option("--test-data", test_data, "Test dataset CSV (required with --train-data)");

  CLI::App* eval = app.add_subcommand("evaluate", "Evaluate stored weights on a test dataset");
  add_common(eval, eval_opts, "eval_out");
  eval->add_option("--method", eval_method, "ckf or bptt")->check(CLI::IsMember({"ckf", "bptt"}));
  eval->add_option("--snr", snr_flag, "SNR in dB, or 'none'");
  eval->add_option("--weights", weights_path, "Weights CSV produced by train/sweep")->required();
  eval->add_option("--test-data", test_data, "Test dataset CSV (default: simulate from config)");

  CLI::App* sweep = app.add_subcommand("sweep", "Monte Carlo sweep over SNR levels and methods");
  add_common(sweep, sweep_opts, "out");

  CLI::App* plot = app.add_subcommand("plot", "Emit SVG figures from a sweep artifact tree");
  plot->add_option("--out", artifact_dir, "Artifact tree produced by sweep")->default_val("out");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return cmd_simulate(sim_opts, snr_flag);
    if (train->parsed()) return cmd_train(train_opts, train_method, snr_flag, train_data, test_data);
    if (eval->parsed()) return cmd_evaluate(eval_opts, eval_method, snr_flag, weights_path, test_data);
    if (sweep->parsed()) return cmd_sweep(sweep_opts);
    if (plot->parsed()) return cmd_plot(artifact_dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const TooManyFailures& e) {
    std::cerr << "run failures: " << e.what() << "\n";
    return 2;
  } catch (const MissingArtifact& e) {
    std::cerr << "missing artifact: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
