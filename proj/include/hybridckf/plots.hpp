#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "hybridckf/experiment.hpp"
#include "hybridckf/svg.hpp"

namespace hybridckf {

namespace detail {

inline std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("missing artifact: " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

inline std::vector<double> csv_column(const CsvTable& table, int col) {
  std::vector<double> out;
  out.reserve(table.rows.size());
  for (const auto& row : table.rows) out.push_back(parse_double(row[static_cast<std::size_t>(col)]));
  return out;
}

struct ChannelStyle {
  const char* key;
  const char* name;
  const char* color;
};

inline constexpr ChannelStyle kChannels[] = {{"p1", "P1 (CRA)", "#1f6fb4"},
                                             {"p2", "P2 (arterioles)", "#2a9d4e"},
                                             {"p4", "P4 (venules)", "#d62728"},
                                             {"p5", "P5 (CRV)", "#8a4fbe"}};

}  // namespace detail

// Emits the figure set from a sweep artifact tree into <artifact_dir>/plots:
//   single_run_snr_<s>.svg   one CKF training run vs truth with noisy samples
//   bands_snr_<s>_<m>.svg    Monte Carlo mean and 95% band per state
//   curves_snr_<s>.svg       learning curves with the noise-floor line
// All required inputs are checked before anything is written.
inline std::vector<std::filesystem::path> emit_plots(const std::filesystem::path& artifact_dir) {
  const std::filesystem::path config_path = artifact_dir / "config.resolved.json";
  if (!std::filesystem::exists(config_path)) {
    throw MissingArtifact("missing artifact: " + config_path.string());
  }
  std::ifstream cfg_in(config_path);
  const ExperimentConfig cfg = parse_config(nlohmann::json::parse(cfg_in));

  // Validate the full input set up front so failure leaves no partial output.
  std::vector<std::filesystem::path> required = {artifact_dir / "datasets" / "train_clean.csv",
                                                 artifact_dir / "datasets" / "test_clean.csv"};
  for (double snr : cfg.snr_levels) {
    for (const auto& method : cfg.methods) {
      const auto dir = cell_path(artifact_dir, snr, method);
      required.push_back(dir / "summary.txt");
      required.push_back(dir / "bands_test.csv");
      required.push_back(dir / "run_000" / "run_meta.json");
      if (method == "ckf") {
        required.push_back(dir / "run_000" / "train_filtered.csv");
        required.push_back(dir / "run_000" / "curve_train.csv");
        required.push_back(dir / "run_000" / "curve_test.csv");
      } else {
        required.push_back(dir / "run_000" / "curve.csv");
      }
    }
  }
  for (const auto& p : required) {
    if (!std::filesystem::exists(p)) throw MissingArtifact("missing artifact: " + p.string());
  }

  const LoadedDataset train = load_dataset(artifact_dir / "datasets" / "train_clean.csv");
  const LoadedDataset test = load_dataset(artifact_dir / "datasets" / "test_clean.csv");
  const std::filesystem::path plot_dir = artifact_dir / "plots";
  std::filesystem::create_directories(plot_dir);
  std::vector<std::filesystem::path> written;

  const bool has_ckf = std::find(cfg.methods.begin(), cfg.methods.end(), "ckf") != cfg.methods.end();

  for (double snr : cfg.snr_levels) {
    const std::string label = snr_label(snr);

    // Single-run traces (CKF): truth, filtered estimate, regenerated noisy
    // measurements of run 0.
    if (has_ckf) {
      const auto dir = cell_path(artifact_dir, snr, "ckf");
      std::ifstream meta_in(dir / "run_000" / "run_meta.json");
      const nlohmann::json meta = nlohmann::json::parse(meta_in);
      const TimeSeriesDataset train_noisy =
          inject_noise(train.ds, snr, meta.at("train_noise_seed").get<std::uint64_t>());
      const CsvTable filtered = read_csv(dir / "run_000" / "train_filtered.csv");

      svg::Figure fig(1);
      const int obs_col[] = {0, 1, -1, 2};
      for (int c = 0; c < 4; ++c) {
        svg::Plot plot(std::string(detail::kChannels[c].name) + ", one training run (SNR " + label +
                           " dB)",
                       "time [s]", "pressure [mmHg]");
        if (obs_col[c] >= 0) {
          std::vector<double> noisy(static_cast<std::size_t>(train_noisy.n_t()));
          for (int k = 0; k < train_noisy.n_t(); ++k) {
            noisy[static_cast<std::size_t>(k)] = train_noisy.y_noisy(k, obs_col[c]);
          }
          plot.add_points(train_noisy.times, noisy, "#b0b0b0", 1.1, "measured");
        }
        std::vector<double> truth(static_cast<std::size_t>(train.ds.n_t()));
        for (int k = 0; k < train.ds.n_t(); ++k) {
          truth[static_cast<std::size_t>(k)] = train.ds.p_true(k, c);
        }
        plot.add_line(train.ds.times, truth, "#202020", "truth", 1.6);
        plot.add_line(detail::csv_column(filtered, filtered.column("t")),
                      detail::csv_column(filtered, filtered.column(std::string(detail::kChannels[c].key) + "_mean")),
                      detail::kChannels[c].color, "estimate", 1.4, "6,3");
        fig.add(std::move(plot));
      }
      const auto path = plot_dir / ("single_run_snr_" + label + ".svg");
      fig.write(path);
      written.push_back(path);
    }

    // Monte Carlo band figures per method.
    for (const auto& method : cfg.methods) {
      const auto dir = cell_path(artifact_dir, snr, method);
      const CsvTable bands = read_csv(dir / "bands_test.csv");
      svg::Figure fig(1);
      for (int c = 0; c < 4; ++c) {
        const std::string key = detail::kChannels[c].key;
        svg::Plot plot(std::string(detail::kChannels[c].name) + ", " + method +
                           " Monte Carlo mean and 95% band (SNR " + label + " dB)",
                       "time [s]", "pressure [mmHg]");
        plot.add_band(test.ds.times, detail::csv_column(bands, bands.column(key + "_lo")),
                      detail::csv_column(bands, bands.column(key + "_hi")),
                      detail::kChannels[c].color, 0.25, "95% band");
        std::vector<double> truth(static_cast<std::size_t>(test.ds.n_t()));
        for (int k = 0; k < test.ds.n_t(); ++k) {
          truth[static_cast<std::size_t>(k)] = test.ds.p_true(k, c);
        }
        plot.add_line(test.ds.times, truth, "#202020", "truth", 1.6);
        plot.add_line(test.ds.times, detail::csv_column(bands, bands.column(key + "_mean")),
                      detail::kChannels[c].color, "mean estimate", 1.4, "6,3");
        fig.add(std::move(plot));
      }
      const auto path = plot_dir / ("bands_snr_" + label + "_" + method + ".svg");
      fig.write(path);
      written.push_back(path);
    }

    // Learning curves with the training noise floor.
    {
      svg::Plot plot("Learning curves (SNR " + label + " dB)", "update (CKF step / BPTT epoch)",
                     "NRMSE");
      plot.set_log_y(true);
      double floor_value = 0.0;
      for (const auto& method : cfg.methods) {
        const auto dir = cell_path(artifact_dir, snr, method);
        const auto kv = detail::read_key_values(dir / "summary.txt");
        floor_value = parse_double(kv.at("metric.noise_floor_train.mean"));
        if (method == "ckf") {
          const CsvTable ct = read_csv(dir / "run_000" / "curve_train.csv");
          const CsvTable cv = read_csv(dir / "run_000" / "curve_test.csv");
          plot.add_line(detail::csv_column(ct, ct.column("step")),
                        detail::csv_column(ct, ct.column("nrmse")), "#1f6fb4", "CKF train", 1.4);
          plot.add_line(detail::csv_column(cv, cv.column("step")),
                        detail::csv_column(cv, cv.column("nrmse")), "#1f6fb4", "CKF test", 1.4,
                        "5,3");
        } else {
          const CsvTable cb = read_csv(dir / "run_000" / "curve.csv");
          plot.add_line(detail::csv_column(cb, cb.column("epoch")),
                        detail::csv_column(cb, cb.column("train_nrmse")), "#d62728", "BPTT train",
                        1.4);
          plot.add_line(detail::csv_column(cb, cb.column("epoch")),
                        detail::csv_column(cb, cb.column("test_nrmse")), "#d62728", "BPTT test",
                        1.4, "5,3");
        }
      }
      plot.add_hline(floor_value, "#000000", "noise level");
      svg::Figure fig(1);
      fig.add(std::move(plot));
      const auto path = plot_dir / ("curves_snr_" + label + ".svg");
      fig.write(path, 560, 320);
      written.push_back(path);
    }
  }
  return written;
}

}  // namespace hybridckf
