#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "hybridckf/errors.hpp"
#include "hybridckf/thread_pool.hpp"

namespace hybridckf {

namespace detail {
inline void check_shapes(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols() || pred.rows() == 0) {
    throw LengthMismatch("metrics: prediction and truth shapes differ");
  }
}
}  // namespace detail

// Mean absolute percentage error: per channel the ratio of summed absolute
// errors to summed absolute truth, averaged over channels, times 100.
inline double mape(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth) {
  detail::check_shapes(pred, truth);
  double acc = 0.0;
  for (Eigen::Index c = 0; c < truth.cols(); ++c) {
    const double denom = truth.col(c).array().abs().sum();
    if (denom == 0.0) {
      throw DegenerateChannel("mape: channel " + std::to_string(c) + " has zero absolute sum");
    }
    acc += (pred.col(c) - truth.col(c)).array().abs().sum() / denom;
  }
  return 100.0 * acc / static_cast<double>(truth.cols());
}

// NRMSE with the UNsquared per-channel range in the denominator of the
// squared-error sum:
//   sqrt( mean_c [ sum_k (pred-truth)^2 / (n_t * (max_c - min_c)) ] ).
// The unsquared range is intentional and is the headline metric throughout;
// nrmse_range2 is the conventional range-squared variant.
inline double nrmse(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth) {
  detail::check_shapes(pred, truth);
  const double n_t = static_cast<double>(truth.rows());
  double acc = 0.0;
  for (Eigen::Index c = 0; c < truth.cols(); ++c) {
    const double range = truth.col(c).maxCoeff() - truth.col(c).minCoeff();
    if (range == 0.0) {
      throw DegenerateChannel("nrmse: channel " + std::to_string(c) + " has zero range");
    }
    acc += (pred.col(c) - truth.col(c)).array().square().sum() / (n_t * range);
  }
  return std::sqrt(acc / static_cast<double>(truth.cols()));
}

// Conventional variant with the squared range. Reported alongside, never
// substituted for the headline metric.
inline double nrmse_range2(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth) {
  detail::check_shapes(pred, truth);
  const double n_t = static_cast<double>(truth.rows());
  double acc = 0.0;
  for (Eigen::Index c = 0; c < truth.cols(); ++c) {
    const double range = truth.col(c).maxCoeff() - truth.col(c).minCoeff();
    if (range == 0.0) {
      throw DegenerateChannel("nrmse_range2: channel " + std::to_string(c) + " has zero range");
    }
    acc += (pred.col(c) - truth.col(c)).array().square().sum() / (n_t * range * range);
  }
  return std::sqrt(acc / static_cast<double>(truth.cols()));
}

// 10 log10( AC power of clean / power of (noisy - clean) ). Returns +inf for
// a noise-free pair.
inline double snr_db(const Eigen::VectorXd& clean, const Eigen::VectorXd& noisy) {
  if (clean.size() != noisy.size() || clean.size() == 0) {
    throw LengthMismatch("snr_db: length mismatch");
  }
  const double mean = clean.mean();
  const double signal = (clean.array() - mean).square().mean();
  if (signal == 0.0) throw DegenerateChannel("snr_db: clean channel has zero AC power");
  const double noise = (noisy - clean).array().square().mean();
  if (noise == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(signal / noise);
}

// Per-step NRMSE over a trailing window (partial at the start). Ranges are
// taken over the full truth per channel so early windows stay well-defined.
inline std::vector<double> windowed_nrmse(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth,
                                          int window) {
  detail::check_shapes(pred, truth);
  if (window < 1) throw ConfigError("windowed_nrmse: window must be >= 1");
  const Eigen::Index n = truth.rows();
  const Eigen::Index nc = truth.cols();
  Eigen::VectorXd range(nc);
  for (Eigen::Index c = 0; c < nc; ++c) {
    range[c] = truth.col(c).maxCoeff() - truth.col(c).minCoeff();
    if (range[c] == 0.0) {
      throw DegenerateChannel("windowed_nrmse: channel " + std::to_string(c) + " has zero range");
    }
  }
  std::vector<double> out(static_cast<std::size_t>(n));
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::Index lo = std::max<Eigen::Index>(0, k - window + 1);
    const Eigen::Index len = k - lo + 1;
    double acc = 0.0;
    for (Eigen::Index c = 0; c < nc; ++c) {
      acc += (pred.col(c).segment(lo, len) - truth.col(c).segment(lo, len)).array().square().sum() /
             (static_cast<double>(len) * range[c]);
    }
    out[static_cast<std::size_t>(k)] = std::sqrt(acc / static_cast<double>(nc));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Monte Carlo aggregation
// ---------------------------------------------------------------------------

struct RunRecord {
  std::uint64_t seed = 0;
  std::map<std::string, double> metrics;
  std::map<std::string, std::vector<double>> trajectories;
};

struct MetricSummary {
  double mean = 0.0;
  double sd = 0.0;
  double ci95_low = 0.0;
  double ci95_high = 0.0;
  int n = 0;
};

// Pointwise across-run band: mean +/- 1.96 sd (matching what trajectory
// figures display, as opposed to the standard error used for metric CIs).
struct TrajectoryBand {
  std::vector<double> mean, lo, hi;
};

struct RunFailure {
  std::uint64_t seed = 0;
  std::string message;
};

struct MonteCarloSummary {
  int n_attempted = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<RunRecord> runs;  // successful runs, sorted by seed
  std::vector<RunFailure> failures;
  std::map<std::string, MetricSummary> metrics;
  std::map<std::string, TrajectoryBand> bands;
};

// Executes independent seeded runs (optionally on a worker pool), then
// aggregates in seed-sorted order so results do not depend on scheduling or
// on the order of the seed list. Throws TooManyFailures if more than 20% of
// the runs raise.
inline MonteCarloSummary monte_carlo(const std::function<RunRecord(std::uint64_t)>& run,
                                     const std::vector<std::uint64_t>& seeds, int jobs = 1) {
  if (seeds.size() < 2) throw ConfigError("monte_carlo: need at least 2 runs");
  const int n = static_cast<int>(seeds.size());
  std::vector<RunRecord> records(seeds.size());
  std::vector<std::string> errors(seeds.size());
  std::vector<char> failed(seeds.size(), 0);

  parallel_for(n, jobs, [&](int i) {
    try {
      records[static_cast<std::size_t>(i)] = run(seeds[static_cast<std::size_t>(i)]);
      records[static_cast<std::size_t>(i)].seed = seeds[static_cast<std::size_t>(i)];
    } catch (const std::exception& e) {
      failed[static_cast<std::size_t>(i)] = 1;
      errors[static_cast<std::size_t>(i)] = e.what();
    }
  });

  MonteCarloSummary summary;
  summary.n_attempted = n;
  summary.seeds = seeds;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (failed[i]) {
      summary.failures.push_back({seeds[i], errors[i]});
    } else {
      summary.runs.push_back(std::move(records[i]));
    }
  }
  if (5 * summary.failures.size() > static_cast<std::size_t>(n)) {
    std::string msg = "monte_carlo: " + std::to_string(summary.failures.size()) + "/" +
                      std::to_string(n) + " runs failed";
    for (const auto& f : summary.failures) msg += "; seed " + std::to_string(f.seed) + ": " + f.message;
    throw TooManyFailures(msg);
  }
  std::sort(summary.runs.begin(), summary.runs.end(),
            [](const RunRecord& a, const RunRecord& b) { return a.seed < b.seed; });

  const auto n_ok = static_cast<double>(summary.runs.size());
  if (!summary.runs.empty()) {
    for (const auto& [key, value] : summary.runs.front().metrics) {
      (void)value;
      double mean = 0.0;
      for (const auto& r : summary.runs) mean += r.metrics.at(key);
      mean /= n_ok;
      double var = 0.0;
      for (const auto& r : summary.runs) {
        const double d = r.metrics.at(key) - mean;
        var += d * d;
      }
      const double sd = n_ok > 1 ? std::sqrt(var / (n_ok - 1.0)) : 0.0;
      const double half = 1.96 * sd / std::sqrt(n_ok);
      summary.metrics[key] = MetricSummary{mean, sd, mean - half, mean + half,
                                           static_cast<int>(summary.runs.size())};
    }
    for (const auto& [key, traj] : summary.runs.front().trajectories) {
      const std::size_t len = traj.size();
      TrajectoryBand band;
      band.mean.assign(len, 0.0);
      band.lo.assign(len, 0.0);
      band.hi.assign(len, 0.0);
      for (const auto& r : summary.runs) {
        const auto& t = r.trajectories.at(key);
        if (t.size() != len) throw LengthMismatch("monte_carlo: trajectory lengths differ for " + key);
        for (std::size_t k = 0; k < len; ++k) band.mean[k] += t[k];
      }
      for (std::size_t k = 0; k < len; ++k) band.mean[k] /= n_ok;
      for (std::size_t k = 0; k < len; ++k) {
        double var = 0.0;
        for (const auto& r : summary.runs) {
          const double d = r.trajectories.at(key)[k] - band.mean[k];
          var += d * d;
        }
        const double sd = n_ok > 1 ? std::sqrt(var / (n_ok - 1.0)) : 0.0;
        band.lo[k] = band.mean[k] - 1.96 * sd;
        band.hi[k] = band.mean[k] + 1.96 * sd;
      }
      summary.bands[key] = std::move(band);
    }
  }
  return summary;
}

}  // namespace hybridckf
