#include <catch2/catch.hpp>

#include "hybridckf/metrics.hpp"
#include "hybridckf/rng.hpp"

using namespace hybridckf;

TEST_CASE("mape reproduces the hand-computed examples", "[metrics]") {
  Eigen::MatrixXd truth(4, 1), pred(4, 1);
  truth << 1, 2, 3, 4;
  pred << 2, 3, 4, 5;
  REQUIRE(mape(pred, truth) == Approx(40.0).margin(1e-12));
  REQUIRE(mape(truth, truth) == 0.0);

  // Per-channel ratios 0.1 and 0.3 average to 20 percent.
  Eigen::MatrixXd t2 = Eigen::MatrixXd::Ones(4, 2), p2 = Eigen::MatrixXd::Ones(4, 2);
  p2.col(0).array() += 0.1;
  p2.col(1).array() += 0.3;
  REQUIRE(mape(p2, t2) == Approx(20.0).margin(1e-12));

  Eigen::MatrixXd degenerate = Eigen::MatrixXd::Zero(4, 1);
  REQUIRE_THROWS_AS(mape(pred, degenerate), DegenerateChannel);
}

TEST_CASE("nrmse implements the unsquared-range formula verbatim", "[metrics]") {
  Eigen::MatrixXd truth(2, 1), pred(2, 1);
  truth << 0, 1;
  pred << 0.5, 1.5;
  REQUIRE(nrmse(pred, truth) == Approx(0.5).margin(1e-12));
  REQUIRE(nrmse(truth, truth) == 0.0);

  // Doubling the errors at fixed range doubles the metric.
  Eigen::MatrixXd pred2(2, 1);
  pred2 << 1.0, 2.0;
  REQUIRE(nrmse(pred2, truth) == Approx(1.0).margin(1e-12));

  // The conventional variant divides by the squared range.
  Eigen::MatrixXd t10(2, 1), p10(2, 1);
  t10 << 0, 10;
  p10 << 5, 15;
  REQUIRE(nrmse(p10, t10) == Approx(std::sqrt(50.0 / (2.0 * 10.0))).margin(1e-12));
  REQUIRE(nrmse_range2(p10, t10) == Approx(std::sqrt(50.0 / (2.0 * 100.0))).margin(1e-12));

  Eigen::MatrixXd flat = Eigen::MatrixXd::Ones(2, 1);
  REQUIRE_THROWS_AS(nrmse(pred, flat), DegenerateChannel);
}

TEST_CASE("metrics are channel-order invariant and zero only at equality", "[metrics]") {
  NormalStream stream(5);
  Eigen::MatrixXd truth(50, 3), pred(50, 3);
  for (int i = 0; i < truth.size(); ++i) {
    truth(i) = stream.next() + 3.0;
    pred(i) = truth(i) + 0.1 * stream.next();
  }
  Eigen::MatrixXd truth_swapped = truth, pred_swapped = pred;
  truth_swapped.col(0).swap(truth_swapped.col(2));
  pred_swapped.col(0).swap(pred_swapped.col(2));
  REQUIRE(mape(pred, truth) == Approx(mape(pred_swapped, truth_swapped)).margin(1e-14));
  REQUIRE(nrmse(pred, truth) == Approx(nrmse(pred_swapped, truth_swapped)).margin(1e-14));
  REQUIRE(nrmse(pred, truth) > 0.0);
  REQUIRE(mape(pred, truth) > 0.0);
}

TEST_CASE("snr_db measures AC power against noise power", "[metrics]") {
  const int n = 100000;
  Eigen::VectorXd clean(n), noisy(n);
  NormalStream stream(8);
  for (int k = 0; k < n; ++k) {
    clean[k] = std::sqrt(2.0) * std::sin(2.0 * 3.141592653589793 * k / 100.0);
    noisy[k] = clean[k] + 0.1 * stream.next();
  }
  REQUIRE(snr_db(clean, noisy) == Approx(20.0).margin(0.5));
  REQUIRE(std::isinf(snr_db(clean, clean)));
  REQUIRE_THROWS_AS(snr_db(Eigen::VectorXd::Ones(10), Eigen::VectorXd::Ones(10)), DegenerateChannel);
}

TEST_CASE("windowed_nrmse matches the full metric for a constant error", "[metrics]") {
  const int n = 40;
  Eigen::MatrixXd truth(n, 1), pred(n, 1);
  for (int k = 0; k < n; ++k) truth(k, 0) = std::sin(0.3 * k);
  pred = truth.array() + 0.2;
  const std::vector<double> curve = windowed_nrmse(pred, truth, 10);
  REQUIRE(curve.size() == static_cast<std::size_t>(n));
  const double range = truth.maxCoeff() - truth.minCoeff();
  const double expected = std::sqrt(0.04 / range);
  for (double v : curve) REQUIRE(v == Approx(expected).margin(1e-12));
}

namespace {

RunRecord fixed_record(double metric_value, std::vector<double> traj) {
  RunRecord r;
  r.metrics["nrmse"] = metric_value;
  r.trajectories["p4"] = std::move(traj);
  return r;
}

}  // namespace

TEST_CASE("monte_carlo aggregates deterministic runs to zero-width intervals", "[metrics]") {
  const auto run = [](std::uint64_t) { return fixed_record(0.25, {1.0, 2.0}); };
  const MonteCarloSummary s = monte_carlo(run, {1, 2, 3, 4});
  REQUIRE(s.metrics.at("nrmse").mean == 0.25);
  REQUIRE(s.metrics.at("nrmse").ci95_low == 0.25);
  REQUIRE(s.metrics.at("nrmse").ci95_high == 0.25);
  REQUIRE(s.bands.at("p4").lo == s.bands.at("p4").hi);
}

TEST_CASE("monte_carlo means equal arithmetic means and ignore seed order", "[metrics]") {
  const auto run = [](std::uint64_t seed) {
    return fixed_record(static_cast<double>(seed), {static_cast<double>(seed), 0.0});
  };
  const MonteCarloSummary a = monte_carlo(run, {1, 2, 3, 4});
  const MonteCarloSummary b = monte_carlo(run, {4, 2, 1, 3});
  REQUIRE(a.metrics.at("nrmse").mean == Approx(2.5).margin(0.0));
  REQUIRE(a.metrics.at("nrmse").mean == b.metrics.at("nrmse").mean);
  REQUIRE(a.metrics.at("nrmse").ci95_low == b.metrics.at("nrmse").ci95_low);
  REQUIRE(a.bands.at("p4").hi == b.bands.at("p4").hi);

  // Band arithmetic by hand for two runs {0, 2}: mean 1, sd sqrt(2).
  const MonteCarloSummary c = monte_carlo(run, {0, 2});
  REQUIRE(c.bands.at("p4").mean[0] == Approx(1.0).margin(1e-15));
  REQUIRE(c.bands.at("p4").hi[0] == Approx(1.0 + 1.96 * std::sqrt(2.0)).margin(1e-12));
  REQUIRE(c.bands.at("p4").lo[0] == Approx(1.0 - 1.96 * std::sqrt(2.0)).margin(1e-12));
}

TEST_CASE("monte_carlo tolerates up to 20 percent failures", "[metrics]") {
  const auto run = [](std::uint64_t seed) {
    if (seed == 13) throw std::runtime_error("synthetic failure");
    return fixed_record(1.0, {0.0});
  };
  const MonteCarloSummary ok = monte_carlo(run, {1, 2, 3, 4, 13});  // 1/5 fails
  REQUIRE(ok.failures.size() == 1);
  REQUIRE(ok.failures[0].seed == 13);
  REQUIRE(ok.runs.size() == 4);
  REQUIRE(ok.metrics.at("nrmse").n == 4);

  const auto run_bad = [](std::uint64_t seed) {
    if (seed % 2 == 0) throw std::runtime_error("synthetic failure");
    return fixed_record(1.0, {0.0});
  };
  REQUIRE_THROWS_AS(monte_carlo(run_bad, {1, 2, 3, 4}), TooManyFailures);
  REQUIRE_THROWS_AS(monte_carlo(run_bad, {1}), ConfigError);  // needs >= 2 runs
}

TEST_CASE("monte_carlo runs identically on a worker pool", "[metrics]") {
  const auto run = [](std::uint64_t seed) {
    NormalStream stream(seed);
    return fixed_record(stream.next(), {stream.next(), stream.next()});
  };
  const std::vector<std::uint64_t> seeds = {5, 9, 1, 7, 3, 8};
  const MonteCarloSummary serial = monte_carlo(run, seeds, 1);
  const MonteCarloSummary pooled = monte_carlo(run, seeds, 4);
  REQUIRE(serial.metrics.at("nrmse").mean == pooled.metrics.at("nrmse").mean);
  REQUIRE(serial.bands.at("p4").hi == pooled.bands.at("p4").hi);
}
