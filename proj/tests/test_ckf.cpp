#include <catch2/catch.hpp>

#include "hybridckf/ckf.hpp"
#include "oracles.hpp"

using namespace hybridckf;

namespace {

Eigen::MatrixXd random_spd(int dim, NormalStream& stream) {
  Eigen::MatrixXd b(dim, dim);
  for (int i = 0; i < dim * dim; ++i) b(i) = stream.next();
  return b * b.transpose() + 0.1 * Eigen::MatrixXd::Identity(dim, dim);
}

FilterConfig demo_filter_config() {
  FilterConfig fc;
  fc.model.dt = 0.01;
  fc.model.nn_template.in_scale = InputScale::from_ranges({35, 18, 10}, {55, 38, 30});
  fc.model.nn_template.out_gain = 0.1;
  fc.model.meas_noise_r = 0.01;
  return fc;
}

// Dataset whose truth is the hybrid recursion itself (exact self-consistency).
TimeSeriesDataset hybrid_generated_dataset(const HybridModelConfig& model,
                                           const Eigen::VectorXd& weights, int n) {
  TimeSeriesDataset ds;
  ds.dt = model.dt;
  ds.times.resize(n);
  ds.pin.resize(n);
  ds.pout.resize(n);
  ds.p_true.resize(n, 4);
  ds.y_noisy.resize(n, 3);
  Eigen::Vector4d p =
      steady_state(model.params, model.params.drivers.pin_mean, model.params.drivers.pout_mean);
  for (int k = 0; k < n; ++k) {
    const double t = k * model.dt;
    ds.times[k] = t;
    ds.pin[k] = inlet_pressure(model.params.drivers, t);
    ds.pout[k] = outlet_pressure(model.params.drivers, t);
    ds.p_true.row(k) = p.transpose();
    ds.y_noisy.row(k) = measure_pressures(p).transpose();
    if (k + 1 < n) p = hybrid_pressure_step(p, ds.pin[k], ds.pout[k], model, weights.data());
  }
  ds.pin_noisy = ds.pin;
  ds.pout_noisy = ds.pout;
  return ds;
}

}  // namespace

TEST_CASE("cubature points in one dimension are mean +/- sigma", "[ckf]") {
  GaussianBelief b{Eigen::VectorXd::Constant(1, 3.0), Eigen::MatrixXd::Constant(1, 1, 4.0)};
  const CubatureSet set = cubature_points(b);
  REQUIRE(set.weight == 0.5);
  REQUIRE(set.points(0, 0) == Approx(5.0).margin(1e-14));
  REQUIRE(set.points(0, 1) == Approx(1.0).margin(1e-14));
}

TEST_CASE("cubature points of a standard 2d Gaussian sit on the axes", "[ckf]") {
  GaussianBelief b{Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2)};
  const CubatureSet set = cubature_points(b);
  REQUIRE(set.weight == 0.25);
  REQUIRE(set.points.cols() == 4);  // twice the state dimension
  const double s = std::sqrt(2.0);
  REQUIRE(set.points.col(0).isApprox(Eigen::Vector2d(s, 0), 1e-14));
  REQUIRE(set.points.col(1).isApprox(Eigen::Vector2d(0, s), 1e-14));
  REQUIRE(set.points.col(2).isApprox(Eigen::Vector2d(-s, 0), 1e-14));
  REQUIRE(set.points.col(3).isApprox(Eigen::Vector2d(0, -s), 1e-14));
}

TEST_CASE("cubature points reconstruct the first two moments", "[ckf]") {
  NormalStream stream(31);
  for (int rep = 0; rep < 20; ++rep) {
    const int dim = 1 + rep % 8;
    GaussianBelief b;
    b.mean.resize(dim);
    for (int i = 0; i < dim; ++i) b.mean(i) = stream.next();
    b.cov = random_spd(dim, stream);
    const CubatureSet set = cubature_points(b);
    REQUIRE(set.points.cols() == 2 * dim);

    const Eigen::VectorXd mean = set.points.rowwise().sum() * set.weight;
    REQUIRE((mean - b.mean).cwiseAbs().maxCoeff() < 1e-12 * std::max(1.0, b.mean.cwiseAbs().maxCoeff()));
    const Eigen::MatrixXd centered = set.points.colwise() - mean;
    const Eigen::MatrixXd cov = set.weight * centered * centered.transpose();
    REQUIRE((cov - b.cov).norm() / b.cov.norm() < 1e-10);
  }
}

TEST_CASE("cubature expectation closes on the identity", "[ckf]") {
  NormalStream stream(37);
  GaussianBelief b;
  b.mean = Eigen::VectorXd::Zero(4);
  for (int i = 0; i < 4; ++i) b.mean(i) = stream.next();
  b.cov = random_spd(4, stream);
  const CubatureStats stats = cubature_expectation([](const Eigen::VectorXd& x) { return x; }, b);
  REQUIRE((stats.mean - b.mean).cwiseAbs().maxCoeff() < 1e-12);
  REQUIRE((stats.cov - b.cov).norm() / b.cov.norm() < 1e-10);
  REQUIRE((stats.cross - b.cov).norm() / b.cov.norm() < 1e-10);
}

TEST_CASE("the rule is exact at degree 2 and hits its degree-3 boundary at x^4", "[ckf]") {
  GaussianBelief b{Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1)};
  const auto square = [](const Eigen::VectorXd& x) {
    return Eigen::VectorXd::Constant(1, x(0) * x(0)).eval();
  };
  REQUIRE(cubature_expectation(square, b).mean(0) == Approx(1.0).margin(1e-14));

  const auto quartic = [](const Eigen::VectorXd& x) {
    return Eigen::VectorXd::Constant(1, std::pow(x(0), 4)).eval();
  };
  // True Gaussian moment is 3; the third-degree rule yields 1.
  REQUIRE(cubature_expectation(quartic, b).mean(0) == Approx(1.0).margin(1e-14));
}

TEST_CASE("predict with the identity transition and zero noise is a no-op", "[ckf]") {
  NormalStream stream(41);
  GaussianBelief b;
  b.mean = Eigen::VectorXd::Zero(5);
  for (int i = 0; i < 5; ++i) b.mean(i) = stream.next();
  b.cov = random_spd(5, stream);
  const GaussianBelief prior = ckf_predict_generic(
      b, [](const Eigen::VectorXd& x) { return x; }, Eigen::MatrixXd::Zero(5, 5), 1e-9);
  REQUIRE((prior.mean - b.mean).cwiseAbs().maxCoeff() < 1e-10);
  REQUIRE((prior.cov - b.cov).norm() / b.cov.norm() < 1e-10);
}

TEST_CASE("predict matches the analytic linear-Gaussian propagation", "[ckf]") {
  NormalStream stream(43);
  const int dim = 6;
  GaussianBelief b;
  b.mean.resize(dim);
  for (int i = 0; i < dim; ++i) b.mean(i) = stream.next();
  b.cov = random_spd(dim, stream);
  Eigen::MatrixXd a(dim, dim);
  for (int i = 0; i < dim * dim; ++i) a(i) = 0.4 * stream.next();
  const Eigen::MatrixXd q = random_spd(dim, stream);

  const GaussianBelief prior =
      ckf_predict_generic(b, [&](const Eigen::VectorXd& x) { return (a * x).eval(); }, q, 1e-9);
  const Eigen::MatrixXd expected_cov = a * b.cov * a.transpose() + q;
  REQUIRE((prior.mean - a * b.mean).norm() / (a * b.mean).norm() < 1e-9);
  REQUIRE((prior.cov - expected_cov).norm() / expected_cov.norm() < 1e-9);
}

TEST_CASE("weight-block variance grows by exactly the weight process noise", "[ckf]") {
  FilterConfig fc = demo_filter_config();
  fc.model.q_weights = 1e-7;
  fc.model.q_pressures = 1e-6;

  GaussianBelief b;
  const MlpParams nn = mlp_init(2, fc.model.nn_template.in_scale, fc.model.nn_template.out_gain);
  b.mean = assemble(nn.flat, steady_state(fc.model.params, 62.0, 14.0));
  Eigen::VectorXd diag(kAugmentedDim);
  diag.head(kMlpFlatLen).setConstant(0.09);
  diag.tail(4).setConstant(25.0);
  b.cov = diag.asDiagonal();

  const GaussianBelief prior = ckf_predict(b, 62.0, 14.0, fc);
  const Eigen::VectorXd growth =
      prior.cov.diagonal().head(kMlpFlatLen) - b.cov.diagonal().head(kMlpFlatLen);
  REQUIRE((growth.array() - fc.model.q_weights).abs().maxCoeff() < 1e-11);
}

TEST_CASE("scalar update reproduces the textbook posterior", "[ckf]") {
  GaussianBelief prior{Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1)};
  const UpdateResult res =
      ckf_update_linear(prior, Eigen::MatrixXd::Identity(1, 1), Eigen::MatrixXd::Identity(1, 1),
                        Eigen::VectorXd::Constant(1, 2.0), 1e-9);
  REQUIRE(res.posterior.mean(0) == Approx(1.0).margin(1e-12));
  REQUIRE(res.posterior.cov(0, 0) == Approx(0.5).margin(1e-12));
  REQUIRE(res.innovation(0) == Approx(2.0).margin(1e-12));
}

TEST_CASE("an uninformative measurement barely moves the prior", "[ckf]") {
  NormalStream stream(47);
  GaussianBelief prior;
  prior.mean = Eigen::VectorXd::Zero(4);
  for (int i = 0; i < 4; ++i) prior.mean(i) = stream.next();
  prior.cov = random_spd(4, stream);
  Eigen::MatrixXd h(2, 4);
  for (int i = 0; i < 8; ++i) h(i) = stream.next();
  const UpdateResult res = ckf_update_linear(
      prior, h, 1e12 * Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Constant(2, 10.0), 1e-9);
  REQUIRE((res.posterior.mean - prior.mean).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("a zero innovation covariance is reported as singular", "[ckf]") {
  GaussianBelief prior{Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Zero(2, 2)};
  REQUIRE_THROWS_AS(ckf_update_linear(prior, Eigen::MatrixXd::Identity(2, 2),
                                      Eigen::MatrixXd::Zero(2, 2), Eigen::VectorXd::Zero(2), 1e-9),
                    SingularInnovation);
}

TEST_CASE("the CKF recursion equals the analytic Kalman filter", "[ckf]") {
  NormalStream stream(53);
  const oracles::LinearSystem sys = oracles::random_linear_system(4, 2, 50, stream);

  GaussianBelief belief{sys.x0, sys.p0};
  oracles::AnalyticKf kf{sys.x0, sys.p0};
  for (const auto& y : sys.measurements) {
    belief = ckf_predict_generic(
        belief, [&](const Eigen::VectorXd& x) { return (sys.a * x).eval(); }, sys.q, 1e-9);
    belief = ckf_update_linear(belief, sys.h, sys.r, y, 1e-9).posterior;
    kf.predict(sys.a, sys.q);
    kf.update(sys.h, sys.r, y);
  }
  REQUIRE((belief.mean - kf.mean).norm() / kf.mean.norm() < 1e-8);
  REQUIRE((belief.cov - kf.cov).norm() / kf.cov.norm() < 1e-8);
}

TEST_CASE("the generic cubature update agrees with the analytic linear update", "[ckf]") {
  NormalStream stream(59);
  GaussianBelief prior;
  prior.mean = Eigen::VectorXd::Zero(5);
  for (int i = 0; i < 5; ++i) prior.mean(i) = stream.next();
  prior.cov = random_spd(5, stream);
  Eigen::MatrixXd h(2, 5);
  for (int i = 0; i < 10; ++i) h(i) = stream.next();
  const Eigen::MatrixXd r = 0.3 * Eigen::MatrixXd::Identity(2, 2);
  const Eigen::VectorXd y = Eigen::VectorXd::Constant(2, 0.7);

  const UpdateResult lin = ckf_update_linear(prior, h, r, y, 1e-9);
  const UpdateResult cub = ckf_update_cubature(
      prior, [&](const Eigen::VectorXd& x) { return (h * x).eval(); }, r, y, 1e-9);
  REQUIRE((lin.posterior.mean - cub.posterior.mean).norm() < 1e-9);
  REQUIRE((lin.posterior.cov - cub.posterior.cov).norm() / lin.posterior.cov.norm() < 1e-9);
}

TEST_CASE("posterior trace never exceeds the prior trace", "[ckf]") {
  FilterConfig fc = demo_filter_config();
  const MlpParams nn = mlp_init(3, fc.model.nn_template.in_scale, fc.model.nn_template.out_gain);
  const TimeSeriesDataset ds = hybrid_generated_dataset(fc.model, nn.flat, 60);

  GaussianBelief belief;
  belief.mean = assemble(nn.flat, Eigen::Vector4d(ds.p_true.row(0).transpose()));
  Eigen::VectorXd diag(kAugmentedDim);
  diag.head(kMlpFlatLen).setConstant(0.09);
  diag.tail(4).setConstant(25.0);
  belief.cov = diag.asDiagonal();
  for (int k = 1; k < ds.n_t(); ++k) {
    belief = ckf_predict(belief, ds.pin_noisy[k - 1], ds.pout_noisy[k - 1], fc);
    const double prior_trace = belief.cov.trace();
    belief = ckf_update(belief, Eigen::Vector3d(ds.y_noisy.row(k)), fc).posterior;
    REQUIRE(belief.cov.trace() <= prior_trace + 1e-9);
  }
}

TEST_CASE("ckf_train is self-consistent on hybrid-generated data", "[ckf]") {
  FilterConfig fc = demo_filter_config();
  fc.model.q_weights = 0.0;
  fc.model.q_pressures = 1e-10;
  fc.model.meas_noise_r = 1e-8;
  fc.sigma_w0 = 1e-6;
  fc.sigma_s0 = 1e-3;
  const MlpParams nn = mlp_init(5, fc.model.nn_template.in_scale, fc.model.nn_template.out_gain);
  const TimeSeriesDataset ds = hybrid_generated_dataset(fc.model, nn.flat, 400);
  fc.init_weights = nn.flat;
  fc.init_pressures = InitPressureMode::explicit_values;
  fc.explicit_pressures = ds.p_true.row(0).transpose();

  const CkfTrainResult result = ckf_train(ds, fc);
  REQUIRE(nrmse(result.filtered.mean, ds.p_true) < 1e-3);
  REQUIRE(result.stats.max_jitter_rung <= 2);
}

TEST_CASE("ckf_train is bit-deterministic", "[ckf]") {
  FilterConfig fc = demo_filter_config();
  fc.init_seed = 77;
  const TimeSeriesDataset ds =
      inject_noise(simulate_ground_truth(fc.model.params, 0.01, 200), 25.0, 9);
  const CkfTrainResult a = ckf_train(ds, fc);
  const CkfTrainResult b = ckf_train(ds, fc);
  REQUIRE((a.weights.flat - b.weights.flat).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((a.filtered.mean - b.filtered.mean).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(a.learning_curve == b.learning_curve);
}

TEST_CASE("a filter pushed outside the pressure envelope reports divergence", "[ckf]") {
  FilterConfig fc = demo_filter_config();
  fc.init_pressures = InitPressureMode::explicit_values;
  fc.explicit_pressures = Eigen::Vector4d(1000.0, 900.0, 800.0, 700.0);
  const TimeSeriesDataset ds =
      inject_noise(simulate_ground_truth(fc.model.params, 0.01, 100), 25.0, 9);
  REQUIRE_THROWS_AS(ckf_train(ds, fc), Diverged);
}

TEST_CASE("ckf_test freezes the weights and runs a 4-dimensional filter", "[ckf]") {
  FilterConfig fc = demo_filter_config();
  const MlpParams nn = mlp_init(5, fc.model.nn_template.in_scale, fc.model.nn_template.out_gain);
  const TimeSeriesDataset ds = hybrid_generated_dataset(fc.model, nn.flat, 150);

  const Eigen::VectorXd weights_before = nn.flat;
  const CkfTestResult result = ckf_test(ds, nn, fc);
  REQUIRE((nn.flat - weights_before).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(result.filtered.mean.cols() == 4);
  REQUIRE(result.filtered.var.cols() == 4);
  REQUIRE((result.filtered.var.array() > 0.0).all());
  // Tracks its own generating model closely.
  REQUIRE(nrmse(result.filtered.mean, ds.p_true) < 1e-2);
}

TEST_CASE("frozen-weight test filtering matches training on a converged model", "[ckf]") {
  FilterConfig fc = demo_filter_config();
  fc.model.q_weights = 0.0;
  fc.model.q_pressures = 1e-8;
  fc.model.meas_noise_r = 1e-6;
  fc.sigma_w0 = 1e-9;
  fc.sigma_s0 = 1.0;
  const MlpParams nn = mlp_init(13, fc.model.nn_template.in_scale, fc.model.nn_template.out_gain);
  const TimeSeriesDataset ds = hybrid_generated_dataset(fc.model, nn.flat, 120);
  fc.init_weights = nn.flat;

  const CkfTrainResult trained = ckf_train(ds, fc);
  const CkfTestResult tested = ckf_test(ds, nn, fc);
  REQUIRE((trained.filtered.mean - tested.filtered.mean).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("the cubature measurement update is a drop-in for the analytic one", "[ckf]") {
  FilterConfig fc = demo_filter_config();
  fc.init_seed = 3;
  const TimeSeriesDataset ds =
      inject_noise(simulate_ground_truth(fc.model.params, 0.01, 150), 30.0, 12);
  const CkfTrainResult analytic = ckf_train(ds, fc);
  fc.use_cubature_update = true;
  const CkfTrainResult cubature = ckf_train(ds, fc);
  // With a linear selection measurement both updates are exact.
  REQUIRE((analytic.filtered.mean - cubature.filtered.mean).cwiseAbs().maxCoeff() < 1e-6);
  REQUIRE((analytic.weights.flat - cubature.weights.flat).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("the filtered P4 closes in on its ground truth while training", "[ckf]") {
  // Default-style end-to-end run at the noisiest benchmark level.
  FilterConfig fc = demo_filter_config();
  const TimeSeriesDataset clean = simulate_ground_truth(fc.model.params, 0.01, 1201);
  const TimeSeriesDataset ds = inject_noise(clean, 22.56, 21);
  const auto sigma = noise_sigmas(clean, 22.56);
  fc.model.meas_noise_r = (sigma[2] * sigma[2] + sigma[3] * sigma[3] + sigma[4] * sigma[4]) / 3.0;
  fc.init_seed = 6;

  const CkfTrainResult result = ckf_train(ds, fc);
  const std::vector<double> p4_curve =
      windowed_nrmse(result.filtered.mean.col(2), ds.p_true.col(2), fc.curve_window);
  const double initial = p4_curve[static_cast<std::size_t>(fc.curve_window - 1)];
  const double final_value = p4_curve.back();
  INFO("P4 windowed NRMSE: first full window " << initial << ", final " << final_value);
  REQUIRE(final_value < 0.5 * initial);
}

TEST_CASE("covariances stay SPD through a long run with at most one jitter rung", "[ckf]") {
  FilterConfig fc = demo_filter_config();
  const TimeSeriesDataset ds =
      inject_noise(simulate_ground_truth(fc.model.params, 0.01, 10001), 22.56, 4);
  fc.model.meas_noise_r = 0.04;
  const CkfTrainResult result = ckf_train(ds, fc);
  INFO("repairs=" << result.stats.repairs << " max_rung=" << result.stats.max_jitter_rung);
  REQUIRE(result.stats.max_jitter_rung <= 2);
  REQUIRE(result.filtered.mean.allFinite());
}
