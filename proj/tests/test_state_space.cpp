#include <catch2/catch.hpp>

#include "hybridckf/state_space.hpp"

using namespace hybridckf;

namespace {

HybridModelConfig demo_model(double dt = 0.01) {
  HybridModelConfig m;
  m.dt = dt;
  m.nn_template.in_scale = InputScale::from_ranges({35, 18, 10}, {55, 38, 30});
  m.nn_template.out_gain = 0.1;
  return m;
}

}  // namespace

TEST_CASE("layout constants partition the augmented vector", "[state_space]") {
  REQUIRE(AugmentedLayout::weight_len() + AugmentedLayout::pressure_len() == AugmentedLayout::total());
  REQUIRE(AugmentedLayout::pressure_offset() == AugmentedLayout::weight_len());
  REQUIRE(AugmentedLayout::total() == 105);
  REQUIRE(std::string(kAugmentedLayoutVersion).find("w101-s4") != std::string::npos);
}

TEST_CASE("assemble and split are exact inverses", "[state_space]") {
  Eigen::VectorXd w = Eigen::VectorXd::LinSpaced(kMlpFlatLen, -1.0, 1.0);
  const Eigen::Vector4d s(55.0, 44.0, 27.0, 19.0);
  const Eigen::VectorXd x = assemble(w, s);
  const auto [w2, s2] = split(x);
  REQUIRE((w2 - w).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((s2 - s).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE_THROWS_AS(assemble(Eigen::VectorXd::Zero(5), s), LengthMismatch);
  REQUIRE_THROWS_AS(split(Eigen::VectorXd::Zero(10)), LengthMismatch);
}

TEST_CASE("measure selects the observed pressures and blocks weights", "[state_space]") {
  const Eigen::Vector4d s(5.0, 4.0, 3.0, 2.0);
  REQUIRE((measure_pressures(s) - Eigen::Vector3d(5, 4, 2)).cwiseAbs().maxCoeff() == 0.0);

  Eigen::VectorXd w = Eigen::VectorXd::Constant(kMlpFlatLen, 7.7);
  const Eigen::VectorXd x = assemble(w, s);
  REQUIRE((measure(x) - Eigen::Vector3d(5, 4, 2)).cwiseAbs().maxCoeff() == 0.0);
  w.setConstant(-123.0);  // weight block must have no effect
  REQUIRE((measure(assemble(w, s)) - Eigen::Vector3d(5, 4, 2)).cwiseAbs().maxCoeff() == 0.0);

  // measure is exactly H x for the documented selection matrix.
  NormalStream stream(2);
  Eigen::VectorXd xr(kAugmentedDim);
  for (int i = 0; i < kAugmentedDim; ++i) xr[i] = stream.next();
  const Eigen::Vector3d via_matrix = measurement_matrix_augmented() * xr;
  REQUIRE((measure(xr) - via_matrix).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("assemble composes with the steady state", "[state_space]") {
  const RetinaParams params;
  const Eigen::Vector4d ss = steady_state(params, 62.0, 14.0);
  const Eigen::Vector3d y = measure(assemble(Eigen::VectorXd::Zero(kMlpFlatLen), ss));
  REQUIRE(y[0] == ss[0]);
  REQUIRE(y[1] == ss[1]);
  REQUIRE(y[2] == ss[3]);
}

TEST_CASE("zero network and zero dt freeze the state", "[state_space]") {
  const HybridModelConfig m = demo_model(0.0);
  const Eigen::VectorXd x =
      assemble(Eigen::VectorXd::Zero(kMlpFlatLen), Eigen::Vector4d(50, 40, 25, 18));
  const Eigen::VectorXd next = hybrid_transition(x, 62.0, 14.0, m);
  REQUIRE((next - x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("zero network at the fixed point leaves pressures unchanged", "[state_space]") {
  const HybridModelConfig m = demo_model(0.01);
  const Eigen::Vector4d ss = steady_state(m.params, 62.0, 14.0);
  const Eigen::VectorXd x = assemble(Eigen::VectorXd::Zero(kMlpFlatLen), ss);
  const Eigen::VectorXd next = hybrid_transition(x, 62.0, 14.0, m);
  REQUIRE((next - x).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("the weight block is copied bit-exactly", "[state_space]") {
  const HybridModelConfig m = demo_model();
  NormalStream stream(9);
  for (int rep = 0; rep < 10; ++rep) {
    Eigen::VectorXd x(kAugmentedDim);
    for (int i = 0; i < kMlpFlatLen; ++i) x[i] = 0.3 * stream.next();
    x.tail(4) << stream.uniform_in(45, 60), stream.uniform_in(38, 50), stream.uniform_in(20, 34),
        stream.uniform_in(14, 24);
    const Eigen::VectorXd next = hybrid_transition(x, 60.0, 14.0, m);
    REQUIRE((next.head(kMlpFlatLen) - x.head(kMlpFlatLen)).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("oracle-wired transition equals the Euler ground truth", "[state_space]") {
  const RetinaParams params;
  const double dt = 0.01;
  const int n = 200;
  const TimeSeriesDataset euler = simulate_ground_truth(params, dt, n, IntegratorMethod::euler);

  // Replace the network increment with dt * F4 and roll the hybrid step.
  Eigen::Vector4d p = euler.p_true.row(0).transpose();
  double worst = 0.0;
  for (int k = 1; k < n; ++k) {
    const double pin = euler.pin[k - 1], pout = euler.pout[k - 1];
    p = pressure_step(p, pin, pout, params, dt, [&](double p2, double p4, double p5) {
      return dt * (((p2 - p4) / params.r_24 - (p4 - p5) / params.r_45) / params.c4);
    });
    worst = std::max(worst, (p - Eigen::Vector4d(euler.p_true.row(k).transpose())).cwiseAbs().maxCoeff());
  }
  REQUIRE(worst < 1e-10);
}

TEST_CASE("non-finite pressures are rejected", "[state_space]") {
  const HybridModelConfig m = demo_model();
  Eigen::VectorXd x = assemble(Eigen::VectorXd::Zero(kMlpFlatLen),
                               Eigen::Vector4d(1e308, 40.0, 25.0, 18.0));
  REQUIRE_THROWS_AS(hybrid_transition(x, 62.0, 14.0, m), NonFinite);
}

TEST_CASE("transition validates the state length", "[state_space]") {
  const HybridModelConfig m = demo_model();
  REQUIRE_THROWS_AS(hybrid_transition(Eigen::VectorXd::Zero(10), 62.0, 14.0, m), LengthMismatch);
  REQUIRE_THROWS_AS(measure(Eigen::VectorXd::Zero(10)), LengthMismatch);
}
