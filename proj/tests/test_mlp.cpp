#include <catch2/catch.hpp>
#include <filesystem>
#include <fstream>

#include "hybridckf/mlp.hpp"

using namespace hybridckf;

namespace {

// Central finite differences of mlp_forward.
double fd_weight(const MlpParams& p, const Eigen::Vector3d& input, int idx, double h = 1e-6) {
  MlpParams hi = p, lo = p;
  hi.flat[idx] += h;
  lo.flat[idx] -= h;
  return (mlp_forward(hi, input) - mlp_forward(lo, input)) / (2.0 * h);
}

double fd_input(const MlpParams& p, const Eigen::Vector3d& input, int idx, double h = 1e-6) {
  Eigen::Vector3d hi = input, lo = input;
  hi[idx] += h;
  lo[idx] -= h;
  return (mlp_forward(p, hi) - mlp_forward(p, lo)) / (2.0 * h);
}

void require_close(double a, double b, double rel, double floor) {
  REQUIRE(std::abs(a - b) <= rel * std::max(std::abs(a), std::abs(b)) + floor);
}

}  // namespace

TEST_CASE("zero network outputs zero", "[mlp]") {
  MlpParams p;
  REQUIRE(mlp_forward(p, Eigen::Vector3d(30.0, -4.0, 17.0)) == 0.0);
}

TEST_CASE("single active unit reproduces tanh by hand", "[mlp]") {
  MlpParams p;
  p.w1(0, 0) = 1.0;
  p.w2(0) = 1.0;
  REQUIRE(mlp_forward(p, Eigen::Vector3d(0.5, 123.0, -9.0)) == Approx(0.462117).margin(1e-6));
}

TEST_CASE("tanh saturation bounds the output", "[mlp]") {
  NormalStream stream(17);
  for (int rep = 0; rep < 50; ++rep) {
    MlpParams p = mlp_init(rep, InputScale::identity(), 2.5);
    p.b2() = stream.next();
    double l1 = std::abs(p.b2());
    for (int j = 0; j < kMlpHidden; ++j) l1 += std::abs(p.w2(j));
    const Eigen::Vector3d input(stream.uniform_in(-100, 100), stream.uniform_in(-100, 100),
                                stream.uniform_in(-100, 100));
    REQUIRE(std::abs(mlp_forward(p, input)) <= std::abs(p.out_gain) * l1 + 1e-12);
    // Even overflowing pre-activations saturate to a finite output.
    REQUIRE(std::isfinite(mlp_forward(p, Eigen::Vector3d(1e300, -1e300, 1e300))));
  }
}

TEST_CASE("glorot init is seeded, bounded, and non-degenerate", "[mlp]") {
  const InputScale scale = InputScale::from_ranges({40, 20, 12}, {60, 40, 28});
  const MlpParams a = mlp_init(7, scale, 1.0);
  const MlpParams b = mlp_init(7, scale, 1.0);
  const MlpParams c = mlp_init(8, scale, 1.0);
  REQUIRE((a.flat - b.flat).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((a.flat - c.flat).cwiseAbs().maxCoeff() > 0.0);

  const double bound1 = std::sqrt(6.0 / 23.0);
  const double bound2 = std::sqrt(6.0 / 21.0);
  for (int j = 0; j < kMlpHidden; ++j) {
    REQUIRE(a.b1(j) == 0.0);
    REQUIRE(std::abs(a.w2(j)) <= bound2);
    for (int i = 0; i < kMlpInputs; ++i) REQUIRE(std::abs(a.w1(j, i)) <= bound1);
  }
  REQUIRE(a.b2() == 0.0);
}

TEST_CASE("flatten and unflatten are exact inverses", "[mlp]") {
  const MlpParams p = mlp_init(3, InputScale::from_ranges({0, 0, 0}, {1, 1, 1}), 0.5);
  const MlpParams q = unflatten(flatten(p), p);
  REQUIRE((p.flat - q.flat).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(q.out_gain == p.out_gain);
  REQUIRE(q.in_scale.offset == p.in_scale.offset);

  REQUIRE(flatten(MlpParams{}).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE_THROWS_AS(unflatten(Eigen::VectorXd::Zero(100), p), LengthMismatch);

  MlpParams perturbed = p;
  perturbed.flat[0] += 1.0;
  REQUIRE(perturbed.w1(0, 0) == p.w1(0, 0) + 1.0);
  int changed = 0;
  for (int i = 0; i < kMlpFlatLen; ++i) changed += perturbed.flat[i] != p.flat[i];
  REQUIRE(changed == 1);
}

TEST_CASE("gradient shortcuts hold", "[mlp]") {
  const MlpParams p = mlp_init(5, InputScale::identity(), 1.7);
  const Eigen::Vector3d input(0.2, -0.4, 0.9);
  const MlpGradient zero = mlp_gradient(p, input, 0.0);
  REQUIRE(zero.d_weights.cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(zero.d_input.cwiseAbs().maxCoeff() == 0.0);

  const MlpGradient g = mlp_gradient(p, input, 2.5);
  REQUIRE(g.d_weights[kMlpFlatLen - 1] == Approx(2.5 * 1.7).margin(1e-14));
}

TEST_CASE("gradients match central finite differences", "[mlp]") {
  NormalStream stream(23);
  for (int rep = 0; rep < 100; ++rep) {
    const InputScale scale = InputScale::from_ranges({40, 20, 12}, {60, 40, 28});
    const MlpParams p = mlp_init(1000 + rep, scale, 0.1);
    const Eigen::Vector3d input(stream.uniform_in(40, 60), stream.uniform_in(20, 40),
                                stream.uniform_in(12, 28));
    const double upstream = stream.uniform_in(0.5, 2.0);
    const MlpGradient g = mlp_gradient(p, input, upstream);
    // Probe a rotating subset of the weight coordinates plus all inputs.
    for (int i = rep % 7; i < kMlpFlatLen; i += 7) {
      require_close(g.d_weights[i], upstream * fd_weight(p, input, i), 1e-5, 1e-8);
    }
    for (int i = 0; i < 3; ++i) {
      require_close(g.d_input[i], upstream * fd_input(p, input, i), 1e-5, 1e-8);
    }
  }
}

TEST_CASE("weights file round-trips and rejects layout mismatches", "[mlp]") {
  const MlpParams p = mlp_init(11, InputScale::from_ranges({40, 20, 12}, {60, 40, 28}), 0.1);
  const auto path = std::filesystem::temp_directory_path() / "hybridckf_weights.csv";
  save_mlp(p, path);
  const MlpParams back = load_mlp(path);
  REQUIRE((p.flat - back.flat).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(back.out_gain == p.out_gain);
  REQUIRE(back.in_scale.gain == p.in_scale.gain);

  // Tamper with the layout token.
  std::ifstream in(path);
  std::string contents((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  contents.replace(contents.find("mlp-3x20x1"), 10, "mlp-9x99x9");
  std::ofstream out(path);
  out << contents;
  out.close();
  REQUIRE_THROWS_AS(load_mlp(path), ConfigError);
  std::filesystem::remove(path);
}
