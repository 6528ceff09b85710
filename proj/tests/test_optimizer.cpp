#include <doctest.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "shareconv/error.hpp"
#include "shareconv/optimizer.hpp"

using namespace shareconv;

namespace {

ParameterRegistry<double> scalar_registry(double w0, bool decay = false) {
  Rng rng(0);
  ParameterRegistry<double> reg;
  reg.register_parameter("w", {1}, InitSpec::constant(w0), rng, decay);
  return reg;
}

}  // namespace

TEST_CASE("plain SGD without momentum") {
  auto reg = scalar_registry(0.0);
  reg.accumulate_grad({0}, Tensor<double>({1}, 1.0));
  step(reg, {0.1, 0.0, 0.0, {}}, 0);
  CHECK(reg.value({0})[0] == doctest::Approx(-0.1).epsilon(1e-15));
}

TEST_CASE("two momentum steps by hand") {
  auto reg = scalar_registry(0.0);
  const OptimizerConfig cfg{0.1, 0.9, 0.0, {}};
  oracle::ScalarMomentum ref;
  for (int k = 0; k < 2; ++k) {
    reg.zero_grads();
    reg.accumulate_grad({0}, Tensor<double>({1}, 1.0));
    step(reg, cfg, 0);
    ref.step(1.0, 0.1, 0.9);
  }
  CHECK(std::abs(reg.slot({0}).velocity[0] - 0.19) <= 1e-12);
  CHECK(std::abs(reg.value({0})[0] + 0.29) <= 1e-12);
  CHECK(std::abs(reg.value({0})[0] - ref.w) <= 1e-15);
}

TEST_CASE("shared slot moves by the summed contributions") {
  auto reg = scalar_registry(2.0);
  reg.accumulate_grad({0}, Tensor<double>({1}, 0.5));
  reg.accumulate_grad({0}, Tensor<double>({1}, 0.25));
  step(reg, {1.0, 0.0, 0.0, {}}, 0);
  CHECK(reg.value({0})[0] == 2.0 - 0.75);
}

TEST_CASE("weight decay applies only to flagged slots") {
  Rng rng(0);
  ParameterRegistry<double> reg;
  const auto w = reg.register_parameter("conv", {1}, InitSpec::constant(2.0), rng, true);
  const auto s = reg.register_parameter("bn.scale", {1}, InitSpec::constant(2.0), rng, false);
  step(reg, {0.1, 0.9, 0.01, {}}, 0);
  CHECK(reg.value(w)[0] == doctest::Approx(2.0 - 0.1 * 0.01 * 2.0).epsilon(1e-14));
  CHECK(reg.value(s)[0] == 2.0);
}

TEST_CASE("with zero gradients velocity decays geometrically") {
  auto reg = scalar_registry(0.0);
  reg.slot({0}).velocity[0] = 1.0;
  for (int k = 1; k <= 20; ++k) {
    step(reg, {0.1, 0.5, 0.0, {}}, 0);
    CHECK(std::abs(reg.slot({0}).velocity[0]) <= std::pow(0.5, k) + 1e-15);
  }
}

TEST_CASE("non-finite gradients abort the whole step") {
  Rng rng(0);
  ParameterRegistry<double> reg;
  const auto a = reg.register_parameter("first", {2}, InitSpec::constant(1.0), rng);
  const auto b = reg.register_parameter("stage2.shared3x3", {2}, InitSpec::constant(1.0), rng);
  reg.accumulate_grad(a, Tensor<double>({2}, 1.0));
  Tensor<double> bad({2}, 0.0);
  bad[1] = std::numeric_limits<double>::quiet_NaN();
  reg.accumulate_grad(b, bad);
  try {
    step(reg, {0.1, 0.9, 0.0, {}}, 0);
    FAIL("expected NonFiniteGradient");
  } catch (const NonFiniteGradient& e) {
    CHECK(e.slot() == "stage2.shared3x3");
    CHECK(std::string(e.what()).find("stage2.shared3x3") != std::string::npos);
  }
  CHECK(reg.value(a)[0] == 1.0);  // nothing was written
  reg.zero_grads();
  reg.accumulate_grad(a, Tensor<double>({2}, std::numeric_limits<double>::infinity()));
  CHECK_THROWS_AS(step(reg, {0.1, 0.9, 0.0, {}}, 0), NonFiniteGradient);
}

TEST_CASE("learning rate schedule") {
  OptimizerConfig cfg{0.1, 0.9, 0.0, {}};
  CHECK(lr_at(cfg, 0) == 0.1);
  CHECK(lr_at(cfg, 500) == 0.1);
  cfg.schedule = {{60, 0.2}, {120, 0.2}};
  CHECK(lr_at(cfg, 0) == 0.1);
  CHECK(lr_at(cfg, 59) == 0.1);
  CHECK(lr_at(cfg, 60) == doctest::Approx(0.02));
  CHECK(lr_at(cfg, 130) == doctest::Approx(0.004).epsilon(1e-12));
  double prev = lr_at(cfg, 0);
  for (std::size_t e = 1; e < 200; ++e) {
    CHECK(lr_at(cfg, e) <= prev);
    prev = lr_at(cfg, e);
  }

  const auto d = cifar_defaults();
  CHECK(d.alpha == 0.1);
  CHECK(d.gamma == 0.9);
  CHECK(d.weight_decay == 5e-4);
  CHECK(d.schedule == std::vector<LrDrop>{{60, 0.2}, {120, 0.2}, {160, 0.2}});
}

TEST_CASE("the schedule rate reaches the update") {
  auto reg = scalar_registry(0.0);
  reg.accumulate_grad({0}, Tensor<double>({1}, 1.0));
  step(reg, {1.0, 0.0, 0.0, {{3, 0.5}}}, 3);
  CHECK(reg.value({0})[0] == -0.5);
}

TEST_CASE("config validation and drop parsing") {
  CHECK_NOTHROW(OptimizerConfig{}.validate());
  CHECK_THROWS_AS((OptimizerConfig{-0.1, 0.9, 0, {}}.validate()), Error);
  CHECK_THROWS_AS((OptimizerConfig{0.1, 1.0, 0, {}}.validate()), Error);
  CHECK_THROWS_AS((OptimizerConfig{0.1, 0.9, -1, {}}.validate()), Error);
  CHECK_THROWS_AS((OptimizerConfig{0.1, 0.9, 0, {{10, 0.5}, {10, 0.5}}}.validate()), Error);
  CHECK_THROWS_AS((OptimizerConfig{0.1, 0.9, 0, {{10, 1.5}}}.validate()), Error);
  CHECK_THROWS_AS((OptimizerConfig{0.1, 0.9, 0, {{10, 0.0}}}.validate()), Error);

  CHECK(parse_lr_drop("60:0.2") == LrDrop{60, 0.2});
  CHECK_THROWS_AS(parse_lr_drop("60"), Error);
  CHECK_THROWS_AS(parse_lr_drop("x:0.2"), Error);
  CHECK_THROWS_AS(parse_lr_drop("60:abc"), Error);
}
