#include <doctest.h>

#include "shareconv/error.hpp"
#include "shareconv/verify.hpp"

using namespace shareconv;

TEST_CASE("reduced architectures") {
  CHECK(reduced_architecture("resnet164", 8, 2).to_string() == "resnet164/w32/b2");
  CHECK(blocks_for_two_bindings("resnet164") == 3);
  CHECK(blocks_for_two_bindings("resnet34") == 2);
  CHECK(blocks_for_two_bindings("toy") == 2);
  CHECK(reduced_input_extent("resnet164", 8) == 8);
  CHECK(reduced_input_extent("toy", 8) == 8);
  CHECK_THROWS_AS(reduced_architecture("resnet9000", 8, 2), Error);
}

TEST_CASE("relative difference") {
  const Tensor<double> a({3}, std::vector<double>{1, -4, 2});
  const Tensor<double> b({3}, std::vector<double>{1, -4, 3});
  CHECK(relative_difference(a, b) == doctest::Approx(0.25));
  CHECK(relative_difference(a, a) == 0.0);
  const Tensor<double> z({3});
  CHECK(relative_difference(z, z) == 0.0);
  CHECK_THROWS_AS(relative_difference(a, Tensor<double>({2})), Error);
}

TEST_CASE("toy gradcheck passes shared and unshared") {
  for (const bool shared : {true, false}) {
    GradcheckOptions o;
    o.shared = shared;
    o.seed = 11;
    const auto r = gradcheck(o);
    CAPTURE(r.worst_slot);
    CHECK(r.passed);
    CHECK(r.max_error <= 1e-5);
    CHECK(r.unresolved == 0);
    CHECK_FALSE(r.slots.empty());
    std::size_t max_bindings = 0;
    for (const auto& s : r.slots) max_bindings = std::max(max_bindings, s.bindings);
    CHECK(max_bindings == (shared ? 2u : 1u));
  }
}

TEST_CASE("gradcheck catches a corrupted shared gradient") {
  GradcheckOptions o;
  o.seed = 1;
  o.corrupt = [](ParameterRegistry<double>& params) {
    const auto id = params.layout().find("stage1.shared3x3");
    REQUIRE(id.has_value());
    for (auto& g : params.slot(*id).grad.data()) g = -g;
  };
  const auto r = gradcheck(o);
  CHECK_FALSE(r.passed);
  CHECK(r.worst_slot == "stage1.shared3x3");
  CHECK(r.max_error > 0.5);
}

TEST_CASE("gradcheck catches a gradient missing one binding") {
  // keep only half of a two-binding accumulation: what a missing sum would give
  GradcheckOptions o;
  o.seed = 2;
  o.corrupt = [](ParameterRegistry<double>& params) {
    for (auto& g : params.slot(*params.layout().find("stage2.shared3x3")).grad.data()) g *= 0.5;
  };
  const auto r = gradcheck(o);
  CHECK_FALSE(r.passed);
  CHECK(r.worst_slot == "stage2.shared3x3");
}

TEST_CASE("tied-clone equivalence on a reduced bottleneck network") {
  EquivOptions o;
  o.architecture = "resnet164";
  o.seed = 5;
  const auto r = equiv(o);
  CAPTURE(r.worst_gradient_slot);
  CHECK(r.forward_error <= 1e-6);
  CHECK(r.gradient_error <= 1e-6);
  CHECK(r.max_bindings >= 2);
  CHECK(r.post_step_difference > 0.0);
  CHECK(r.passed());
}

TEST_CASE("a single binding stays equal after a step") {
  EquivOptions o;
  o.architecture = "toy-1block";
  o.blocks = 1;
  const auto r = equiv(o);
  CHECK(r.max_bindings == 1);
  CHECK(r.post_step_difference <= 1e-12);
  CHECK(r.passed());
}
