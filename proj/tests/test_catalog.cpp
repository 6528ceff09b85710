#include <doctest.h>

#include <chrono>
#include <cmath>

#include "shareconv/catalog.hpp"
#include "shareconv/error.hpp"

using namespace shareconv;

namespace {

struct Reference {
  const char* name;
  double unshared_m, shared_m, decrease;
  std::size_t convs, convs_shared;
};

// Published reference figures.
constexpr Reference table[] = {
    {"resnet164", 1.70, 0.93, 45, 164, 113}, {"wrn-40-4", 8.95, 5.85, 35, 40, 25},
    {"wrn-28-10", 36.54, 26.86, 26, 28, 19}, {"resnet34", 21.8, 13.6, 37, 34, 20},
    {"resnet50", 25.6, 20.5, 20, 50, 38},    {"resnet101", 44.5, 29.4, 33, 101, 72},
    {"resnet152", 60.2, 36.8, 39, 152, 106},
};

bool within_percent(double got, double ref, double pct) { return std::abs(got - ref) <= ref * pct / 100.0; }

}  // namespace

TEST_CASE("parameter counts reproduce the reference table") {
  const auto start = std::chrono::steady_clock::now();
  for (const auto& r : table) {
    CAPTURE(r.name);
    const double unshared = static_cast<double>(count_parameters(make_spec(r.name, false)));
    const double shared = static_cast<double>(count_parameters(make_spec(r.name, true)));
    CHECK(within_percent(unshared / 1e6, r.unshared_m, 1.0));
    CHECK(within_percent(shared / 1e6, r.shared_m, 1.0));
    CHECK(std::abs(100.0 * (unshared - shared) / unshared - r.decrease) <= 1.0);
  }
  CHECK(std::chrono::steady_clock::now() - start < std::chrono::seconds(5));
}

TEST_CASE("exact parameter counts") {
  // Hand-summed from the layer lists; pinned to catch silent drift.
  CHECK(count_parameters(make_spec("resnet164", false)) == 1'703'258);
  CHECK(count_parameters(make_spec("resnet164", true)) == 929'114);
  CHECK(count_parameters(make_spec("wrn-40-4", false)) == 8'949'210);
  CHECK(count_parameters(make_spec("wrn-28-10", false)) == 36'536'884);
  CHECK(count_parameters(make_spec("resnet34", false)) == 21'797'672);
  CHECK(count_parameters(make_spec("resnet50", false)) == 25'557'032);
  CHECK(count_parameters(make_spec("resnet152", false)) == 60'192'808);
}

TEST_CASE("savings closed form") {
  const auto wrn = make_spec("wrn-40-4", true);
  CHECK(sharing_savings(wrn.stages[2]) == 4 * 9 * 256 * 256);
  CHECK(participating_blocks(wrn.stages[2]) == 5);

  StageSpec one;
  one.num_blocks = 1;
  one.out_channels = 64;
  one.share = true;
  one.include_entry_block = true;
  CHECK(sharing_savings(one) == 0);

  CHECK(total_sharing_savings(make_spec("resnet50", true)) == 5'050'368);
  const std::size_t r34 = count_parameters(make_spec("resnet34", false)) - count_parameters(make_spec("resnet34", true));
  CHECK(r34 == 8'183'808);
  CHECK(r34 == 2 * 9 * 64 * 64 + 3 * 9 * 128 * 128 + 5 * 9 * 256 * 256 + 2 * 9 * 512 * 512);

  // unshared specs save nothing
  CHECK(total_sharing_savings(make_spec("resnet50", false)) == 0);
}

TEST_CASE("savings identity holds for every catalog entry") {
  for (const auto& e : catalog()) {
    CAPTURE(e.name);
    const auto unshared = count_parameters(make_spec(e.name, false));
    const auto shared_spec = make_spec(e.name, true);
    CHECK(unshared - count_parameters(shared_spec) == total_sharing_savings(shared_spec));
  }
  for (const char* reduced : {"resnet164/w8/b3", "resnet50/w16/b2", "wrn-28-10/w10"}) {
    const auto s = make_spec(reduced, true);
    CHECK(count_parameters(make_spec(reduced, false)) - count_parameters(s) == total_sharing_savings(s));
  }
}

TEST_CASE("hand-built two-layer network count") {
  NetworkSpec spec;
  spec.name = "hand";
  spec.stem = {StemKind::cifar, 4};
  StageSpec st;
  st.num_blocks = 1;
  st.block_kind = BlockKind::basic_pre_wide;
  st.out_channels = 4;
  spec.stages = {st};
  spec.final_bn_relu = true;
  spec.class_count = 5;
  // stem 3*4*9, bn1 4+4, conv1 4*4*9, bn2 4+4, conv2 4*4*9, head bn 4+4, fc 4*5+5
  CHECK(count_parameters(spec) == 108 + 8 + 144 + 8 + 144 + 8 + 25);
  spec.stages[0].share = true;
  spec.stages[0].include_entry_block = true;
  CHECK(count_parameters(spec) == 108 + 8 + 144 + 8 + 144 + 8 + 25);
}

TEST_CASE("single-block toy: sharing changes nothing") {
  CHECK(count_parameters(make_spec("toy-1block", true)) == count_parameters(make_spec("toy-1block", false)));
  CHECK(count_parameters(make_spec("toy", true)) < count_parameters(make_spec("toy", false)));
}

TEST_CASE("architecture structure") {
  const auto r164 = find_entry("resnet164").spec;
  REQUIRE(r164.stages.size() == 3);
  for (std::size_t s = 0; s < 3; ++s) {
    CHECK(r164.stages[s].num_blocks == 18);
    CHECK(r164.stages[s].block_kind == BlockKind::bottleneck_pre);
    CHECK(r164.stages[s].mid_channels == (16u << s));
    CHECK(r164.stages[s].out_channels == (64u << s));
  }
  const auto wrn = find_entry("wrn-28-10").spec;
  CHECK(wrn.stages[0].num_blocks == 4);
  CHECK(wrn.stages[2].out_channels == 640);
  CHECK(wrn.stages[0].dropout_rate > 0);
  CHECK(find_entry("wrn-40-4").spec.stages[0].dropout_rate == 0);
  CHECK(wrn.class_count == 100);

  const std::size_t blocks152[] = {3, 8, 36, 3};
  const auto r152 = find_entry("resnet152").spec;
  for (std::size_t s = 0; s < 4; ++s) {
    CHECK(r152.stages[s].num_blocks == blocks152[s]);
    CHECK(r152.stages[s].out_channels == 4 * r152.stages[s].mid_channels);
  }
  CHECK(find_entry("resnet34").spec.stages[1].block_kind == BlockKind::basic_post);
  CHECK(find_entry("resnet34").spec.stages[1].include_entry_block);
  CHECK_FALSE(find_entry("resnet50").spec.stages[1].include_entry_block);
}

TEST_CASE("shared slot binding audit") {
  for (const auto& e : catalog()) {
    CAPTURE(e.name);
    const auto plan = plan_network(make_spec(e.name, true));
    for (std::size_t s = 0; s < plan.spec.stages.size(); ++s) {
      const auto& st = plan.spec.stages[s];
      const std::size_t expected = st.include_entry_block ? st.num_blocks : st.num_blocks - 1;
      if (expected < 2) {
        // nothing to merge; a slot with one binding would be a private kernel
        if (plan.stage_shared[s]) CHECK(plan.layout.binding_count(*plan.stage_shared[s]) == expected);
        continue;
      }
      REQUIRE(plan.stage_shared[s].has_value());
      CHECK(plan.layout.binding_count(*plan.stage_shared[s]) == expected);
      CHECK(plan.layout.slot(*plan.stage_shared[s]).name == "stage" + std::to_string(s + 1) + ".shared3x3");
    }
    const auto unshared = plan_network(make_spec(e.name, false));
    for (std::size_t i = 0; i < unshared.layout.slots().size(); ++i) {
      CHECK(unshared.layout.binding_count(ParameterId{static_cast<std::uint32_t>(i)}) == 1);
    }
    CHECK(count_parameters(plan.layout) == count_parameters(plan.spec));
  }
}

TEST_CASE("convolution counts") {
  const auto r164 = count_distinct_convs(make_spec("resnet164", false));
  CHECK(r164.block == 162);
  CHECK(r164.stem == 1);
  CHECK(r164.nominal_depth == 164);

  const auto toy = count_distinct_convs(make_spec("toy-1stage", false));
  CHECK(toy.block == 4);

  for (const auto& r : table) {
    CAPTURE(r.name);
    const auto c = count_distinct_convs(make_spec(r.name, true));
    CHECK(c.nominal_depth == r.convs);
    if (std::string_view(r.name) == "resnet34") {
      // 34 minus one merged kernel per extra block: 2 + 3 + 5 + 2 = 12.
      CHECK(c.all_share_depth == 22);
    } else {
      CHECK(c.all_share_depth == r.convs_shared);
    }
  }
  const auto r152 = count_distinct_convs(make_spec("resnet152", true));
  CHECK(r152.all_share_depth == 106);
  CHECK(r152.policy_depth <= r152.nominal_depth);
}

TEST_CASE("architecture listing") {
  const auto rows = list_architectures();
  REQUIRE(rows.size() == 7);
  for (std::size_t i = 0; i < 7; ++i) {
    CHECK(rows[i].name == table[i].name);
    CHECK(rows[i].params_unshared == count_parameters(make_spec(table[i].name, false)));
    CHECK(rows[i].params_shared == count_parameters(make_spec(table[i].name, true)));
  }
  const auto cifar = list_architectures(DatasetFamily::cifar10);
  REQUIRE(cifar.size() == 2);
  CHECK(cifar[0].name == "resnet164");
  CHECK(cifar[1].name == "wrn-40-4");
  CHECK(list_architectures(DatasetFamily::cifar100).size() == 1);
  CHECK(list_architectures(DatasetFamily::imagenet).size() == 4);
}

TEST_CASE("unknown names list the catalog") {
  try {
    find_entry("resnet18");
    FAIL("expected an error");
  } catch (const Error& e) {
    const std::string what = e.what();
    CHECK(what.find("resnet18") != std::string::npos);
    CHECK(what.find("resnet152") != std::string::npos);
    CHECK(what.find("toy") != std::string::npos);
  }
}

TEST_CASE("architecture references") {
  const auto ref = ArchitectureRef::parse("resnet164/w8/b3");
  CHECK(ref.base == "resnet164");
  CHECK(ref.width_divisor == 8);
  CHECK(ref.max_blocks == 3);
  CHECK(ref.to_string() == "resnet164/w8/b3");
  CHECK(ArchitectureRef::parse("toy").to_string() == "toy");
  CHECK_THROWS_AS(ArchitectureRef::parse("toy/x3"), Error);
  CHECK_THROWS_AS(ArchitectureRef::parse("toy/w0"), Error);
  CHECK_THROWS_AS(ArchitectureRef::parse("toy/w"), Error);
  CHECK_THROWS_AS(ArchitectureRef::parse("nope/w2"), Error);

  const auto spec = make_spec("resnet164/w8/b3", true, 10);
  CHECK(spec.stages[0].num_blocks == 3);
  CHECK(spec.stages[0].mid_channels == 2);
  CHECK(spec.stages[2].out_channels == 32);
  CHECK(spec.stem.out_channels == 2);
  CHECK(spec.class_count == 10);
  CHECK(spec.stages[0].share);
  CHECK_FALSE(make_spec("resnet164/w8/b3", false).stages[0].share);
  // widths never drop below two channels
  CHECK(make_spec("resnet50/w256", false).stages[0].mid_channels == 2);
}

TEST_CASE("planned names") {
  const auto plan = plan_network(make_spec("toy", true));
  CHECK(plan.layout.find("stem.conv").has_value());
  CHECK(plan.layout.find("stage1.block1.conv1").has_value());
  CHECK_FALSE(plan.layout.find("stage1.block1.conv2").has_value());
  CHECK(plan.layout.find("stage2.shared3x3").has_value());
  CHECK(plan.layout.find("head.fc.weight").has_value());
  CHECK(plan.layout.find_buffer("stage1.block2.bn1.running_mean").has_value());
  CHECK(plan.network.blocks.size() == 4);
  CHECK(plan.network.block_stage == std::vector<std::size_t>{0, 0, 1, 1});

  NetworkSpec empty;
  empty.name = "empty";
  CHECK_THROWS_AS(validate(empty), Error);
}
