#include "shareconv/catalog.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace shareconv {

std::string_view to_string(DatasetFamily family) {
  switch (family) {
    case DatasetFamily::cifar10: return "cifar10";
    case DatasetFamily::cifar100: return "cifar100";
    case DatasetFamily::imagenet: return "imagenet";
    case DatasetFamily::synthetic: return "synthetic";
  }
  return "unknown";
}

DatasetFamily parse_dataset_family(std::string_view name) {
  for (auto f : {DatasetFamily::cifar10, DatasetFamily::cifar100, DatasetFamily::imagenet,
                 DatasetFamily::synthetic}) {
    if (to_string(f) == name) return f;
  }
  throw Error(fmt::format("unknown dataset '{}' (expected cifar10, cifar100, imagenet or synthetic)", name));
}

void validate(const NetworkSpec& spec) {
  if (spec.stages.empty()) throw Error(fmt::format("{}: network needs at least one stage", spec.name));
  if (spec.class_count == 0) throw Error(fmt::format("{}: class count must be positive", spec.name));
  if (spec.stem.out_channels == 0 || spec.input_channels == 0) {
    throw Error(fmt::format("{}: stem channel counts must be positive", spec.name));
  }
  for (std::size_t s = 0; s < spec.stages.size(); ++s) {
    const auto& st = spec.stages[s];
    if (st.num_blocks == 0 || st.out_channels == 0) {
      throw Error(fmt::format("{}: stage {} needs blocks and channels", spec.name, s + 1));
    }
    if (is_bottleneck(st.block_kind) && st.mid_channels == 0) {
      throw Error(fmt::format("{}: stage {} is a bottleneck stage without mid channels", spec.name, s + 1));
    }
    if (st.entry_stride != 1 && st.entry_stride != 2) {
      throw Error(fmt::format("{}: stage {} entry stride must be 1 or 2", spec.name, s + 1));
    }
  }
}

namespace {

StageSpec stage(std::size_t n, BlockKind kind, std::size_t out, std::size_t mid, std::size_t stride,
                bool include_entry, double dropout = 0.0) {
  StageSpec s;
  s.num_blocks = n;
  s.block_kind = kind;
  s.out_channels = out;
  s.mid_channels = mid;
  s.entry_stride = stride;
  s.include_entry_block = include_entry;
  s.dropout_rate = dropout;
  return s;
}

NetworkSpec cifar_net(std::string name, DatasetFamily dataset, std::size_t classes, std::vector<StageSpec> stages,
                      std::size_t stem_width, DepthConvention convention) {
  NetworkSpec n;
  n.name = std::move(name);
  n.dataset = dataset;
  n.stem = {StemKind::cifar, stem_width};
  n.stages = std::move(stages);
  n.final_bn_relu = true;
  n.class_count = classes;
  n.depth_convention = convention;
  return n;
}

NetworkSpec imagenet_net(std::string name, BlockKind kind, std::vector<std::size_t> blocks,
                         bool include_entry) {
  const bool bottleneck = is_bottleneck(kind);
  const std::size_t mids[] = {64, 128, 256, 512};
  std::vector<StageSpec> stages;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t out = bottleneck ? 4 * mids[s] : mids[s];
    stages.push_back(stage(blocks[s], kind, out, bottleneck ? mids[s] : 0, s == 0 ? 1 : 2, include_entry));
  }
  NetworkSpec n;
  n.name = std::move(name);
  n.dataset = DatasetFamily::imagenet;
  n.stem = {StemKind::imagenet, 64};
  n.stages = std::move(stages);
  n.class_count = 1000;
  n.depth_convention = DepthConvention::classifier_counted;
  return n;
}

std::vector<CatalogEntry> make_catalog() {
  using B = BlockKind;
  using D = DatasetFamily;
  const auto classifier = DepthConvention::classifier_counted;
  const auto projections = DepthConvention::projections_counted;
  std::vector<CatalogEntry> c;

  c.push_back({"resnet164", D::cifar10, PaperFigures{1.70, 0.93, 45, 164, 113},
               cifar_net("resnet164", D::cifar10, 10,
                         {stage(18, B::bottleneck_pre, 64, 16, 1, false),
                          stage(18, B::bottleneck_pre, 128, 32, 2, false),
                          stage(18, B::bottleneck_pre, 256, 64, 2, false)},
                         16, classifier),
               32});
  c.push_back({"wrn-40-4", D::cifar10, PaperFigures{8.95, 5.85, 35, 40, 25},
               cifar_net("wrn-40-4", D::cifar10, 10,
                         {stage(6, B::basic_pre_wide, 64, 0, 1, false),
                          stage(6, B::basic_pre_wide, 128, 0, 2, false),
                          stage(6, B::basic_pre_wide, 256, 0, 2, false)},
                         16, projections),
               32});
  c.push_back({"wrn-28-10", D::cifar100, PaperFigures{36.54, 26.86, 26, 28, 19},
               cifar_net("wrn-28-10", D::cifar100, 100,
                         {stage(4, B::basic_pre_wide, 160, 0, 1, false, 0.3),
                          stage(4, B::basic_pre_wide, 320, 0, 2, false, 0.3),
                          stage(4, B::basic_pre_wide, 640, 0, 2, false, 0.3)},
                         16, projections),
               32});
  c.push_back({"resnet34", D::imagenet, PaperFigures{21.8, 13.6, 37, 34, 20},
               imagenet_net("resnet34", B::basic_post, {3, 4, 6, 3}, true), 224});
  c.push_back({"resnet50", D::imagenet, PaperFigures{25.6, 20.5, 20, 50, 38},
               imagenet_net("resnet50", B::bottleneck_post, {3, 4, 6, 3}, false), 224});
  c.push_back({"resnet101", D::imagenet, PaperFigures{44.5, 29.4, 33, 101, 72},
               imagenet_net("resnet101", B::bottleneck_post, {3, 4, 23, 3}, false), 224});
  c.push_back({"resnet152", D::imagenet, PaperFigures{60.2, 36.8, 39, 152, 106},
               imagenet_net("resnet152", B::bottleneck_post, {3, 8, 36, 3}, false), 224});

  // Small networks for gradient checks and desk-scale training. Every block of
  // a stage shares, so two-block stages already exercise accumulation.
  c.push_back({"toy", D::synthetic, std::nullopt,
               cifar_net("toy", D::synthetic, 4,
                         {stage(2, B::basic_pre_wide, 4, 0, 1, true),
                          stage(2, B::basic_pre_wide, 8, 0, 2, true)},
                         4, projections),
               8});
  c.push_back({"toy-wide", D::synthetic, std::nullopt,
               cifar_net("toy-wide", D::synthetic, 4,
                         {stage(2, B::basic_pre_wide, 8, 0, 1, true),
                          stage(2, B::basic_pre_wide, 16, 0, 2, true)},
                         8, projections),
               16});
  c.push_back({"toy-1stage", D::synthetic, std::nullopt,
               cifar_net("toy-1stage", D::synthetic, 4, {stage(2, B::basic_pre_wide, 4, 0, 1, true)}, 4,
                         projections),
               8});
  c.push_back({"toy-1block", D::synthetic, std::nullopt,
               cifar_net("toy-1block", D::synthetic, 4, {stage(1, B::basic_pre_wide, 4, 0, 1, true)}, 4,
                         projections),
               8});
  return c;
}

std::size_t parse_count(std::string_view text, std::string_view whole) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size() || v == 0) {
    throw Error(fmt::format("malformed architecture '{}'", whole));
  }
  return v;
}

}  // namespace

const std::vector<CatalogEntry>& catalog() {
  static const std::vector<CatalogEntry> entries = make_catalog();
  return entries;
}

const CatalogEntry& find_entry(std::string_view name) {
  for (const auto& e : catalog()) {
    if (e.name == name) return e;
  }
  std::vector<std::string> names;
  for (const auto& e : catalog()) names.push_back(e.name);
  throw Error(fmt::format("unknown architecture '{}'; available: {}", name, fmt::join(names, ", ")));
}

std::string ArchitectureRef::to_string() const {
  std::string s = base;
  if (width_divisor > 1) s += fmt::format("/w{}", width_divisor);
  if (max_blocks > 0) s += fmt::format("/b{}", max_blocks);
  return s;
}

ArchitectureRef ArchitectureRef::parse(std::string_view text) {
  ArchitectureRef ref;
  std::size_t pos = text.find('/');
  ref.base = std::string(text.substr(0, pos));
  while (pos != std::string_view::npos) {
    const std::size_t next = text.find('/', pos + 1);
    const std::string_view part = text.substr(pos + 1, next == std::string_view::npos ? next : next - pos - 1);
    if (part.size() < 2) throw Error(fmt::format("malformed architecture '{}'", text));
    if (part[0] == 'w') {
      ref.width_divisor = parse_count(part.substr(1), text);
    } else if (part[0] == 'b') {
      ref.max_blocks = parse_count(part.substr(1), text);
    } else {
      throw Error(fmt::format("malformed architecture '{}'", text));
    }
    pos = next;
  }
  find_entry(ref.base);
  return ref;
}

NetworkSpec make_spec(const ArchitectureRef& ref, bool shared, std::optional<std::size_t> class_count) {
  NetworkSpec spec = find_entry(ref.base).spec;
  spec.name = ref.to_string();
  // Never below two channels: a single-channel conv feeding batchnorm has a
  // scale-invariant output and a vanishing gradient.
  const auto reduce = [&](std::size_t w) { return std::max(std::min<std::size_t>(w, 2), w / ref.width_divisor); };
  spec.stem.out_channels = reduce(spec.stem.out_channels);
  for (auto& st : spec.stages) {
    st.out_channels = reduce(st.out_channels);
    st.mid_channels = reduce(st.mid_channels);
    if (ref.max_blocks > 0) st.num_blocks = std::min(st.num_blocks, ref.max_blocks);
    st.share = shared;
  }
  if (class_count) spec.class_count = *class_count;
  validate(spec);
  return spec;
}

NetworkSpec make_spec(std::string_view architecture, bool shared, std::optional<std::size_t> class_count) {
  return make_spec(ArchitectureRef::parse(architecture), shared, class_count);
}

NetworkPlan plan_network(const NetworkSpec& spec) {
  validate(spec);
  NetworkPlan plan{spec, {}, {}, {}};
  auto& layout = plan.layout;
  auto& net = plan.network;

  const auto conv = [&](const std::string& instance, std::size_t in, std::size_t out, std::size_t k,
                        std::size_t stride) { return declare_conv(layout, instance, in, out, k, stride); };
  const auto batchnorm = [&](const std::string& instance, std::size_t channels) {
    return declare_batchnorm(layout, instance, channels);
  };

  std::size_t channels = spec.stem.out_channels;
  if (spec.stem.kind == StemKind::cifar) {
    net.stem.push_back(conv("stem.conv", spec.input_channels, channels, 3, 1));
  } else {
    net.stem.push_back(conv("stem.conv", spec.input_channels, channels, 7, 2));
    net.stem.push_back(batchnorm("stem.bn", channels));
    net.stem.push_back(ReluOp{});
    net.stem.push_back(MaxPoolOp{ConvGeometry::square(3, 2, 1)});
  }

  for (std::size_t s = 0; s < spec.stages.size(); ++s) {
    const StageSpec& st = spec.stages[s];
    std::optional<ParameterId> shared;
    for (std::size_t b = 0; b < st.num_blocks; ++b) {
      BlockConfig cfg;
      cfg.kind = st.block_kind;
      cfg.in_channels = channels;
      cfg.out_channels = st.out_channels;
      cfg.mid_channels = st.mid_channels;
      cfg.stride = b == 0 ? st.entry_stride : 1;
      cfg.dropout_rate = st.dropout_rate;
      const bool participates = st.share && (b > 0 || st.include_entry_block);
      if (participates) {
        if (!shared) {
          shared = layout.declare(fmt::format("stage{}.shared3x3", s + 1), designated_kernel_shape(cfg),
                                  InitSpec::he_normal(), true);
        }
        cfg.shared_binding = shared;
      }
      net.blocks.push_back(plan_block(cfg, fmt::format("stage{}.block{}", s + 1, b + 1), layout));
      net.block_stage.push_back(s);
      channels = st.out_channels;
    }
    plan.stage_shared.push_back(shared);
  }

  if (spec.final_bn_relu) {
    net.head.push_back(batchnorm("head.bn", channels));
    net.head.push_back(ReluOp{});
  }
  net.head.push_back(GlobalAvgPoolOp{});
  const double bound = 1.0 / std::sqrt(static_cast<double>(channels));
  const ParameterId weight =
      layout.declare("head.fc.weight", {spec.class_count, channels}, InitSpec::uniform(bound), true);
  const ParameterId bias = layout.declare("head.fc.bias", {spec.class_count}, InitSpec::uniform(bound), false);
  layout.bind("head.fc", "weight", weight, {spec.class_count, channels});
  layout.bind("head.fc", "bias", bias, {spec.class_count});
  net.head.push_back(LinearOp{"head.fc", weight, bias, channels, spec.class_count});
  return plan;
}

std::size_t count_parameters(const ParameterLayout& layout) { return layout.parameter_count(); }

std::size_t count_parameters(const NetworkSpec& spec) { return plan_network(spec).layout.parameter_count(); }

std::size_t participating_blocks(const StageSpec& stage) {
  if (!stage.share) return 0;
  return stage.include_entry_block ? stage.num_blocks : stage.num_blocks - 1;
}

std::size_t sharing_savings(const StageSpec& stage) {
  const std::size_t p = participating_blocks(stage);
  if (p < 2) return 0;
  const std::size_t c = is_bottleneck(stage.block_kind) ? stage.mid_channels : stage.out_channels;
  return (p - 1) * 9 * c * c;
}

std::size_t total_sharing_savings(const NetworkSpec& spec) {
  std::size_t total = 0;
  for (const auto& st : spec.stages) total += sharing_savings(st);
  return total;
}

ConvCounts count_distinct_convs(const NetworkSpec& spec) {
  const NetworkPlan plan = plan_network(spec);
  ConvCounts c;
  const auto convs_in = [](const std::vector<Op>& ops) {
    return static_cast<std::size_t>(
        std::count_if(ops.begin(), ops.end(), [](const Op& op) { return std::holds_alternative<ConvOp>(op); }));
  };
  c.stem = convs_in(plan.network.stem);
  for (const auto& b : plan.network.blocks) {
    c.block += convs_in(b.branch);
    c.projection += convs_in(b.projection);
  }
  for (const auto& s : plan.layout.slots()) c.distinct_slots += s.shape.size() == 4 ? 1 : 0;
  c.nominal_depth = c.stem + c.block +
                    (spec.depth_convention == DepthConvention::classifier_counted ? c.classifier : c.projection);
  std::size_t policy_merges = 0;
  std::size_t all_merges = 0;
  for (const auto& st : spec.stages) {
    const std::size_t p = participating_blocks(st);
    policy_merges += p > 1 ? p - 1 : 0;
    all_merges += st.num_blocks - 1;
  }
  c.policy_depth = c.nominal_depth - policy_merges;
  c.all_share_depth = c.nominal_depth - all_merges;
  return c;
}

std::vector<ArchitectureRow> list_architectures(std::optional<DatasetFamily> filter) {
  std::vector<ArchitectureRow> rows;
  for (const auto& e : catalog()) {
    if (!e.reference) continue;
    if (filter && e.dataset != *filter) continue;
    ArchitectureRow r;
    r.name = e.name;
    r.dataset = e.dataset;
    const NetworkSpec unshared = make_spec(e.name, false);
    const NetworkSpec shared = make_spec(e.name, true);
    r.params_unshared = count_parameters(unshared);
    r.params_shared = count_parameters(shared);
    r.reduction_percent =
        100.0 * static_cast<double>(r.params_unshared - r.params_shared) / static_cast<double>(r.params_unshared);
    const ConvCounts cc = count_distinct_convs(shared);
    r.depth = cc.nominal_depth;
    r.convs_unshared = cc.nominal_depth;
    r.convs_shared_all = cc.all_share_depth;
    r.reference = e.reference;
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace shareconv
