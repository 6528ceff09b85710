#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "shareconv/blocks.hpp"

namespace shareconv {

enum class DatasetFamily { cifar10, cifar100, imagenet, synthetic };

std::string_view to_string(DatasetFamily family);
DatasetFamily parse_dataset_family(std::string_view name);

enum class StemKind {
  cifar,     // 3x3 conv
  imagenet,  // 7x7/2 conv, bn, relu, 3x3/2 max pool
};

struct StemSpec {
  StemKind kind = StemKind::cifar;
  std::size_t out_channels = 16;
};

/// A run of blocks between two spatial reductions; the unit of sharing.
struct StageSpec {
  std::size_t num_blocks = 1;
  BlockKind block_kind = BlockKind::basic_pre_wide;
  std::size_t out_channels = 0;
  std::size_t mid_channels = 0;
  std::size_t entry_stride = 1;
  bool share = false;
  bool include_entry_block = false;  // whether block 1 binds the shared kernel
  double dropout_rate = 0.0;
};

/// How the architecture's name counts its depth. ResNets count the stem,
/// every block convolution and the classifier; wide ResNets count the stem,
/// every block convolution and the projection shortcuts.
enum class DepthConvention { classifier_counted, projections_counted };

struct NetworkSpec {
  std::string name;
  DatasetFamily dataset = DatasetFamily::synthetic;
  StemSpec stem;
  std::vector<StageSpec> stages;
  bool final_bn_relu = false;  // pre-activation networks normalize before pooling
  std::size_t class_count = 10;
  std::size_t input_channels = 3;
  DepthConvention depth_convention = DepthConvention::classifier_counted;
};

/// Throws if the stage list is empty or malformed.
void validate(const NetworkSpec& spec);

/// Published reference figures: millions of parameters, reduction, conv depth.
struct PaperFigures {
  double params_original_m = 0;
  double params_shared_m = 0;
  double decrease_percent = 0;
  std::size_t convs_original = 0;
  std::size_t convs_shared = 0;
};

struct CatalogEntry {
  std::string name;
  DatasetFamily dataset = DatasetFamily::synthetic;
  std::optional<PaperFigures> reference;  // empty for the toy entries
  NetworkSpec spec;                       // unshared, default class count
  std::size_t input_extent = 32;          // native square input size
};

/// The seven reference architectures followed by the toy networks.
const std::vector<CatalogEntry>& catalog();
const CatalogEntry& find_entry(std::string_view name);

/// Architecture identity string: `<name>[/w<divisor>][/b<max blocks>]`.
/// `resnet164/w8/b3` is resnet164 with all widths divided by 8 and at most
/// three blocks per stage. Reduced widths are floored at two channels.
struct ArchitectureRef {
  std::string base;
  std::size_t width_divisor = 1;
  std::size_t max_blocks = 0;  // 0 keeps the catalog block counts

  std::string to_string() const;
  static ArchitectureRef parse(std::string_view text);
};

NetworkSpec make_spec(const ArchitectureRef& ref, bool shared, std::optional<std::size_t> class_count = {});
NetworkSpec make_spec(std::string_view architecture, bool shared,
                      std::optional<std::size_t> class_count = {});

/// The planned network: every layer instance with its bindings.
struct Network {
  std::vector<Op> stem;
  std::vector<ResidualBlock> blocks;
  std::vector<std::size_t> block_stage;  // stage index of each block
  std::vector<Op> head;
};

struct NetworkPlan {
  NetworkSpec spec;
  ParameterLayout layout;
  Network network;
  std::vector<std::optional<ParameterId>> stage_shared;  // shared slot per stage
};

NetworkPlan plan_network(const NetworkSpec& spec);

/// Elements over distinct slots: conv kernels, batchnorm scale/shift, fully
/// connected weight and bias.
std::size_t count_parameters(const ParameterLayout& layout);
std::size_t count_parameters(const NetworkSpec& spec);

/// Closed form: (participating - 1) * 9 * c^2, where c is the designated
/// convolution width and participating is num_blocks or num_blocks - 1.
std::size_t participating_blocks(const StageSpec& stage);
std::size_t sharing_savings(const StageSpec& stage);
std::size_t total_sharing_savings(const NetworkSpec& spec);

struct ConvCounts {
  std::size_t stem = 0;
  std::size_t block = 0;       // block convolution instances
  std::size_t projection = 0;
  std::size_t classifier = 1;
  /// Distinct convolution slots (stem, projections and block kernels) under
  /// the spec's sharing policy.
  std::size_t distinct_slots = 0;
  std::size_t nominal_depth = 0;    // unshared depth under the family convention
  std::size_t policy_depth = 0;     // nominal depth minus the policy's merges
  std::size_t all_share_depth = 0;  // nominal depth if every block of a stage shared
};

ConvCounts count_distinct_convs(const NetworkSpec& spec);

struct ArchitectureRow {
  std::string name;
  DatasetFamily dataset = DatasetFamily::synthetic;
  std::size_t depth = 0;
  std::size_t params_unshared = 0;
  std::size_t params_shared = 0;
  double reduction_percent = 0;
  std::size_t convs_unshared = 0;
  std::size_t convs_shared_all = 0;
  std::optional<PaperFigures> reference;
};

/// One row per reference architecture, optionally restricted to a dataset.
std::vector<ArchitectureRow> list_architectures(std::optional<DatasetFamily> filter = {});

}  // namespace shareconv
