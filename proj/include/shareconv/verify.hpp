#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "shareconv/catalog.hpp"
#include "shareconv/model.hpp"
#include "shareconv/optimizer.hpp"

namespace shareconv {

/// A catalog network cut down until every channel width is at most
/// `max_width` and every stage has at most `blocks` blocks.
ArchitectureRef reduced_architecture(std::string_view architecture, std::size_t max_width, std::size_t blocks);

/// Smallest per-stage block count that gives every shared stage at least two
/// blocks bound to its shared kernel.
std::size_t blocks_for_two_bindings(std::string_view architecture);

/// Input side length for reduced checks: the native extent clipped so that
/// the maps entering the first stage are at most `cap` wide.
std::size_t reduced_input_extent(std::string_view architecture, std::size_t cap);

struct GradcheckOptions {
  std::string architecture = "toy";
  bool shared = true;
  std::uint64_t seed = 0;
  double epsilon = 1e-4;
  double tolerance = 1e-5;
  std::size_t batch = 0;  // 0: 2, or 16 behind the downsampling ImageNet stem
  std::size_t max_width = 8;
  std::size_t max_extent = 8;
  std::size_t blocks = 2;
  /// Times a kink-straddling probe may be shrunk tenfold.
  std::size_t max_refinements = 3;
  /// Runs after the analytic backward, before comparison. Test hook for
  /// fault injection.
  std::function<void(ParameterRegistry<double>&)> corrupt;
};

struct SlotError {
  std::string name;
  std::size_t bindings = 0;
  std::size_t elements = 0;
  double relative_error = 0;  // max |a - n| / max(max |a|, max |n|)
  std::size_t refined = 0;     // elements whose probe had to be shrunk
  std::size_t unresolved = 0;  // still straddling a kink at the smallest probe
};

struct GradcheckReport {
  std::string architecture;  // the reduced identity that was checked
  bool shared = true;
  std::vector<SlotError> slots;
  double max_error = 0;
  std::string worst_slot;
  std::size_t refined = 0;
  std::size_t unresolved = 0;
  bool passed = false;
};

GradcheckReport gradcheck(const GradcheckOptions& options);
/// Same check on an explicit spec with square inputs of side `extent`; the
/// architecture, shared and size fields of `options` are ignored.
GradcheckReport gradcheck(const NetworkSpec& spec, std::size_t extent, const GradcheckOptions& options);

struct EquivOptions {
  std::string architecture = "toy";
  std::uint64_t seed = 0;
  std::size_t width_divisor = 8;
  std::size_t blocks = 0;  // 0: enough for two bindings per shared stage
  std::size_t batch = 4;
  std::size_t max_extent = 0;  // 0: 8 for CIFAR-sized nets, 16 otherwise
  double tolerance = 1e-6;
  OptimizerConfig optimizer{0.1, 0.9, 0.0, {}};
};

struct EquivReport {
  std::string architecture;
  double forward_error = 0;
  double gradient_error = 0;
  std::string worst_gradient_slot;
  double post_step_difference = 0;
  std::size_t max_bindings = 0;  // most bindings on any shared slot
  bool forward_ok = false;
  bool gradient_ok = false;
  /// With two or more bindings the outputs must differ after a step; with a
  /// single binding they must stay equal.
  bool divergence_ok = false;

  bool passed() const { return forward_ok && gradient_ok && divergence_ok; }
};

/// Builds the shared network and an unshared clone whose kernels are copied
/// from it binding by binding, then compares outputs, gradients and
/// post-step outputs.
EquivReport equiv(const EquivOptions& options);

/// Copies `from` into `to` for every binding key both layouts share, plus
/// buffers by name. Used to build the tied clone.
template <typename T>
void copy_by_bindings(const ParameterRegistry<T>& from, ParameterRegistry<T>& to);

/// max |a - b| / max(max |a|, max |b|); 0 when both are zero.
template <typename T>
double relative_difference(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace shareconv
