#pragma once

#include <string_view>
#include <vector>

#include "shareconv/params.hpp"

namespace shareconv {

/// Multiply the learning rate by `factor` from epoch `epoch` on.
struct LrDrop {
  std::size_t epoch = 0;
  double factor = 1.0;
  friend bool operator==(const LrDrop&, const LrDrop&) = default;
};

/// Parses "E:F", e.g. "60:0.2".
LrDrop parse_lr_drop(std::string_view text);

struct OptimizerConfig {
  double alpha = 0.1;         // learning rate
  double gamma = 0.9;         // momentum
  double weight_decay = 0.0;  // applied to slots with decay_enabled
  std::vector<LrDrop> schedule;

  /// Throws unless alpha >= 0, gamma in [0, 1), weight decay >= 0, schedule
  /// epochs strictly increasing and factors in (0, 1].
  void validate() const;
};

/// alpha 0.1, momentum 0.9, decay 5e-4, x0.2 at epochs 60, 120 and 160.
OptimizerConfig cifar_defaults();

/// Base rate times every factor whose epoch is <= `epoch`.
double lr_at(const OptimizerConfig& config, std::size_t epoch);

/// For every slot: v = gamma * v + lr * (g + lambda * W); W = W - v.
///
/// Shared and private slots follow the same rule; a shared slot's gradient
/// already holds the sum of its bindings' contributions. Every gradient is
/// checked before anything is written, so a NaN or Inf aborts the whole step
/// with NonFiniteGradient.
template <typename T>
void step(ParameterRegistry<T>& params, const OptimizerConfig& config, std::size_t epoch);

}  // namespace shareconv
