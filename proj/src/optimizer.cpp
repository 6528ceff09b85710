#include "shareconv/optimizer.hpp"

#include <charconv>
#include <cmath>

#include <fmt/format.h>

namespace shareconv {

LrDrop parse_lr_drop(std::string_view text) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) throw Error(fmt::format("learning-rate drop '{}' is not E:F", text));
  LrDrop d;
  const auto e = text.substr(0, colon);
  const auto [p1, ec1] = std::from_chars(e.data(), e.data() + e.size(), d.epoch);
  if (ec1 != std::errc{} || p1 != e.data() + e.size()) {
    throw Error(fmt::format("learning-rate drop '{}' has a malformed epoch", text));
  }
  const std::string f(text.substr(colon + 1));
  std::size_t used = 0;
  try {
    d.factor = std::stod(f, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != f.size()) throw Error(fmt::format("learning-rate drop '{}' has a malformed factor", text));
  return d;
}

void OptimizerConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw Error(fmt::format("learning rate {} must be >= 0", alpha));
  if (!(gamma >= 0.0 && gamma < 1.0)) throw Error(fmt::format("momentum {} outside [0, 1)", gamma));
  if (!(weight_decay >= 0.0)) throw Error(fmt::format("weight decay {} must be >= 0", weight_decay));
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    if (!(schedule[i].factor > 0.0 && schedule[i].factor <= 1.0)) {
      throw Error(fmt::format("schedule factor {} outside (0, 1]", schedule[i].factor));
    }
    if (i > 0 && schedule[i].epoch <= schedule[i - 1].epoch) {
      throw Error("schedule epochs must be strictly increasing");
    }
  }
}

OptimizerConfig cifar_defaults() {
  return {0.1, 0.9, 5e-4, {{60, 0.2}, {120, 0.2}, {160, 0.2}}};
}

double lr_at(const OptimizerConfig& config, std::size_t epoch) {
  double lr = config.alpha;
  for (const auto& d : config.schedule) {
    if (d.epoch <= epoch) lr *= d.factor;
  }
  return lr;
}

template <typename T>
void step(ParameterRegistry<T>& params, const OptimizerConfig& config, std::size_t epoch) {
  for (const auto& s : params.slots()) {
    for (T g : s.grad.data()) {
      if (!std::isfinite(g)) {
        throw NonFiniteGradient(s.name, fmt::format("non-finite gradient in slot '{}'", s.name));
      }
    }
  }
  const T lr = static_cast<T>(lr_at(config, epoch));
  const T gamma = static_cast<T>(config.gamma);
  for (auto& s : params.slots()) {
    const T decay = s.decay_enabled ? static_cast<T>(config.weight_decay) : T{0};
    T* w = s.value.raw();
    T* v = s.velocity.raw();
    const T* g = s.grad.raw();
    for (std::size_t i = 0; i < s.value.size(); ++i) {
      v[i] = gamma * v[i] + lr * (g[i] + decay * w[i]);
      w[i] -= v[i];
    }
  }
}

template void step(ParameterRegistry<float>&, const OptimizerConfig&, std::size_t);
template void step(ParameterRegistry<double>&, const OptimizerConfig&, std::size_t);

}  // namespace shareconv
