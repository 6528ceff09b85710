#include "shareconv/params.hpp"

#include <cmath>

#include <fmt/format.h>

#include "shareconv/hash.hpp"

namespace shareconv {

ParameterId ParameterLayout::declare(std::string name, Shape shape, InitSpec init, bool decay_enabled) {
  if (slot_index_.contains(name)) throw Error(fmt::format("duplicate parameter name '{}'", name));
  const auto index = static_cast<std::uint32_t>(slots_.size());
  slot_index_.emplace(name, index);
  slots_.push_back({std::move(name), std::move(shape), init, decay_enabled});
  return ParameterId{index};
}

BufferId ParameterLayout::declare_buffer(std::string name, Shape shape, double fill) {
  if (buffer_index_.contains(name)) throw Error(fmt::format("duplicate buffer name '{}'", name));
  const auto index = static_cast<std::uint32_t>(buffers_.size());
  buffer_index_.emplace(name, index);
  buffers_.push_back({std::move(name), std::move(shape), fill});
  return BufferId{index};
}

void ParameterLayout::bind(std::string instance, std::string role, ParameterId id, const Shape& expected) {
  if (id.index >= slots_.size()) throw Error(fmt::format("unknown parameter id {}", id.index));
  const SlotDecl& decl = slots_[id.index];
  if (decl.shape != expected) {
    throw ShapeError(fmt::format("cannot bind {}.{} (expects {}) to '{}' of shape {}", instance, role,
                                 format_shape(expected), decl.name, format_shape(decl.shape)));
  }
  BindingKey key{std::move(instance), std::move(role)};
  if (bindings_.contains(key)) {
    throw Error(fmt::format("{}.{} is already bound", key.instance, key.role));
  }
  bindings_.emplace(std::move(key), id);
}

std::optional<ParameterId> ParameterLayout::find(std::string_view name) const {
  const auto it = slot_index_.find(std::string(name));
  if (it == slot_index_.end()) return std::nullopt;
  return ParameterId{it->second};
}

std::optional<BufferId> ParameterLayout::find_buffer(std::string_view name) const {
  const auto it = buffer_index_.find(std::string(name));
  if (it == buffer_index_.end()) return std::nullopt;
  return BufferId{it->second};
}

std::optional<ParameterId> ParameterLayout::binding(const BindingKey& key) const {
  const auto it = bindings_.find(key);
  if (it == bindings_.end()) return std::nullopt;
  return it->second;
}

std::size_t ParameterLayout::parameter_count() const {
  std::size_t total = 0;
  for (const auto& s : slots_) total += shape_size(s.shape);
  return total;
}

std::size_t ParameterLayout::binding_count(ParameterId id) const {
  std::size_t n = 0;
  for (const auto& [key, bound] : bindings_) n += bound == id ? 1 : 0;
  return n;
}

std::vector<BindingKey> ParameterLayout::bound_instances(ParameterId id) const {
  std::vector<BindingKey> out;
  for (const auto& [key, bound] : bindings_) {
    if (bound == id) out.push_back(key);
  }
  return out;
}

template <typename T>
ParameterRegistry<T>::ParameterRegistry(const ParameterLayout& layout, Rng& rng) : layout_(layout) {
  slots_.reserve(layout_.slots().size());
  for (const auto& decl : layout_.slots()) materialize(decl, rng);
  for (const auto& b : layout_.buffers()) buffers_.emplace_back(b.shape, static_cast<T>(b.fill));
}

template <typename T>
void ParameterRegistry<T>::materialize(const SlotDecl& decl, Rng& rng) {
  Tensor<T> value(decl.shape);
  switch (decl.init.kind) {
    case InitKind::constant:
      value.fill(static_cast<T>(decl.init.value));
      break;
    case InitKind::uniform: {
      std::uniform_real_distribution<double> dist(-decl.init.value, decl.init.value);
      for (T& v : value.data()) v = static_cast<T>(dist(rng));
      break;
    }
    case InitKind::he_normal_fan_out: {
      if (decl.shape.size() != 4) {
        throw ShapeError(fmt::format("fan-out init of '{}' needs an O x I x Kh x Kw shape, got {}",
                                     decl.name, format_shape(decl.shape)));
      }
      const double fan_out = static_cast<double>(decl.shape[0] * decl.shape[2] * decl.shape[3]);
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_out));
      for (T& v : value.data()) v = static_cast<T>(dist(rng));
      break;
    }
  }
  const auto id = ParameterId{static_cast<std::uint32_t>(slots_.size())};
  slots_.push_back({id, decl.name, value, Tensor<T>(decl.shape), Tensor<T>(decl.shape), decl.decay_enabled});
  locks_.push_back(std::make_unique<std::mutex>());
}

template <typename T>
ParameterId ParameterRegistry<T>::register_parameter(std::string name, Shape shape, InitSpec init,
                                                     Rng& rng, bool decay_enabled) {
  const ParameterId id = layout_.declare(std::move(name), std::move(shape), init, decay_enabled);
  materialize(layout_.slot(id), rng);
  return id;
}

template <typename T>
BufferId ParameterRegistry<T>::register_buffer(std::string name, Shape shape, double fill) {
  const BufferId id = layout_.declare_buffer(std::move(name), shape, fill);
  buffers_.emplace_back(std::move(shape), static_cast<T>(fill));
  return id;
}

template <typename T>
void ParameterRegistry<T>::accumulate_grad(ParameterId id, const Tensor<T>& contribution) {
  auto& s = slots_.at(id.index);
  std::lock_guard lock(*locks_[id.index]);
  require_same_shape(s.grad.extents(), contribution.extents(),
                     fmt::format("accumulate_grad '{}'", s.name).c_str());
  s.grad += contribution;
}

template <typename T>
void ParameterRegistry<T>::zero_grads() {
  for (auto& s : slots_) s.grad.fill(T{0});
}

template <typename T>
typename ParameterRegistry<T>::Snapshot ParameterRegistry<T>::snapshot() const {
  Snapshot snap;
  snap.values.reserve(slots_.size());
  for (const auto& s : slots_) snap.values.push_back(s.value);
  snap.buffers = buffers_;
  return snap;
}

template <typename T>
void ParameterRegistry<T>::restore(const Snapshot& snap) {
  if (snap.values.size() != slots_.size() || snap.buffers.size() != buffers_.size()) {
    throw Error("snapshot does not match this registry");
  }
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    require_same_shape(slots_[i].value.extents(), snap.values[i].extents(), "restore");
    slots_[i].value = snap.values[i];
  }
  buffers_ = snap.buffers;
}

template <typename T>
std::uint64_t ParameterRegistry<T>::content_hash() const {
  Fnv1a h;
  for (const auto& s : slots_) {
    h.update(s.name);
    h.update(s.value.data());
  }
  for (const auto& b : buffers_) h.update(b.data());
  return h.digest();
}

template class ParameterRegistry<float>;
template class ParameterRegistry<double>;

}  // namespace shareconv
