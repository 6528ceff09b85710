#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "shareconv/ops.hpp"
#include "shareconv/tensor.hpp"

// Parameter registry. Layer instances bind to parameter slots many-to-one;
// a slot bound by several instances is a shared weight, and its gradient is
// the sum of every instance's contribution.
namespace shareconv {

struct ParameterId {
  std::uint32_t index = 0;
  friend auto operator<=>(const ParameterId&, const ParameterId&) = default;
};

struct BufferId {
  std::uint32_t index = 0;
  friend auto operator<=>(const BufferId&, const BufferId&) = default;
};

enum class InitKind { he_normal_fan_out, constant, uniform };

struct InitSpec {
  InitKind kind = InitKind::constant;
  double value = 0.0;  // the constant, or the half-width of the uniform range

  /// Normal with std = sqrt(2 / (Kh * Kw * Co)) for an O x I x Kh x Kw kernel.
  static InitSpec he_normal() { return {InitKind::he_normal_fan_out, 0.0}; }
  static InitSpec constant(double v) { return {InitKind::constant, v}; }
  static InitSpec uniform(double bound) { return {InitKind::uniform, bound}; }
};

struct SlotDecl {
  std::string name;
  Shape shape;
  InitSpec init;
  bool decay_enabled = false;
};

/// Non-trainable state such as batchnorm running statistics.
struct BufferDecl {
  std::string name;
  Shape shape;
  double fill = 0.0;
};

/// A (layer instance, parameter role) pair, e.g. ("stage1.block2.bn1", "scale").
struct BindingKey {
  std::string instance;
  std::string role;
  friend auto operator<=>(const BindingKey&, const BindingKey&) = default;
};

/// Shape-level description of a parameter set: slot declarations, buffers
/// and the binding table. Counting works on a layout alone, without
/// allocating any values.
class ParameterLayout {
 public:
  ParameterId declare(std::string name, Shape shape, InitSpec init, bool decay_enabled);
  BufferId declare_buffer(std::string name, Shape shape, double fill);

  /// Binds a layer instance's role to a slot. The slot must have the
  /// instance's expected shape; rebinding the same key is an error.
  void bind(std::string instance, std::string role, ParameterId id, const Shape& expected);

  std::optional<ParameterId> find(std::string_view name) const;
  std::optional<BufferId> find_buffer(std::string_view name) const;
  std::optional<ParameterId> binding(const BindingKey& key) const;

  const SlotDecl& slot(ParameterId id) const { return slots_.at(id.index); }
  const std::vector<SlotDecl>& slots() const noexcept { return slots_; }
  const std::vector<BufferDecl>& buffers() const noexcept { return buffers_; }
  const std::map<BindingKey, ParameterId>& bindings() const noexcept { return bindings_; }

  /// Total element count over distinct slots (never over bindings).
  std::size_t parameter_count() const;
  std::size_t binding_count(ParameterId id) const;
  std::vector<BindingKey> bound_instances(ParameterId id) const;

 private:
  std::vector<SlotDecl> slots_;
  std::vector<BufferDecl> buffers_;
  std::unordered_map<std::string, std::uint32_t> slot_index_;
  std::unordered_map<std::string, std::uint32_t> buffer_index_;
  std::map<BindingKey, ParameterId> bindings_;
};

template <typename T>
struct ParameterSlot {
  ParameterId id;
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> velocity;
  bool decay_enabled = false;
};

template <typename T>
class ParameterRegistry {
 public:
  struct Snapshot {
    std::vector<Tensor<T>> values;
    std::vector<Tensor<T>> buffers;
  };

  ParameterRegistry() = default;
  /// Materializes every declared slot in declaration order, drawing initial
  /// values from `rng`. A shared slot is initialized once.
  ParameterRegistry(const ParameterLayout& layout, Rng& rng);

  ParameterRegistry(ParameterRegistry&&) noexcept = default;
  ParameterRegistry& operator=(ParameterRegistry&&) noexcept = default;

  ParameterId register_parameter(std::string name, Shape shape, InitSpec init, Rng& rng,
                                 bool decay_enabled = false);
  BufferId register_buffer(std::string name, Shape shape, double fill = 0.0);
  void bind(std::string instance, std::string role, ParameterId id, const Shape& expected) {
    layout_.bind(std::move(instance), std::move(role), id, expected);
  }

  /// grad += contribution, under the slot's lock.
  void accumulate_grad(ParameterId id, const Tensor<T>& contribution);
  void zero_grads();

  Snapshot snapshot() const;
  void restore(const Snapshot& snap);

  ParameterSlot<T>& slot(ParameterId id) { return slots_.at(id.index); }
  const ParameterSlot<T>& slot(ParameterId id) const { return slots_.at(id.index); }
  std::vector<ParameterSlot<T>>& slots() noexcept { return slots_; }
  const std::vector<ParameterSlot<T>>& slots() const noexcept { return slots_; }
  const Tensor<T>& value(ParameterId id) const { return slot(id).value; }

  Tensor<T>& buffer(BufferId id) { return buffers_.at(id.index); }
  const Tensor<T>& buffer(BufferId id) const { return buffers_.at(id.index); }
  std::size_t buffer_count() const noexcept { return buffers_.size(); }

  std::size_t size() const noexcept { return slots_.size(); }
  std::size_t parameter_count() const { return layout_.parameter_count(); }
  const ParameterLayout& layout() const noexcept { return layout_; }

  /// Hash over every slot value and buffer, in declaration order.
  std::uint64_t content_hash() const;

 private:
  void materialize(const SlotDecl& decl, Rng& rng);

  ParameterLayout layout_;
  std::vector<ParameterSlot<T>> slots_;
  std::vector<Tensor<T>> buffers_;
  std::vector<std::unique_ptr<std::mutex>> locks_;
};

extern template class ParameterRegistry<float>;
extern template class ParameterRegistry<double>;

}  // namespace shareconv
