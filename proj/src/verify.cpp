#include "shareconv/verify.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "shareconv/hash.hpp"

namespace shareconv {

namespace {

constexpr std::size_t check_classes = 10;

std::size_t widest(const NetworkSpec& spec) {
  std::size_t w = spec.stem.out_channels;
  for (const auto& s : spec.stages) w = std::max({w, s.out_channels, s.mid_channels});
  return w;
}

Tensor<double> random_images(std::size_t n, std::size_t c, std::size_t extent, Rng& rng) {
  Tensor<double> images({n, c, extent, extent});
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : images.data()) v = normal(rng);
  return images;
}

std::vector<int> random_labels(std::size_t n, std::size_t classes, Rng& rng) {
  std::uniform_int_distribution<int> pick(0, static_cast<int>(classes) - 1);
  std::vector<int> labels(n);
  for (auto& l : labels) l = pick(rng);
  return labels;
}

std::size_t max_shared_bindings(const Model<double>& model) {
  std::size_t most = 0;
  for (const auto& id : model.stage_shared()) {
    if (id) most = std::max(most, model.params().layout().binding_count(*id));
  }
  return most;
}

void hash_signs(Fnv1a& h, const Tensor<double>& x) {
  for (const double v : x.data()) {
    const std::uint8_t positive = v > 0 ? 1 : 0;
    h.update(&positive, 1);
  }
}

void hash_sequence(Fnv1a& h, std::span<const Op> ops, const SequenceTape<double>& tape) {
  for (std::size_t i = 0; i < ops.size(); ++i) {
    if (std::holds_alternative<ReluOp>(ops[i])) {
      hash_signs(h, std::get<InputCache<double>>(tape.caches[i]).input);
    } else if (std::holds_alternative<MaxPoolOp>(ops[i])) {
      const auto& argmax = std::get<MaxPoolCache>(tape.caches[i]).argmax;
      h.update(argmax.data(), argmax.size() * sizeof(std::size_t));
    }
  }
}

// Which side of every ReLU and max-pool switch the forward pass landed on.
// Two points with the same pattern lie in one smooth piece of the loss.
std::uint64_t activation_pattern(const Network& net, const NetworkTape<double>& tape) {
  Fnv1a h;
  hash_sequence(h, net.stem, tape.stem);
  for (std::size_t b = 0; b < net.blocks.size(); ++b) {
    const auto& block = net.blocks[b];
    hash_sequence(h, block.branch, tape.blocks[b].branch);
    hash_sequence(h, block.projection, tape.blocks[b].projection);
    if (block.relu_after_add) hash_signs(h, tape.blocks[b].pre_relu);
  }
  hash_sequence(h, net.head, tape.head);
  return h.digest();
}

}  // namespace

ArchitectureRef reduced_architecture(std::string_view architecture, std::size_t max_width, std::size_t blocks) {
  if (max_width == 0) throw Error("max width must be positive");
  ArchitectureRef ref = ArchitectureRef::parse(architecture);
  const std::size_t w = widest(find_entry(ref.base).spec);
  ref.width_divisor = std::max(ref.width_divisor, (w + max_width - 1) / max_width);
  if (blocks > 0) ref.max_blocks = ref.max_blocks == 0 ? blocks : std::min(ref.max_blocks, blocks);
  return ref;
}

std::size_t blocks_for_two_bindings(std::string_view architecture) {
  const auto& spec = find_entry(ArchitectureRef::parse(architecture).base).spec;
  const bool any_excluded = std::ranges::any_of(spec.stages, [](const StageSpec& s) { return !s.include_entry_block; });
  return any_excluded ? 3 : 2;
}

std::size_t reduced_input_extent(std::string_view architecture, std::size_t cap) {
  const auto& entry = find_entry(ArchitectureRef::parse(architecture).base);
  // The 7x7/2 stem and its pooling shrink inputs fourfold; the cap applies
  // to the maps the residual stages see.
  const std::size_t factor = entry.spec.stem.kind == StemKind::imagenet ? 4 : 1;
  return std::min(entry.input_extent, cap * factor);
}

template <typename T>
double relative_difference(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.extents(), b.extents(), "relative_difference");
  double diff = 0, scale = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = static_cast<double>(a[i]), y = static_cast<double>(b[i]);
    diff = std::max(diff, std::abs(x - y));
    scale = std::max({scale, std::abs(x), std::abs(y)});
  }
  if (!std::isfinite(diff) || !std::isfinite(scale)) return std::numeric_limits<double>::infinity();
  return scale == 0 ? 0.0 : diff / scale;
}

template <typename T>
void copy_by_bindings(const ParameterRegistry<T>& from, ParameterRegistry<T>& to) {
  for (const auto& [key, to_id] : to.layout().bindings()) {
    const auto from_id = from.layout().binding(key);
    if (!from_id) throw Error(fmt::format("no binding for {}.{} in the source model", key.instance, key.role));
    to.slot(to_id).value = from.value(*from_id);
  }
  for (std::size_t i = 0; i < to.buffer_count(); ++i) {
    const auto& name = to.layout().buffers()[i].name;
    const auto src = from.layout().find_buffer(name);
    if (!src) throw Error(fmt::format("no buffer {} in the source model", name));
    to.buffer(BufferId{static_cast<std::uint32_t>(i)}) = from.buffer(*src);
  }
}

GradcheckReport gradcheck(const GradcheckOptions& options) {
  const ArchitectureRef ref = reduced_architecture(options.architecture, options.max_width, options.blocks);
  const std::size_t classes = std::min(find_entry(ref.base).spec.class_count, check_classes);
  GradcheckReport report = gradcheck(make_spec(ref, options.shared, classes),
                                     reduced_input_extent(options.architecture, options.max_extent), options);
  report.architecture = ref.to_string();
  return report;
}

GradcheckReport gradcheck(const NetworkSpec& spec, std::size_t extent, const GradcheckOptions& options) {
  if (options.epsilon <= 0) throw Error("epsilon must be positive");
  const std::size_t classes = spec.class_count;
  Model<double> model = Model<double>::build(spec, options.seed);

  Rng data_rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
  const std::size_t batch =
      options.batch ? options.batch : (spec.stem.kind == StemKind::imagenet ? std::size_t{16} : std::size_t{2});
  const Tensor<double> images = random_images(batch, spec.input_channels, extent, data_rng);
  const std::vector<int> labels = random_labels(batch, classes, data_rng);

  // Dropout masks are redrawn from the same seed on every pass so the
  // objective is a fixed function of the parameters.
  struct Evaluation {
    double loss;
    std::uint64_t pattern;
  };
  const auto evaluate_at = [&](bool with_backward) {
    Rng rng(options.seed + 1);
    NetworkTape<double> tape;
    const Tensor<double> logits = model.forward(images, Mode::train, rng, tape);
    const LossResult<double> loss = softmax_cross_entropy(logits, labels);
    if (with_backward) model.backward(tape, loss.grad_logits);
    return Evaluation{loss.loss, activation_pattern(model.network(), tape)};
  };

  auto& params = model.params();
  params.zero_grads();
  const std::uint64_t base_pattern = evaluate_at(true).pattern;
  if (options.corrupt) options.corrupt(params);

  GradcheckReport report;
  report.architecture = spec.name;
  report.shared = std::ranges::any_of(spec.stages, [](const StageSpec& st) { return st.share; });
  for (auto& slot : params.slots()) {
    SlotError e{slot.name, params.layout().binding_count(slot.id), slot.value.size()};
    Tensor<double> numeric = Tensor<double>::zeros_like(slot.value);
    for (std::size_t i = 0; i < slot.value.size(); ++i) {
      const double original = slot.value[i];
      // A probe whose ends fall on a different ReLU or pooling switch than
      // the base point measures the slope across a kink; shrink it until
      // both ends stay in the base point's piece.
      double step = options.epsilon;
      for (std::size_t attempt = 0;; ++attempt) {
        slot.value[i] = original + step;
        const Evaluation up = evaluate_at(false);
        slot.value[i] = original - step;
        const Evaluation down = evaluate_at(false);
        slot.value[i] = original;
        numeric[i] = (up.loss - down.loss) / (2 * step);
        const bool smooth = up.pattern == base_pattern && down.pattern == base_pattern;
        if (smooth) break;
        if (attempt == 0) ++e.refined;
        if (attempt == options.max_refinements) {
          ++e.unresolved;
          break;
        }
        step /= 10;
      }
    }
    e.relative_error = relative_difference(slot.grad, numeric);
    report.refined += e.refined;
    report.unresolved += e.unresolved;
    if (e.relative_error > report.max_error || report.worst_slot.empty()) {
      report.max_error = std::max(report.max_error, e.relative_error);
      report.worst_slot = e.name;
    }
    report.slots.push_back(std::move(e));
  }
  report.passed = std::ranges::all_of(report.slots, [&](const SlotError& e) {
    return e.relative_error <= options.tolerance;
  });
  return report;
}

EquivReport equiv(const EquivOptions& options) {
  const std::size_t blocks = options.blocks ? options.blocks : blocks_for_two_bindings(options.architecture);
  ArchitectureRef ref = ArchitectureRef::parse(options.architecture);
  ref.width_divisor = std::max(ref.width_divisor, options.width_divisor);
  ref.max_blocks = ref.max_blocks == 0 ? blocks : std::min(ref.max_blocks, blocks);
  const auto& entry = find_entry(ref.base);
  const std::size_t classes = std::min(entry.spec.class_count, check_classes);

  Model<double> shared = Model<double>::build(make_spec(ref, true, classes), options.seed);
  Model<double> clone = Model<double>::build(make_spec(ref, false, classes), options.seed + 1);
  copy_by_bindings(shared.params(), clone.params());

  const std::size_t cap = options.max_extent
                              ? options.max_extent
                              : (entry.dataset == DatasetFamily::imagenet ? std::size_t{16} : std::size_t{8});
  Rng data_rng(options.seed ^ 0x51ed270b27c5a3f1ULL);
  const Tensor<double> images =
      random_images(options.batch, shared.spec().input_channels, std::min(entry.input_extent, cap), data_rng);
  const std::vector<int> labels = random_labels(options.batch, classes, data_rng);

  EquivReport report;
  report.architecture = ref.to_string();
  report.max_bindings = max_shared_bindings(shared);

  const auto run = [&](Model<double>& m, NetworkTape<double>& tape) {
    Rng rng(options.seed + 7);
    return m.forward(images, Mode::train, rng, tape);
  };

  NetworkTape<double> tape_s, tape_c;
  const Tensor<double> out_s = run(shared, tape_s);
  const Tensor<double> out_c = run(clone, tape_c);
  report.forward_error = relative_difference(out_s, out_c);
  report.forward_ok = report.forward_error <= options.tolerance;

  shared.params().zero_grads();
  clone.params().zero_grads();
  shared.backward(tape_s, softmax_cross_entropy(out_s, labels).grad_logits);
  clone.backward(tape_c, softmax_cross_entropy(out_c, labels).grad_logits);

  const auto& layout = shared.params().layout();
  for (const auto& slot : shared.params().slots()) {
    const auto keys = layout.bound_instances(slot.id);
    if (keys.empty()) continue;
    Tensor<double> sum = Tensor<double>::zeros_like(slot.grad);
    for (const auto& key : keys) sum += clone.params().slot(*clone.params().layout().binding(key)).grad;
    const double err = relative_difference(slot.grad, sum);
    if (err > report.gradient_error || report.worst_gradient_slot.empty()) {
      report.gradient_error = std::max(report.gradient_error, err);
      report.worst_gradient_slot = slot.name;
    }
  }
  report.gradient_ok = report.gradient_error <= options.tolerance;

  step(shared.params(), options.optimizer, 0);
  step(clone.params(), options.optimizer, 0);
  NetworkTape<double> after_s, after_c;
  report.post_step_difference = relative_difference(run(shared, after_s), run(clone, after_c));
  report.divergence_ok = report.max_bindings >= 2 ? report.post_step_difference > options.tolerance
                                                  : report.post_step_difference <= options.tolerance;
  return report;
}

template double relative_difference(const Tensor<float>&, const Tensor<float>&);
template double relative_difference(const Tensor<double>&, const Tensor<double>&);
template void copy_by_bindings(const ParameterRegistry<float>&, ParameterRegistry<float>&);
template void copy_by_bindings(const ParameterRegistry<double>&, ParameterRegistry<double>&);

}  // namespace shareconv
