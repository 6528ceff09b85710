#include "shareconv/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "shareconv/checkpoint.hpp"

namespace shareconv {

void TrainConfig::validate() const {
  if (epochs == 0) throw Error("epochs must be >= 1");
  if (batch_size == 0) throw Error("batch size must be >= 1");
  optimizer.validate();
}

void append_metrics(const std::filesystem::path& path, const MetricsRecord& r) {
  std::error_code ec;
  const bool fresh = !std::filesystem::exists(path, ec) || std::filesystem::file_size(path, ec) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw Error(fmt::format("cannot open metrics file {}", path.string()));
  if (fresh) out << metrics_header << '\n';
  out << fmt::format("{},{:.6f},{:.4f},{:.4f},{:.8g},{:.3f}\n", r.epoch, r.train_loss, r.top1_error, r.top5_error,
                     r.learning_rate, r.seconds);
}

std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(fmt::format("cannot open metrics file {}", path.string()));
  std::string line;
  if (!std::getline(in, line) || line != metrics_header) throw Error("metrics file has an unexpected header");
  std::vector<MetricsRecord> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    MetricsRecord r;
    char comma = 0;
    ss >> r.epoch >> comma >> r.train_loss >> comma >> r.top1_error >> comma >> r.top5_error >> comma >>
        r.learning_rate >> comma >> r.seconds;
    if (!ss) throw Error(fmt::format("malformed metrics row '{}'", line));
    rows.push_back(r);
  }
  return rows;
}

template <typename T>
TopKErrors topk_errors(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.extent(0) != labels.size()) {
    throw ShapeError(fmt::format("topk_errors: logits {} for {} labels", format_shape(logits.extents()),
                                 labels.size()));
  }
  const std::size_t N = logits.extent(0), K = logits.extent(1);
  if (N == 0) return {};
  std::size_t miss1 = 0, miss5 = 0;
  for (std::size_t n = 0; n < N; ++n) {
    const T* row = logits.raw() + n * K;
    const int label = labels[n];
    if (label < 0 || static_cast<std::size_t>(label) >= K) throw Error(fmt::format("label {} out of range", label));
    std::size_t above = 0;
    for (std::size_t k = 0; k < K; ++k) above += row[k] > row[label] ? 1 : 0;
    miss1 += above >= 1 ? 1 : 0;
    miss5 += above >= 5 ? 1 : 0;
  }
  return {100.0 * static_cast<double>(miss1) / static_cast<double>(N),
          100.0 * static_cast<double>(miss5) / static_cast<double>(N)};
}

template <typename T>
TopKErrors evaluate(Model<T>& model, const Dataset& data, std::size_t batch_size) {
  if (data.size() == 0) throw Error("cannot evaluate on an empty dataset");
  double miss1 = 0, miss5 = 0;
  BatchStream stream(data, {batch_size, 0, false, std::nullopt, 0}, 0);
  while (auto b = stream.next()) {
    const Tensor<T> logits = model.infer(b->images.template cast<T>());
    const TopKErrors e = topk_errors(logits, b->labels);
    miss1 += e.top1 * static_cast<double>(b->labels.size());
    miss5 += e.top5 * static_cast<double>(b->labels.size());
  }
  const auto n = static_cast<double>(data.size());
  return {miss1 / n, miss5 / n};
}

TopKErrors evaluate_checkpoint(const std::filesystem::path& checkpoint, const Dataset& data) {
  CheckpointHeader header;
  Model<float> model = load_model<float>(checkpoint, &header);
  if (header.class_count != data.class_count) {
    throw Error(fmt::format("checkpoint has {} classes, dataset has {}", header.class_count, data.class_count));
  }
  return evaluate(model, data);
}

TrainResult train(const TrainConfig& config, const Dataset& train_set, const Dataset& test_set, std::ostream* log) {
  config.validate();
  if (train_set.size() == 0) throw Error("training set is empty");
  const NetworkSpec spec = make_spec(config.architecture, config.shared, train_set.class_count);
  Model<float> model = Model<float>::build(spec, config.seed);
  Rng dropout_rng(config.seed ^ 0xd0d0d0d0ULL);

  const bool write_files = !config.out_dir.empty();
  const auto metrics_path = config.out_dir / "metrics.csv";
  if (write_files) {
    std::filesystem::create_directories(config.out_dir);
    std::filesystem::remove(metrics_path);
  }
  const auto header_for = [&](std::size_t epoch) {
    return CheckpointHeader{spec.name, config.shared, static_cast<std::uint32_t>(spec.class_count),
                            static_cast<std::uint32_t>(epoch)};
  };

  TrainResult result;
  std::optional<AugmentConfig> augment = config.augment;
  if (augment) augment->seed ^= config.seed;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    BatchStream stream(train_set, {config.batch_size, config.seed, true, augment, config.prefetch}, epoch);
    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    while (auto batch = stream.next()) {
      model.params().zero_grads();
      NetworkTape<float> tape;
      const Tensor<float> logits = model.forward(batch->images, Mode::train, dropout_rng, tape);
      const LossResult<float> loss = softmax_cross_entropy(logits, batch->labels);
      if (!std::isfinite(loss.loss)) {
        throw Error(fmt::format("non-finite loss at epoch {} batch {}", epoch, batch_index));
      }
      model.backward(tape, loss.grad_logits);
      step(model.params(), config.optimizer, epoch);
      loss_sum += static_cast<double>(loss.loss) * static_cast<double>(batch->labels.size());
      ++batch_index;
    }
    const TopKErrors errors = evaluate(model, test_set);
    MetricsRecord r;
    r.epoch = epoch;
    r.train_loss = loss_sum / static_cast<double>(train_set.size());
    r.top1_error = errors.top1;
    r.top5_error = errors.top5;
    r.learning_rate = lr_at(config.optimizer, epoch);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.push_back(r);
    if (log) {
      fmt::print(*log, "epoch {:3d}  loss {:.4f}  top1 {:6.2f}%  top5 {:6.2f}%  lr {:.4g}  {:.1f}s\n", r.epoch,
                 r.train_loss, r.top1_error, r.top5_error, r.learning_rate, r.seconds);
    }
    if (write_files) append_metrics(metrics_path, r);
    if (r.top1_error < result.best_top1_error || epoch == 0) {
      result.best_top1_error = r.top1_error;
      if (write_files) save_checkpoint(config.out_dir / "best.ckpt", header_for(epoch), model.params());
    }
  }
  if (write_files) save_checkpoint(config.out_dir / "final.ckpt", header_for(config.epochs - 1), model.params());
  result.parameter_hash = model.params().content_hash();
  return result;
}

std::size_t loss_window_violations(std::span<const MetricsRecord> history, std::size_t window,
                                   std::size_t start_epoch) {
  std::size_t violations = 0;
  for (std::size_t e = start_epoch; e + window - 1 < history.size(); ++e) {
    if (history[e + window - 1].train_loss > history[e].train_loss) ++violations;
  }
  return violations;
}

template TopKErrors topk_errors(const Tensor<float>&, std::span<const int>);
template TopKErrors topk_errors(const Tensor<double>&, std::span<const int>);
template TopKErrors evaluate(Model<float>&, const Dataset&, std::size_t);
template TopKErrors evaluate(Model<double>&, const Dataset&, std::size_t);

}  // namespace shareconv
