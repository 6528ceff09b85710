#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "shareconv/data.hpp"
#include "shareconv/model.hpp"
#include "shareconv/optimizer.hpp"

namespace shareconv {

struct TrainConfig {
  std::string architecture = "toy";
  bool shared = true;
  std::size_t epochs = 1;
  std::size_t batch_size = 32;
  OptimizerConfig optimizer{};
  std::uint64_t seed = 0;
  std::optional<AugmentConfig> augment;
  std::filesystem::path out_dir;  // empty: no checkpoint or metrics files
  std::size_t prefetch = 2;

  void validate() const;
};

struct MetricsRecord {
  std::size_t epoch = 0;
  double train_loss = 0;
  double top1_error = 0;  // percent
  double top5_error = 0;  // percent
  double learning_rate = 0;
  double seconds = 0;
};

struct TrainResult {
  std::vector<MetricsRecord> history;
  std::uint64_t parameter_hash = 0;
  double best_top1_error = 100.0;
};

inline const char* metrics_header = "epoch,train_loss,top1_error,top5_error,learning_rate,seconds";

/// Appends one row, writing the header first when the file is new or empty.
void append_metrics(const std::filesystem::path& path, const MetricsRecord& record);
std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path);

struct TopKErrors {
  double top1 = 0;  // percent
  double top5 = 0;  // percent
};

/// A sample is a top-k error when k or more logits are strictly greater than
/// the logit of its true label.
template <typename T>
TopKErrors topk_errors(const Tensor<T>& logits, std::span<const int> labels);

/// Eval-mode forward over the whole dataset.
template <typename T>
TopKErrors evaluate(Model<T>& model, const Dataset& data, std::size_t batch_size = 100);

TopKErrors evaluate_checkpoint(const std::filesystem::path& checkpoint, const Dataset& data);

/// Per epoch: shuffled batches, forward, loss, backward, optimizer step, then
/// evaluation on `test`. Writes metrics.csv, final.ckpt and best.ckpt (lowest
/// top-1 error) into out_dir when set. Throws on a non-finite loss.
TrainResult train(const TrainConfig& config, const Dataset& train_set, const Dataset& test_set,
                  std::ostream* log = nullptr);

/// Counts windows [e, e+4] with e >= 5 whose last loss exceeds the first.
std::size_t loss_window_violations(std::span<const MetricsRecord> history, std::size_t window = 5,
                                   std::size_t start_epoch = 5);

}  // namespace shareconv
