#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <exception>
#include <filesystem>
#include <mutex>
#include <optional>
#include <span>
#include <stop_token>
#include <string>
#include <thread>
#include <vector>

#include "shareconv/ops.hpp"
#include "shareconv/tensor.hpp"

namespace shareconv {

/// Images stored contiguously as N x C x H x W floats.
struct Dataset {
  Tensor<float> images;
  std::vector<int> labels;
  std::size_t class_count = 0;

  std::size_t size() const noexcept { return labels.size(); }
  Shape image_shape() const { return {images.extent(1), images.extent(2), images.extent(3)}; }
  /// The first `n` samples (all of them when n >= size()).
  Dataset head(std::size_t n) const;
  std::uint64_t content_hash() const;
};

struct Sample {
  Tensor<float> image;  // C x H x W
  int label = 0;
};

Sample sample_at(const Dataset& data, std::size_t index);

// ---- CIFAR binary format ----

enum class CifarVariant { cifar10, cifar100 };

inline constexpr std::size_t cifar_image_bytes = 3 * 32 * 32;

/// Bytes per record: label byte(s) followed by the R, G and B planes.
std::size_t cifar_record_bytes(CifarVariant variant);

/// Which files make up a dataset directory and how many records each holds.
struct CifarFileLayout {
  std::vector<std::string> train_files;
  std::string test_file;
  std::size_t records_per_train_file = 10000;
  std::size_t test_records = 10000;

  /// data_batch_1..5.bin + test_batch.bin, or train.bin + test.bin.
  static CifarFileLayout standard(CifarVariant variant);
};

/// Undecoded records. For CIFAR-100 `labels` holds the fine label and
/// `coarse_labels` the coarse one.
struct CifarRecords {
  std::vector<std::uint8_t> pixels;
  std::vector<int> labels;
  std::vector<int> coarse_labels;
  std::size_t size() const noexcept { return labels.size(); }
};

/// Reads one file, which must hold exactly `expected_records` records.
CifarRecords read_cifar_file(const std::filesystem::path& path, CifarVariant variant,
                             std::size_t expected_records);
void write_cifar_file(const std::filesystem::path& path, CifarVariant variant, const CifarRecords& records);

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> std;
};

/// Pixels scaled to [0, 1].
Dataset decode_cifar(const CifarRecords& records, CifarVariant variant);
ChannelStats channel_statistics(const Dataset& data);
/// (x - mean) / std per channel; a zero std is treated as 1.
void standardize(Dataset& data, const ChannelStats& stats);

struct CifarData {
  Dataset train;
  Dataset test;
  ChannelStats stats;  // computed on the training set, applied to both
};

CifarData load_cifar_binary(const std::filesystem::path& directory, CifarVariant variant);
CifarData load_cifar_binary(const std::filesystem::path& directory, CifarVariant variant,
                            const CifarFileLayout& layout);

// ---- augmentation ----

struct AugmentConfig {
  bool horizontal_flip = true;          // mirror with probability 0.5
  std::optional<std::size_t> crop_pad;  // zero-pad then crop back at a random offset
  std::uint64_t seed = 0;

  bool enabled() const noexcept { return horizontal_flip || crop_pad.has_value(); }
};

Tensor<float> flip_horizontal(const Tensor<float>& image);
Tensor<float> pad_crop(const Tensor<float>& image, std::size_t pad, std::size_t offset_y, std::size_t offset_x);
Sample augment(Sample sample, const AugmentConfig& config, Rng& rng);

// ---- synthetic data ----

struct BlobConfig {
  std::size_t class_count = 4;
  std::size_t per_class = 200;
  std::size_t channels = 3;
  std::size_t height = 16;
  std::size_t width = 16;
  double noise = 0.5;  // std of additive Gaussian pixel noise
  std::uint64_t seed = 0;
};

/// Class c is a Gaussian blob centred at a class-specific point on a circle
/// around the image centre, tinted with a class-specific colour.
Tensor<float> blob_template(const BlobConfig& config, std::size_t cls);
Dataset synthetic_blobs(const BlobConfig& config);

// ---- batching ----

struct Batch {
  Tensor<float> images;
  std::vector<int> labels;
  std::vector<std::size_t> indices;
};

Batch gather(const Dataset& data, std::span<const std::size_t> indices);

/// Seeded permutation of [0, n) for one epoch.
std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::size_t epoch);

struct BatchOptions {
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  bool shuffle = true;
  std::optional<AugmentConfig> augment;
  std::size_t prefetch = 2;  // 0 assembles batches on the caller's thread
};

/// One epoch of batches; the final partial batch is included. With prefetch
/// the batches are assembled on a worker thread feeding a bounded queue; the
/// order depends only on the seed and epoch.
class BatchStream {
 public:
  BatchStream(const Dataset& data, BatchOptions options, std::size_t epoch);
  ~BatchStream();
  BatchStream(const BatchStream&) = delete;
  BatchStream& operator=(const BatchStream&) = delete;

  std::optional<Batch> next();
  std::size_t batch_count() const noexcept { return batch_count_; }

 private:
  Batch make_batch(std::size_t index);
  void produce(std::stop_token stop);

  const Dataset& data_;
  BatchOptions options_;
  std::vector<std::size_t> order_;
  std::size_t batch_count_ = 0;
  std::size_t next_index_ = 0;
  Rng augment_rng_;

  std::mutex mutex_;
  std::condition_variable_any ready_;
  std::deque<Batch> queue_;
  std::size_t produced_ = 0;
  std::size_t consumed_ = 0;
  std::exception_ptr error_;
  std::jthread worker_;
};

}  // namespace shareconv
