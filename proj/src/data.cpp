#include "shareconv/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <fmt/format.h>

#include "shareconv/hash.hpp"

namespace shareconv {

Dataset Dataset::head(std::size_t n) const {
  n = std::min(n, size());
  const Shape img = image_shape();
  const std::size_t per = shape_size(img);
  std::vector<float> data(images.data().begin(), images.data().begin() + static_cast<std::ptrdiff_t>(n * per));
  return {Tensor<float>({n, img[0], img[1], img[2]}, std::move(data)),
          std::vector<int>(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n)), class_count};
}

std::uint64_t Dataset::content_hash() const {
  Fnv1a h;
  h.update(images.data());
  h.update(std::span<const int>(labels));
  return h.digest();
}

Sample sample_at(const Dataset& data, std::size_t index) {
  const Shape img = data.image_shape();
  const std::size_t per = shape_size(img);
  const auto begin = data.images.data().begin() + static_cast<std::ptrdiff_t>(index * per);
  return {Tensor<float>(img, std::vector<float>(begin, begin + static_cast<std::ptrdiff_t>(per))),
          data.labels.at(index)};
}

std::size_t cifar_record_bytes(CifarVariant variant) {
  return (variant == CifarVariant::cifar10 ? 1 : 2) + cifar_image_bytes;
}

CifarFileLayout CifarFileLayout::standard(CifarVariant variant) {
  if (variant == CifarVariant::cifar10) {
    return {{"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"},
            "test_batch.bin", 10000, 10000};
  }
  return {{"train.bin"}, "test.bin", 50000, 10000};
}

CifarRecords read_cifar_file(const std::filesystem::path& path, CifarVariant variant,
                             std::size_t expected_records) {
  const std::size_t record = cifar_record_bytes(variant);
  std::error_code ec;
  const auto actual = std::filesystem::file_size(path, ec);
  if (ec) throw Error(fmt::format("cannot read {}: {}", path.string(), ec.message()));
  const std::size_t expected = expected_records * record;
  if (actual != expected) {
    throw Error(fmt::format("{}: expected {} bytes ({} records of {}), found {}", path.string(), expected,
                            expected_records, record, actual));
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("cannot open {}", path.string()));
  std::vector<std::uint8_t> bytes(expected);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(expected));
  if (!in) throw Error(fmt::format("short read from {}", path.string()));

  const int max_label = variant == CifarVariant::cifar10 ? 10 : 100;
  CifarRecords r;
  r.pixels.resize(expected_records * cifar_image_bytes);
  r.labels.resize(expected_records);
  if (variant == CifarVariant::cifar100) r.coarse_labels.resize(expected_records);
  for (std::size_t i = 0; i < expected_records; ++i) {
    const std::uint8_t* rec = bytes.data() + i * record;
    if (variant == CifarVariant::cifar100) {
      r.coarse_labels[i] = rec[0];
      r.labels[i] = rec[1];
      if (rec[0] >= 20) throw Error(fmt::format("{}: record {} has coarse label {} out of range", path.string(), i, rec[0]));
    } else {
      r.labels[i] = rec[0];
    }
    if (r.labels[i] >= max_label) {
      throw Error(fmt::format("{}: record {} has label {} out of range [0, {})", path.string(), i, r.labels[i],
                              max_label));
    }
    std::copy_n(rec + (record - cifar_image_bytes), cifar_image_bytes, r.pixels.data() + i * cifar_image_bytes);
  }
  return r;
}

void write_cifar_file(const std::filesystem::path& path, CifarVariant variant, const CifarRecords& records) {
  if (records.pixels.size() != records.size() * cifar_image_bytes) throw Error("pixel count does not match labels");
  if (variant == CifarVariant::cifar100 && records.coarse_labels.size() != records.size()) {
    throw Error("cifar100 records need coarse labels");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot create {}", path.string()));
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (variant == CifarVariant::cifar100) out.put(static_cast<char>(records.coarse_labels[i]));
    out.put(static_cast<char>(records.labels[i]));
    out.write(reinterpret_cast<const char*>(records.pixels.data() + i * cifar_image_bytes),
              static_cast<std::streamsize>(cifar_image_bytes));
  }
  if (!out) throw Error(fmt::format("failed writing {}", path.string()));
}

Dataset decode_cifar(const CifarRecords& records, CifarVariant variant) {
  const std::size_t n = records.size();
  std::vector<float> data(records.pixels.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(records.pixels[i]) / 255.0f;
  return {Tensor<float>({n, 3, 32, 32}, std::move(data)), records.labels,
          variant == CifarVariant::cifar10 ? 10u : 100u};
}

ChannelStats channel_statistics(const Dataset& data) {
  const std::size_t N = data.size(), C = data.images.extent(1);
  const std::size_t HW = data.images.extent(2) * data.images.extent(3);
  ChannelStats s{std::vector<double>(C, 0.0), std::vector<double>(C, 0.0)};
  const double count = static_cast<double>(N * HW);
  for (std::size_t c = 0; c < C; ++c) {
    double sum = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const float* p = data.images.raw() + (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) sum += p[i];
    }
    const double mean = sum / count;
    double sq = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const float* p = data.images.raw() + (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) sq += (p[i] - mean) * (p[i] - mean);
    }
    s.mean[c] = mean;
    s.std[c] = std::sqrt(sq / count);
  }
  return s;
}

void standardize(Dataset& data, const ChannelStats& stats) {
  const std::size_t N = data.size(), C = data.images.extent(1);
  const std::size_t HW = data.images.extent(2) * data.images.extent(3);
  if (stats.mean.size() != C || stats.std.size() != C) throw Error("channel statistics do not match the dataset");
  for (std::size_t c = 0; c < C; ++c) {
    const double scale = stats.std[c] > 0.0 ? 1.0 / stats.std[c] : 1.0;
    for (std::size_t n = 0; n < N; ++n) {
      float* p = data.images.raw() + (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) p[i] = static_cast<float>((p[i] - stats.mean[c]) * scale);
    }
  }
}

namespace {

Dataset concat(std::vector<Dataset> parts) {
  std::size_t n = 0;
  for (const auto& p : parts) n += p.size();
  std::vector<float> pixels;
  std::vector<int> labels;
  pixels.reserve(n * cifar_image_bytes);
  labels.reserve(n);
  for (const auto& p : parts) {
    pixels.insert(pixels.end(), p.images.data().begin(), p.images.data().end());
    labels.insert(labels.end(), p.labels.begin(), p.labels.end());
  }
  const std::size_t classes = parts.front().class_count;
  return {Tensor<float>({n, 3, 32, 32}, std::move(pixels)), std::move(labels), classes};
}

}  // namespace

CifarData load_cifar_binary(const std::filesystem::path& directory, CifarVariant variant) {
  return load_cifar_binary(directory, variant, CifarFileLayout::standard(variant));
}

CifarData load_cifar_binary(const std::filesystem::path& directory, CifarVariant variant,
                            const CifarFileLayout& layout) {
  if (layout.train_files.empty()) throw Error("CIFAR layout lists no training files");
  std::vector<Dataset> parts;
  for (const auto& f : layout.train_files) {
    parts.push_back(decode_cifar(read_cifar_file(directory / f, variant, layout.records_per_train_file), variant));
  }
  CifarData d;
  d.train = concat(std::move(parts));
  d.test = decode_cifar(read_cifar_file(directory / layout.test_file, variant, layout.test_records), variant);
  d.stats = channel_statistics(d.train);
  standardize(d.train, d.stats);
  standardize(d.test, d.stats);
  return d;
}

Tensor<float> flip_horizontal(const Tensor<float>& image) {
  if (image.rank() != 3) throw ShapeError("flip_horizontal expects C x H x W, got " + format_shape(image.extents()));
  Tensor<float> out = image;
  const std::size_t rows = image.extent(0) * image.extent(1), W = image.extent(2);
  for (std::size_t r = 0; r < rows; ++r) {
    float* row = out.raw() + r * W;
    std::reverse(row, row + W);
  }
  return out;
}

Tensor<float> pad_crop(const Tensor<float>& image, std::size_t pad, std::size_t offset_y, std::size_t offset_x) {
  if (image.rank() != 3) throw ShapeError("pad_crop expects C x H x W, got " + format_shape(image.extents()));
  if (offset_y > 2 * pad || offset_x > 2 * pad) throw Error("crop offset exceeds padding");
  const std::size_t C = image.extent(0), H = image.extent(1), W = image.extent(2);
  Tensor<float> out(image.extents());
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < H; ++y) {
      const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + offset_y) - static_cast<std::ptrdiff_t>(pad);
      if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) continue;
      for (std::size_t x = 0; x < W; ++x) {
        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + offset_x) - static_cast<std::ptrdiff_t>(pad);
        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(W)) continue;
        out[(c * H + y) * W + x] = image[(c * H + static_cast<std::size_t>(sy)) * W + static_cast<std::size_t>(sx)];
      }
    }
  }
  return out;
}

Sample augment(Sample sample, const AugmentConfig& config, Rng& rng) {
  if (config.crop_pad) {
    std::uniform_int_distribution<std::size_t> offset(0, 2 * *config.crop_pad);
    const std::size_t oy = offset(rng);
    const std::size_t ox = offset(rng);
    sample.image = pad_crop(sample.image, *config.crop_pad, oy, ox);
  }
  if (config.horizontal_flip) {
    std::bernoulli_distribution coin(0.5);
    if (coin(rng)) sample.image = flip_horizontal(sample.image);
  }
  return sample;
}

Tensor<float> blob_template(const BlobConfig& config, std::size_t cls) {
  using std::numbers::pi;
  const double angle = 2.0 * pi * static_cast<double>(cls) / static_cast<double>(config.class_count);
  const double H = static_cast<double>(config.height), W = static_cast<double>(config.width);
  const double cy = (H - 1) / 2.0 + 0.3 * H * std::sin(angle);
  const double cx = (W - 1) / 2.0 + 0.3 * W * std::cos(angle);
  const double sigma = std::max(1.0, std::min(H, W) / 6.0);
  Tensor<float> t({config.channels, config.height, config.width});
  for (std::size_t c = 0; c < config.channels; ++c) {
    const double tint =
        std::cos(angle + 2.0 * pi * static_cast<double>(c) / static_cast<double>(config.channels));
    for (std::size_t y = 0; y < config.height; ++y) {
      for (std::size_t x = 0; x < config.width; ++x) {
        const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
        const double g = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
        t[(c * config.height + y) * config.width + x] = static_cast<float>(2.0 * tint * g);
      }
    }
  }
  return t;
}

Dataset synthetic_blobs(const BlobConfig& config) {
  if (config.class_count == 0 || config.per_class == 0) throw Error("synthetic_blobs needs classes and samples");
  const std::size_t n = config.class_count * config.per_class;
  const std::size_t per = config.channels * config.height * config.width;
  Dataset d{Tensor<float>({n, config.channels, config.height, config.width}), std::vector<int>(n),
            config.class_count};
  Rng rng(config.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::size_t i = 0;
  for (std::size_t cls = 0; cls < config.class_count; ++cls) {
    const Tensor<float> t = blob_template(config, cls);
    for (std::size_t j = 0; j < config.per_class; ++j, ++i) {
      d.labels[i] = static_cast<int>(cls);
      float* dst = d.images.raw() + i * per;
      for (std::size_t k = 0; k < per; ++k) {
        dst[k] = t[k];
        if (config.noise > 0.0) dst[k] += static_cast<float>(config.noise * noise(rng));
      }
    }
  }
  return d;
}

Batch gather(const Dataset& data, std::span<const std::size_t> indices) {
  const Shape img = data.image_shape();
  const std::size_t per = shape_size(img);
  Batch b{Tensor<float>({indices.size(), img[0], img[1], img[2]}), std::vector<int>(indices.size()),
          std::vector<std::size_t>(indices.begin(), indices.end())};
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices[i];
    if (src >= data.size()) throw Error(fmt::format("sample index {} out of range", src));
    std::copy_n(data.images.raw() + src * per, per, b.images.raw() + i * per);
    b.labels[i] = data.labels[src];
  }
  return b;
}

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x5eedu};
  Rng rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

namespace {

Rng augment_rng(const BatchOptions& options, std::size_t epoch) {
  const std::uint64_t seed = options.augment ? options.augment->seed : 0;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0xa06u};
  return Rng(seq);
}

}  // namespace

BatchStream::BatchStream(const Dataset& data, BatchOptions options, std::size_t epoch)
    : data_(data), options_(std::move(options)), augment_rng_(augment_rng(options_, epoch)) {
  if (options_.batch_size == 0) throw Error("batch size must be positive");
  if (options_.shuffle) {
    order_ = epoch_permutation(data.size(), options_.seed, epoch);
  } else {
    order_.resize(data.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  }
  batch_count_ = (order_.size() + options_.batch_size - 1) / options_.batch_size;
  if (options_.prefetch > 0 && batch_count_ > 0) {
    worker_ = std::jthread([this](std::stop_token stop) { produce(stop); });
  }
}

BatchStream::~BatchStream() {
  if (worker_.joinable()) {
    worker_.request_stop();
    ready_.notify_all();
  }
}

Batch BatchStream::make_batch(std::size_t index) {
  const std::size_t begin = index * options_.batch_size;
  const std::size_t end = std::min(order_.size(), begin + options_.batch_size);
  Batch b = gather(data_, std::span<const std::size_t>(order_).subspan(begin, end - begin));
  if (options_.augment && options_.augment->enabled()) {
    const std::size_t per = shape_size(data_.image_shape());
    for (std::size_t i = 0; i < b.labels.size(); ++i) {
      Sample s{Tensor<float>(data_.image_shape(),
                             std::vector<float>(b.images.raw() + i * per, b.images.raw() + (i + 1) * per)),
               b.labels[i]};
      s = augment(std::move(s), *options_.augment, augment_rng_);
      std::copy_n(s.image.raw(), per, b.images.raw() + i * per);
    }
  }
  return b;
}

void BatchStream::produce(std::stop_token stop) {
  try {
    for (std::size_t i = 0; i < batch_count_; ++i) {
      Batch b = make_batch(i);
      std::unique_lock lock(mutex_);
      if (!ready_.wait(lock, stop, [&] { return queue_.size() < options_.prefetch; })) return;
      queue_.push_back(std::move(b));
      ++produced_;
      ready_.notify_all();
    }
  } catch (...) {
    std::lock_guard lock(mutex_);
    error_ = std::current_exception();
    ready_.notify_all();
  }
}

std::optional<Batch> BatchStream::next() {
  if (consumed_ >= batch_count_) return std::nullopt;
  if (!worker_.joinable()) {
    ++consumed_;
    return make_batch(next_index_++);
  }
  std::unique_lock lock(mutex_);
  ready_.wait(lock, [&] { return !queue_.empty() || error_; });
  if (error_) std::rethrow_exception(error_);
  Batch b = std::move(queue_.front());
  queue_.pop_front();
  ++consumed_;
  ready_.notify_all();
  return b;
}

}  // namespace shareconv
