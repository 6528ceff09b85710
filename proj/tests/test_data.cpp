#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <random>

#include "oracles.hpp"
#include "shareconv/data.hpp"
#include "shareconv/error.hpp"
#include "shareconv/hash.hpp"

using namespace shareconv;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("shareconv_data_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

CifarRecords random_records(std::size_t n, CifarVariant variant, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  CifarRecords r;
  r.pixels.resize(n * cifar_image_bytes);
  for (auto& p : r.pixels) p = static_cast<std::uint8_t>(rng());
  const int classes = variant == CifarVariant::cifar10 ? 10 : 100;
  for (std::size_t i = 0; i < n; ++i) {
    r.labels.push_back(static_cast<int>(rng() % classes));
    if (variant == CifarVariant::cifar100) r.coarse_labels.push_back(static_cast<int>(rng() % 20));
  }
  return r;
}

std::vector<float> flat(const Tensor<float>& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("standard CIFAR layouts") {
  const auto c10 = CifarFileLayout::standard(CifarVariant::cifar10);
  CHECK(c10.train_files.size() * c10.records_per_train_file == 50000);
  CHECK(c10.test_records == 10000);
  CHECK(c10.train_files.front() == "data_batch_1.bin");
  CHECK(c10.test_file == "test_batch.bin");
  const auto c100 = CifarFileLayout::standard(CifarVariant::cifar100);
  CHECK(c100.train_files == std::vector<std::string>{"train.bin"});
  CHECK(c100.records_per_train_file == 50000);
  CHECK(cifar_record_bytes(CifarVariant::cifar10) == 3073);
  CHECK(cifar_record_bytes(CifarVariant::cifar100) == 3074);
}

TEST_CASE("CIFAR files round-trip byte for byte") {
  TempDir dir;
  for (const auto variant : {CifarVariant::cifar10, CifarVariant::cifar100}) {
    const auto records = random_records(7, variant, 1);
    const auto path = dir.path / "f.bin";
    write_cifar_file(path, variant, records);
    CHECK(fs::file_size(path) == 7 * cifar_record_bytes(variant));
    const auto back = read_cifar_file(path, variant, 7);
    CHECK(back.pixels == records.pixels);
    CHECK(back.labels == records.labels);
    CHECK(back.coarse_labels == records.coarse_labels);

    const auto decoded = decode_cifar(back, variant);
    CHECK(decoded.images.extents() == Shape{7, 3, 32, 32});
    // plane order R, G, B; row-major within a plane
    CHECK(decoded.images.at(2, 1, 3, 4) == static_cast<float>(records.pixels[2 * 3072 + 1024 + 3 * 32 + 4]) / 255.0f);
    CHECK(decoded.labels == records.labels);
  }
}

TEST_CASE("malformed CIFAR files are rejected") {
  TempDir dir;
  const auto records = random_records(3, CifarVariant::cifar10, 2);
  const auto path = dir.path / "f.bin";
  write_cifar_file(path, CifarVariant::cifar10, records);
  try {
    read_cifar_file(path, CifarVariant::cifar10, 4);
    FAIL("expected a size error");
  } catch (const Error& e) {
    const std::string what = e.what();
    CHECK(what.find("12292") != std::string::npos);  // expected bytes
    CHECK(what.find("9219") != std::string::npos);   // found bytes
  }
  CHECK_THROWS_AS(read_cifar_file(dir.path / "missing.bin", CifarVariant::cifar10, 1), Error);

  auto bad = records;
  bad.labels[1] = 10;
  write_cifar_file(path, CifarVariant::cifar10, bad);
  CHECK_THROWS_AS(read_cifar_file(path, CifarVariant::cifar10, 3), Error);
}

TEST_CASE("all-zero files load as label 0 and standardized 0") {
  TempDir dir;
  CifarRecords zeros;
  zeros.pixels.assign(5 * cifar_image_bytes, 0);
  zeros.labels.assign(5, 0);
  write_cifar_file(dir.path / "train.bin", CifarVariant::cifar10, zeros);
  zeros.pixels.resize(2 * cifar_image_bytes);
  zeros.labels.resize(2);
  write_cifar_file(dir.path / "test.bin", CifarVariant::cifar10, zeros);
  const CifarFileLayout layout{{"train.bin"}, "test.bin", 5, 2};
  const auto data = load_cifar_binary(dir.path, CifarVariant::cifar10, layout);
  CHECK(data.train.size() == 5);
  CHECK(data.test.size() == 2);
  CHECK(data.train.class_count == 10);
  for (const int l : data.train.labels) CHECK(l == 0);
  CHECK(oracle::max_abs(data.train.images.cast<double>()) == 0.0);
  CHECK(oracle::max_abs(data.test.images.cast<double>()) == 0.0);

  CHECK_THROWS_AS(load_cifar_binary(dir.path / "nowhere", CifarVariant::cifar10, layout), Error);
}

TEST_CASE("standardization uses training statistics") {
  Dataset d;
  d.images = Tensor<float>({2, 2, 1, 2}, std::vector<float>{1, 3, 5, 5, 3, 5, 5, 5});
  d.labels = {0, 1};
  d.class_count = 2;
  const auto stats = channel_statistics(d);
  CHECK(stats.mean[0] == doctest::Approx(3.0));
  CHECK(stats.std[0] == doctest::Approx(std::sqrt(2.0)));
  CHECK(stats.std[1] == 0.0);
  standardize(d, stats);
  CHECK(d.images[0] == doctest::Approx(-2.0 / std::sqrt(2.0)));
  CHECK(d.images[2] == 0.0f);
}

TEST_CASE("augmentation") {
  std::mt19937_64 rng(3);
  Tensor<float> img({3, 4, 5});
  std::normal_distribution<float> normal;
  for (auto& v : img.data()) v = normal(rng);

  const auto flipped = flip_horizontal(img);
  CHECK(flipped[2 * 5 + 1] == img[2 * 5 + 3]);
  CHECK(flip_horizontal(flipped) == img);

  const auto centre = pad_crop(img, 2, 2, 2);
  CHECK(centre == img);
  const auto shifted = pad_crop(img, 2, 0, 0);
  CHECK(shifted.extents() == img.extents());
  CHECK(shifted[0] == 0.0f);  // from the padding
  CHECK(shifted[2 * 5 + 2] == img[0]);
  CHECK_THROWS_AS(pad_crop(img, 1, 3, 0), Error);

  Rng r(0);
  const Sample s{img, 2};
  const auto off = augment(s, AugmentConfig{false, std::nullopt, 0}, r);
  CHECK(off.image == img);
  CHECK(off.label == 2);
}

TEST_CASE("augmentation stream is reproducible") {
  const auto data = synthetic_blobs({4, 25, 3, 8, 8, 0.3, 5});
  const AugmentConfig cfg{true, 2, 0};
  const auto stream_hash = [&](std::uint64_t seed) {
    Rng r(seed);
    Fnv1a h;
    for (std::size_t i = 0; i < 100; ++i) {
      const auto a = augment(sample_at(data, i), cfg, r);
      h.update(std::span<const float>(a.image.data()));
    }
    return h.digest();
  };
  CHECK(stream_hash(7) == stream_hash(7));
  CHECK(stream_hash(7) != stream_hash(8));
}

TEST_CASE("synthetic blobs") {
  const auto d = synthetic_blobs({4, 10, 3, 16, 16, 0.5, 1});
  CHECK(d.size() == 40);
  CHECK(d.class_count == 4);
  CHECK(d.images.extents() == Shape{40, 3, 16, 16});
  for (int c = 0; c < 4; ++c) CHECK(std::count(d.labels.begin(), d.labels.end(), c) == 10);
  CHECK(synthetic_blobs({4, 10, 3, 16, 16, 0.5, 1}).content_hash() == d.content_hash());
  CHECK(synthetic_blobs({4, 10, 3, 16, 16, 0.5, 2}).content_hash() != d.content_hash());

  const BlobConfig clean{4, 10, 3, 16, 16, 0.0, 1};
  const auto z = synthetic_blobs(clean);
  std::vector<std::vector<float>> templates;
  for (std::size_t c = 0; c < 4; ++c) templates.push_back(flat(blob_template(clean, c)));
  for (std::size_t i = 0; i < z.size(); ++i) {
    const auto img = flat(sample_at(z, i).image);
    CHECK(img == templates[static_cast<std::size_t>(z.labels[i])]);
    CHECK(oracle::match_template(img, templates) == z.labels[i]);
  }
}

TEST_CASE("template matching separates the default noisy blobs") {
  const BlobConfig cfg{4, 200, 3, 16, 16, 0.5, 3};
  const auto d = synthetic_blobs(cfg);
  std::vector<std::vector<float>> templates;
  for (std::size_t c = 0; c < 4; ++c) templates.push_back(flat(blob_template(cfg, c)));
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    wrong += oracle::match_template(flat(sample_at(d, i).image), templates) != d.labels[i] ? 1 : 0;
  }
  CHECK(wrong == 0);
}

TEST_CASE("batching") {
  const auto d = synthetic_blobs({2, 5, 1, 4, 4, 0.1, 1});
  std::vector<std::size_t> sizes;
  std::vector<int> labels;
  std::vector<std::size_t> order;
  {
    BatchStream s(d, {3, 9, true, std::nullopt, 2}, 0);
    CHECK(s.batch_count() == 4);
    while (auto b = s.next()) {
      sizes.push_back(b->labels.size());
      labels.insert(labels.end(), b->labels.begin(), b->labels.end());
      order.insert(order.end(), b->indices.begin(), b->indices.end());
      CHECK(b->images.extent(0) == b->labels.size());
      for (std::size_t k = 0; k < b->indices.size(); ++k) CHECK(b->labels[k] == d.labels[b->indices[k]]);
    }
  }
  CHECK(sizes == std::vector<std::size_t>{3, 3, 3, 1});
  auto sorted = labels;
  auto expected = d.labels;
  std::ranges::sort(sorted);
  std::ranges::sort(expected);
  CHECK(sorted == expected);
  CHECK(order == epoch_permutation(10, 9, 0));
  CHECK(epoch_permutation(10, 9, 0) == epoch_permutation(10, 9, 0));
  CHECK(epoch_permutation(10, 9, 0) != epoch_permutation(10, 9, 1));
  CHECK(epoch_permutation(10, 9, 0) != epoch_permutation(10, 10, 0));

  BatchStream plain(d, {4, 0, false, std::nullopt, 0}, 3);
  std::vector<std::size_t> seq;
  while (auto b = plain.next()) seq.insert(seq.end(), b->indices.begin(), b->indices.end());
  CHECK(seq == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  CHECK_FALSE(plain.next().has_value());

  CHECK_THROWS_AS(BatchStream(d, {0, 0, true, std::nullopt, 2}, 0), Error);
}

TEST_CASE("prefetching does not change the batches") {
  const auto d = synthetic_blobs({4, 30, 3, 8, 8, 0.5, 2});
  const auto collect = [&](std::size_t prefetch) {
    BatchStream s(d, {16, 4, true, AugmentConfig{true, 2, 1}, prefetch}, 2);
    Fnv1a h;
    while (auto b = s.next()) {
      h.update(std::span<const float>(b->images.data()));
      h.update(std::span<const int>(b->labels));
    }
    return h.digest();
  };
  CHECK(collect(0) == collect(1));
  CHECK(collect(0) == collect(3));

  // abandoning a stream part-way must not hang
  BatchStream s(d, {4, 0, true, std::nullopt, 2}, 0);
  CHECK(s.next().has_value());
}

TEST_CASE("gather and head") {
  const auto d = synthetic_blobs({3, 4, 2, 4, 4, 0.5, 1});
  const std::vector<std::size_t> idx{11, 0, 5};
  const auto b = gather(d, idx);
  CHECK(b.labels == std::vector<int>{d.labels[11], d.labels[0], d.labels[5]});
  CHECK(flat(sample_at(d, 5).image) ==
        std::vector<float>(b.images.data().begin() + 64, b.images.data().begin() + 96));
  const std::vector<std::size_t> oob{12};
  CHECK_THROWS_AS(gather(d, oob), Error);
  CHECK(d.head(5).size() == 5);
  CHECK(d.head(100).size() == 12);
}
