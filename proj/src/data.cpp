/*
 * Copyright 2026 The DDG Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "ddg/data.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <numeric>
#include <unordered_set>

#include "ddg/errors.hpp"

namespace ddg {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kHoldout: return "holdout";
    case Split::kTest: return "test";
  }
  return "unknown";
}

void IndexedDataset::validate() const {
  const std::size_t n = labels.size();
  if (ids.size() != n) throw ValidationError("dataset: ids and labels differ in length");
  if (images.size() != n * shape.size()) {
    throw ValidationError("dataset: pixel buffer holds " + std::to_string(images.size()) + " values, expected " +
                          std::to_string(n * shape.size()));
  }
  if (num_classes < 2) throw ValidationError("dataset: needs at least 2 classes");
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw ValidationError("dataset: example " + std::to_string(ids[i]) + " has label " + std::to_string(labels[i]) +
                            " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
  for (std::size_t k = 0; k < images.size(); ++k) {
    if (!(images[k] >= 0.0f && images[k] <= 1.0f)) {
      throw ValidationError("dataset: pixel " + std::to_string(k % shape.size()) + " of example " +
                            std::to_string(ids[k / shape.size()]) + " lies outside [0,1]");
    }
  }
  std::unordered_set<std::int64_t> seen(ids.begin(), ids.end());
  if (seen.size() != n) throw ValidationError("dataset: example ids are not unique");
}

namespace {

std::vector<std::filesystem::path> cifar_files(const std::filesystem::path& dir, Split split) {
  std::vector<std::filesystem::path> files;
  if (split == Split::kTest) {
    files.push_back(dir / "test_batch.bin");
  } else {
    for (int b = 1; b <= 5; ++b) files.push_back(dir / ("data_batch_" + std::to_string(b) + ".bin"));
  }
  return files;
}

}  // namespace

IndexedDataset load_cifar10(const std::filesystem::path& dir, Split split, std::optional<std::size_t> limit) {
  constexpr int kClasses = 10;
  constexpr std::size_t kPixels = 3 * 32 * 32;
  IndexedDataset out;
  out.shape = {3, 32, 32};
  out.num_classes = kClasses;
  out.split = split;

  std::array<std::size_t, kClasses> quota{};
  if (limit) {
    for (int c = 0; c < kClasses; ++c) quota[c] = *limit / kClasses + (static_cast<std::size_t>(c) < *limit % kClasses);
  }
  std::array<std::size_t, kClasses> taken{};

  std::int64_t next_id = 0;
  std::vector<unsigned char> record(kCifarRecordBytes);
  for (const auto& file : cifar_files(dir, split)) {
    if (limit && out.size() == *limit) break;
    std::error_code ec;
    const auto bytes = std::filesystem::file_size(file, ec);
    if (ec) throw IngestionError("cannot read CIFAR-10 file " + file.string() + ": " + ec.message());
    if (bytes % kCifarRecordBytes != 0) {
      throw IngestionError("CIFAR-10 file " + file.string() + " is " + std::to_string(bytes) +
                           " bytes, not a whole number of " + std::to_string(kCifarRecordBytes) + "-byte records");
    }
    if (bytes != kCifarRecordBytes * kCifarRecordsPerFile) {
      std::cerr << "warning: " << file.string() << " holds " << bytes / kCifarRecordBytes << " records, expected "
                << kCifarRecordsPerFile << "\n";
    }
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IngestionError("cannot open CIFAR-10 file " + file.string());
    const std::size_t records = bytes / kCifarRecordBytes;
    for (std::size_t r = 0; r < records; ++r, ++next_id) {
      if (!in.read(reinterpret_cast<char*>(record.data()), kCifarRecordBytes)) {
        throw IngestionError("short read in CIFAR-10 file " + file.string() + " at record " + std::to_string(r));
      }
      const int label = record[0];
      if (label >= kClasses) {
        throw IngestionError("CIFAR-10 file " + file.string() + " record " + std::to_string(r) + " has label " +
                             std::to_string(label));
      }
      if (limit && taken[label] >= quota[label]) continue;
      ++taken[label];
      out.labels.push_back(label);
      out.ids.push_back(next_id);
      for (std::size_t k = 0; k < kPixels; ++k) out.images.push_back(static_cast<float>(record[1 + k]) / 255.0f);
      if (limit && out.size() == *limit) break;
    }
  }
  if (limit && out.size() < *limit) {
    std::cerr << "warning: requested " << *limit << " CIFAR-10 examples, found a balanced subset of " << out.size()
              << "\n";
  }
  return out;
}

Geometry parse_geometry(const std::string& name) {
  if (name == "gaussian_blobs") return Geometry::kGaussianBlobs;
  if (name == "linear_margin") return Geometry::kLinearMargin;
  throw ConfigError("unknown synthetic geometry '" + name + "' (expected gaussian_blobs or linear_margin)");
}

std::string to_string(Geometry g) { return g == Geometry::kGaussianBlobs ? "gaussian_blobs" : "linear_margin"; }

int linear_margin_block(std::size_t pixel, std::size_t num_pixels, int num_classes) {
  return static_cast<int>(pixel * static_cast<std::size_t>(num_classes) / num_pixels);
}

Matrix linear_margin_weights(InputShape shape, int num_classes) {
  const std::size_t d = shape.size();
  if (d < static_cast<std::size_t>(num_classes)) {
    throw ValidationError("linear_margin needs at least one pixel per class");
  }
  std::vector<std::size_t> block_size(num_classes, 0);
  for (std::size_t j = 0; j < d; ++j) ++block_size[linear_margin_block(j, d, num_classes)];
  Matrix w(num_classes, d);
  for (std::size_t j = 0; j < d; ++j) {
    const int c = linear_margin_block(j, d, num_classes);
    w(c, j) = 1.0 / static_cast<double>(block_size[c]);
  }
  return w;
}

IndexedDataset make_synthetic(const SyntheticOptions& o) {
  if (o.num_classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
  if (o.shape.size() == 0) throw ConfigError("synthetic data needs a non-empty image shape");
  IndexedDataset out;
  out.shape = o.shape;
  out.num_classes = o.num_classes;
  const std::size_t d = o.shape.size();
  out.images.resize(o.size * d);
  std::mt19937_64 rng(o.seed);

  if (o.geometry == Geometry::kLinearMargin) {
    if (d < static_cast<std::size_t>(o.num_classes)) throw ConfigError("linear_margin needs at least one pixel per class");
    if (o.margin <= 0.0 || o.jitter < 0.0 || 0.5 + o.margin + o.jitter > 1.0) {
      throw ConfigError("linear_margin needs margin > 0, jitter >= 0 and margin + jitter <= 0.5");
    }
    std::uniform_real_distribution<double> offset(0.0, o.jitter);
    for (std::size_t i = 0; i < o.size; ++i) {
      const int y = static_cast<int>(i % o.num_classes);
      for (std::size_t j = 0; j < d; ++j) {
        const double push = o.margin + offset(rng);
        const double v = linear_margin_block(j, d, o.num_classes) == y ? 0.5 + push : 0.5 - push;
        out.images[i * d + j] = static_cast<float>(v);
      }
    }
  } else {
    std::uniform_real_distribution<double> centre(0.25, 0.75);
    std::normal_distribution<double> noise(0.0, o.sigma);
    std::vector<double> means(static_cast<std::size_t>(o.num_classes) * d);
    for (auto& m : means) m = centre(rng);
    for (std::size_t i = 0; i < o.size; ++i) {
      const std::size_t y = i % o.num_classes;
      for (std::size_t j = 0; j < d; ++j) {
        out.images[i * d + j] = static_cast<float>(std::clamp(means[y * d + j] + noise(rng), 0.0, 1.0));
      }
    }
  }
  for (std::size_t i = 0; i < o.size; ++i) {
    out.labels.push_back(static_cast<int>(i % o.num_classes));
    out.ids.push_back(static_cast<std::int64_t>(i));
  }
  return out;
}

IndexedDataset subset(const IndexedDataset& data, std::span<const std::size_t> rows) {
  IndexedDataset out;
  out.shape = data.shape;
  out.num_classes = data.num_classes;
  out.split = data.split;
  const std::size_t d = data.shape.size();
  out.images.reserve(rows.size() * d);
  for (std::size_t r : rows) {
    if (r >= data.size()) throw ValidationError("subset: row " + std::to_string(r) + " out of range");
    const auto img = data.image(r);
    out.images.insert(out.images.end(), img.begin(), img.end());
    out.labels.push_back(data.labels[r]);
    out.ids.push_back(data.ids[r]);
  }
  return out;
}

std::pair<IndexedDataset, IndexedDataset> split_holdout(const IndexedDataset& data, double fraction,
                                                        std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ConfigError("holdout fraction must lie in [0, 1)");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_hold = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(data.size())));
  std::vector<std::size_t> hold(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_hold));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_hold), order.end());
  std::sort(hold.begin(), hold.end());
  std::sort(train.begin(), train.end());
  auto t = subset(data, train);
  auto h = subset(data, hold);
  t.split = Split::kTrain;
  h.split = Split::kHoldout;
  return {std::move(t), std::move(h)};
}

Batch make_batch(const IndexedDataset& data, std::span<const std::size_t> rows) {
  Batch b;
  const std::size_t d = data.shape.size();
  b.images = Tensor<float>({rows.size(), data.shape.channels, data.shape.height, data.shape.width});
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const std::size_t r = rows[k];
    b.rows.push_back(r);
    b.ids.push_back(data.ids.at(r));
    b.labels.push_back(data.labels[r]);
    std::copy_n(data.images.begin() + static_cast<std::ptrdiff_t>(r * d), d, b.images.data() + k * d);
  }
  return b;
}

BatchIterator::BatchIterator(const IndexedDataset& data, std::size_t batch_size, bool shuffle, std::uint64_t seed)
    : data_(&data), batch_size_(batch_size), order_(data.size()) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (shuffle) {
    std::mt19937_64 rng(seed);
    std::shuffle(order_.begin(), order_.end(), rng);
  }
}

bool BatchIterator::next(Batch& batch) {
  if (cursor_ >= order_.size()) return false;
  const std::size_t n = std::min(batch_size_, order_.size() - cursor_);
  batch = make_batch(*data_, std::span<const std::size_t>(order_).subspan(cursor_, n));
  cursor_ += n;
  return true;
}

std::size_t BatchIterator::num_batches() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

void augment_batch(Tensor<float>& images, std::mt19937_64& rng, std::size_t pad) {
  if (images.rank() != 4) throw ValidationError("augment_batch expects B x C x H x W");
  const std::size_t b = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  std::uniform_int_distribution<std::size_t> shift(0, 2 * pad);
  std::bernoulli_distribution flip(0.5);
  std::vector<float> src(c * h * w);
  for (std::size_t n = 0; n < b; ++n) {
    auto img = images.slice(n);
    std::copy(img.begin(), img.end(), src.begin());
    const auto dy = static_cast<std::ptrdiff_t>(shift(rng)) - static_cast<std::ptrdiff_t>(pad);
    const auto dx = static_cast<std::ptrdiff_t>(shift(rng)) - static_cast<std::ptrdiff_t>(pad);
    const bool mirror = flip(rng);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const auto sy = static_cast<std::ptrdiff_t>(y) + dy;
          const std::size_t xo = mirror ? w - 1 - x : x;
          const auto sx = static_cast<std::ptrdiff_t>(xo) + dx;
          float v = 0.0f;
          if (sy >= 0 && sx >= 0 && sy < static_cast<std::ptrdiff_t>(h) && sx < static_cast<std::ptrdiff_t>(w)) {
            v = src[(ch * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)];
          }
          img[(ch * h + y) * w + x] = v;
        }
      }
    }
  }
}

namespace {

constexpr char kDataMagic[8] = {'D', 'D', 'G', 'D', 'A', 'T', 'A', '1'};

template <typename V>
void put(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::istream& in, const std::filesystem::path& path) {
  V v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(V))) throw IngestionError("truncated dataset file " + path.string());
  return v;
}

}  // namespace

void save_dataset(const std::filesystem::path& path, const IndexedDataset& data) {
  data.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write dataset file " + path.string());
  out.write(kDataMagic, sizeof(kDataMagic));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(data.shape.channels));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(data.shape.height));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(data.shape.width));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(data.num_classes));
  put<std::uint64_t>(out, data.size());
  for (int l : data.labels) put<std::int32_t>(out, l);
  for (auto id : data.ids) put<std::int64_t>(out, id);
  out.write(reinterpret_cast<const char*>(data.images.data()),
            static_cast<std::streamsize>(data.images.size() * sizeof(float)));
  if (!out) throw IngestionError("failed writing dataset file " + path.string());
}

IndexedDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open dataset file " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kDataMagic, sizeof(magic)) != 0) {
    throw IngestionError(path.string() + " is not a dataset file");
  }
  IndexedDataset d;
  d.shape.channels = get<std::uint32_t>(in, path);
  d.shape.height = get<std::uint32_t>(in, path);
  d.shape.width = get<std::uint32_t>(in, path);
  d.num_classes = static_cast<int>(get<std::uint32_t>(in, path));
  const auto n = get<std::uint64_t>(in, path);
  d.labels.resize(n);
  d.ids.resize(n);
  for (auto& l : d.labels) l = get<std::int32_t>(in, path);
  for (auto& id : d.ids) id = get<std::int64_t>(in, path);
  d.images.resize(n * d.shape.size());
  if (!in.read(reinterpret_cast<char*>(d.images.data()), static_cast<std::streamsize>(d.images.size() * sizeof(float)))) {
    throw IngestionError("truncated dataset file " + path.string());
  }
  try {
    d.validate();
  } catch (const ValidationError& e) {
    throw IngestionError(path.string() + ": " + e.what());
  }
  return d;
}

}  // namespace ddg
