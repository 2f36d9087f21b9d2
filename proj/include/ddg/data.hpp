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

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ddg/classifier.hpp"
#include "ddg/guidance.hpp"
#include "ddg/tensor.hpp"

namespace ddg {

enum class Split { kTrain, kHoldout, kTest };
std::string to_string(Split split);

/// Images in [0,1], CHW row-major, each with a stable example id.
struct IndexedDataset {
  InputShape shape{};
  int num_classes = 0;
  Split split = Split::kTrain;
  std::vector<float> images;
  std::vector<int> labels;
  std::vector<std::int64_t> ids;

  std::size_t size() const { return labels.size(); }
  std::span<const float> image(std::size_t i) const { return {images.data() + i * shape.size(), shape.size()}; }
  /// Pixel range, label range, id uniqueness and buffer sizes. Throws ValidationError.
  void validate() const;
};

inline constexpr std::size_t kCifarRecordBytes = 3073;
inline constexpr std::size_t kCifarRecordsPerFile = 10000;

/// Reads CIFAR-10 binary batches (data_batch_1..5.bin or test_batch.bin).
/// `limit` keeps a class-balanced prefix: the first limit/L examples of each
/// class in file order, the remainder spread over the lowest class ids.
IndexedDataset load_cifar10(const std::filesystem::path& dir, Split split = Split::kTrain,
                            std::optional<std::size_t> limit = std::nullopt);

enum class Geometry { kGaussianBlobs, kLinearMargin };
Geometry parse_geometry(const std::string& name);
std::string to_string(Geometry g);

struct SyntheticOptions {
  std::size_t size = 256;
  int num_classes = 10;
  Geometry geometry = Geometry::kGaussianBlobs;
  std::uint64_t seed = 0;
  InputShape shape{3, 16, 16};
  /// linear_margin: l-inf distance of every sample to the reference decision boundary.
  double margin = 0.1;
  /// linear_margin: extra uniform offset in [0, jitter] pushed away from the boundary.
  double jitter = 0.02;
  /// gaussian_blobs: per-pixel noise around the class mean.
  double sigma = 0.15;
};

/// Labels cycle through the classes (sample i has label i mod L), so B = L
/// gives one example per class.
IndexedDataset make_synthetic(const SyntheticOptions& options);

/// Reference linear classifier for linear_margin data: class c scores the
/// mean of its own pixel block. Returns an L x D weight matrix (bias 0).
Matrix linear_margin_weights(InputShape shape, int num_classes);
/// Pixel block owned by class c in linear_margin data.
int linear_margin_block(std::size_t pixel, std::size_t num_pixels, int num_classes);

/// Splits off a deterministic `fraction` of examples as the holdout split.
std::pair<IndexedDataset, IndexedDataset> split_holdout(const IndexedDataset& data, double fraction,
                                                        std::uint64_t seed);
IndexedDataset subset(const IndexedDataset& data, std::span<const std::size_t> rows);

struct Batch {
  std::vector<std::size_t> rows;
  std::vector<std::int64_t> ids;
  Tensor<float> images;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

Batch make_batch(const IndexedDataset& data, std::span<const std::size_t> rows);

/// Single pass over a dataset. Every example appears exactly once; the
/// order depends only on `seed`; the last batch may be short.
class BatchIterator {
 public:
  BatchIterator(const IndexedDataset& data, std::size_t batch_size, bool shuffle, std::uint64_t seed);

  bool next(Batch& batch);
  std::size_t num_batches() const;
  const std::vector<std::size_t>& order() const { return order_; }

 private:
  const IndexedDataset* data_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

/// Random 4-pixel-padded crop plus horizontal flip, per image, in place.
void augment_batch(Tensor<float>& images, std::mt19937_64& rng, std::size_t pad = 4);

/// Portable fixture container: "DDGDATA1", u32 C,H,W,L, u64 N, then N int32
/// labels, N int64 ids and N*C*H*W float32 pixels, all little-endian.
void save_dataset(const std::filesystem::path& path, const IndexedDataset& data);
IndexedDataset load_dataset(const std::filesystem::path& path);

}  // namespace ddg
