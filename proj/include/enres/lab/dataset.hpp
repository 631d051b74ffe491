#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "enres/ad/tensor.hpp"

namespace enres::lab {

using ad::Tensor;

enum class DataSource { synthetic_moons, synthetic_spiral, cifar10_binary };

std::string to_string(DataSource source);
/// Accepts synthetic-moons, synthetic-spiral, cifar10-binary.
DataSource parse_data_source(const std::string& name);

struct DatasetSpec {
  DataSource source = DataSource::synthetic_moons;
  std::size_t n_train = 900;
  std::size_t n_val = 100;
  std::size_t n_test = 1000;
  std::uint64_t seed = 0;

  // Synthetic tasks: two geometric coordinates followed by `texture_features`
  // weakly informative coordinates 0.5 +- texture_shift + N(0, texture_noise^2),
  // laid out as a [2 + texture_features, 1, 1] image.
  std::size_t classes = 2;  // spiral arms; moons is always 2
  double geometry_noise = 0.3;
  std::size_t texture_features = 32;
  double texture_shift = 0.0157;
  double texture_noise = 0.03;

  // cifar10-binary: training batches, optional test batch, integer
  // downscale factor (box average) and optional record cap per file.
  std::vector<std::filesystem::path> train_files;
  std::filesystem::path test_file;
  std::size_t downscale = 1;
  std::size_t max_records = 0;  // 0: all

  void validate() const;
};

struct Split {
  Tensor x;                          // [N, C, H, W], values in [0, 1]
  std::vector<int> y;                // labels in [0, classes)
  std::vector<std::size_t> source;   // index of each example in the generated pool (may be empty)

  std::size_t size() const { return y.size(); }
  /// Rows `idx` as a new split (no graph).
  Split subset(const std::vector<std::size_t>& idx) const;
};

struct Dataset {
  Split train, val, test;
  std::size_t classes = 2;
  /// False for flat-feature data, where augmentation is disabled.
  bool image_shaped = false;
};

Dataset load_dataset(const DatasetSpec& spec);

/// Uniformly random permutation of 0..n-1, deterministic per key.
std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t key);

/// Raw CIFAR-10 binary records (1 label byte + 3072 pixel bytes each).
/// Throws FormatError naming the byte offset of a truncated record or of a
/// label byte >= 10.
Split read_cifar10_binary(const std::filesystem::path& file, std::size_t max_records = 0);

/// Random horizontal flip (p = 0.5) and random crop after 4-pixel zero
/// padding, decided per example from `key`. Shape is preserved. Images with
/// H = W = 1 are returned unchanged.
Tensor augment(const Tensor& batch, std::uint64_t key);

/// In-place horizontal mirror of one [C,H,W] image.
void flip_horizontal(std::span<double> image, std::size_t channels, std::size_t h, std::size_t w);
/// Window at (oy, ox) of the image zero-padded by `pad`; (pad, pad) is the identity.
std::vector<double> crop_padded(std::span<const double> image, std::size_t channels, std::size_t h, std::size_t w,
                                std::size_t pad, std::size_t oy, std::size_t ox);

}  // namespace enres::lab
