#include "enres/lab/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>

#include "enres/common/error.hpp"
#include "enres/common/random.hpp"

namespace enres::lab {

namespace {

constexpr std::size_t cifar_side = 32;
constexpr std::size_t cifar_pixels = 3 * cifar_side * cifar_side;
constexpr std::size_t cifar_record = 1 + cifar_pixels;
constexpr std::size_t cifar_classes = 10;
constexpr std::size_t crop_pad = 4;

struct Pool {
  std::vector<double> features;  // row-major [n, dim]
  std::vector<int> labels;
  std::size_t dim = 0;
};

std::array<double, 2> moons_point(int label, double noise, KeyedStream& s) {
  const double t = s.uniform(0.0, std::numbers::pi);
  double x = label == 0 ? std::cos(t) : 1.0 - std::cos(t);
  double y = label == 0 ? std::sin(t) : 0.5 - std::sin(t);
  x += noise * s.normal();
  y += noise * s.normal();
  return {std::clamp((x + 1.5) / 4.0, 0.0, 1.0), std::clamp((y + 1.0) / 2.5, 0.0, 1.0)};
}

std::array<double, 2> spiral_point(int label, std::size_t classes, double noise, KeyedStream& s) {
  const double t = s.uniform(0.0, 1.0);
  const double r = 0.1 + 0.9 * t;
  const double phase = 2.0 * std::numbers::pi * label / static_cast<double>(classes) + 3.0 * std::numbers::pi * t;
  const double x = r * std::cos(phase) + noise * s.normal();
  const double y = r * std::sin(phase) + noise * s.normal();
  return {std::clamp((x + 1.3) / 2.6, 0.0, 1.0), std::clamp((y + 1.3) / 2.6, 0.0, 1.0)};
}

Pool synthetic_pool(const DatasetSpec& spec, std::size_t n) {
  const std::size_t classes = spec.source == DataSource::synthetic_moons ? 2 : spec.classes;
  Pool pool;
  pool.dim = 2 + spec.texture_features;
  pool.features.resize(n * pool.dim);
  pool.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    KeyedStream s(derive_key(spec.seed, {0x73796E, i}));
    const int label = static_cast<int>(i % classes);
    const auto p = spec.source == DataSource::synthetic_moons ? moons_point(label, spec.geometry_noise, s)
                                                              : spiral_point(label, classes, spec.geometry_noise, s);
    double* row = pool.features.data() + i * pool.dim;
    row[0] = p[0];
    row[1] = p[1];
    for (std::size_t j = 0; j < spec.texture_features; ++j) {
      const double sign = static_cast<std::size_t>(label) == j % classes ? 1.0 : -1.0;
      row[2 + j] = std::clamp(0.5 + sign * spec.texture_shift + spec.texture_noise * s.normal(), 0.0, 1.0);
    }
    pool.labels[i] = label;
  }
  return pool;
}

Split take(const Pool& pool, const std::vector<std::size_t>& order, std::size_t begin, std::size_t count,
           const ad::Shape& item_shape) {
  Split split;
  std::vector<double> x(count * pool.dim);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t src = order[begin + k];
    std::copy_n(pool.features.begin() + static_cast<long>(src * pool.dim), pool.dim,
                x.begin() + static_cast<long>(k * pool.dim));
    split.y.push_back(pool.labels[src]);
    split.source.push_back(src);
  }
  ad::Shape shape{count};
  shape.insert(shape.end(), item_shape.begin(), item_shape.end());
  split.x = Tensor::from(std::move(shape), std::move(x));
  return split;
}

Pool to_pool(const Split& s) {
  Pool p;
  p.dim = s.size() ? s.x.numel() / s.size() : 0;
  p.features.assign(s.x.values().begin(), s.x.values().end());
  p.labels = s.y;
  return p;
}

Split downscale(const Split& s, std::size_t factor) {
  if (factor == 1) return s;
  const std::size_t N = s.x.dim(0), C = s.x.dim(1), H = s.x.dim(2), W = s.x.dim(3);
  const std::size_t h = H / factor, w = W / factor;
  std::vector<double> out(N * C * h * w, 0.0);
  const double inv = 1.0 / static_cast<double>(factor * factor);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          double acc = 0.0;
          for (std::size_t a = 0; a < factor; ++a)
            for (std::size_t b = 0; b < factor; ++b)
              acc += s.x.values()[((n * C + c) * H + i * factor + a) * W + j * factor + b];
          out[((n * C + c) * h + i) * w + j] = acc * inv;
        }
  Split r = s;
  r.x = Tensor::from({N, C, h, w}, std::move(out));
  return r;
}

}  // namespace

std::string to_string(DataSource source) {
  switch (source) {
    case DataSource::synthetic_moons:
      return "synthetic-moons";
    case DataSource::synthetic_spiral:
      return "synthetic-spiral";
    case DataSource::cifar10_binary:
      return "cifar10-binary";
  }
  return "unknown";
}

DataSource parse_data_source(const std::string& name) {
  if (name == "synthetic-moons") return DataSource::synthetic_moons;
  if (name == "synthetic-spiral") return DataSource::synthetic_spiral;
  if (name == "cifar10-binary") return DataSource::cifar10_binary;
  throw ParameterError("unknown data source '" + name + "'");
}

void DatasetSpec::validate() const {
  if (n_train == 0 || n_val == 0) throw ParameterError("dataset needs non-empty train and validation splits");
  if (source == DataSource::cifar10_binary) {
    if (train_files.empty()) throw ParameterError("cifar10-binary needs at least one training file");
    if (downscale == 0 || cifar_side % downscale != 0) throw ParameterError("downscale must divide 32");
    return;
  }
  if (n_test == 0) throw ParameterError("synthetic dataset needs a non-empty test split");
  if (source == DataSource::synthetic_spiral && classes < 2) throw ParameterError("spiral needs >= 2 classes");
  if (!(geometry_noise >= 0.0) || !(texture_noise >= 0.0) || !(texture_shift >= 0.0)) {
    throw ParameterError("synthetic noise levels and texture shift must be >= 0");
  }
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t key) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  KeyedStream s(key);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[s.next_u64() % i]);
  return idx;
}

Split Split::subset(const std::vector<std::size_t>& idx) const {
  const std::size_t row = size() ? x.numel() / size() : 0;
  Split out;
  std::vector<double> v(idx.size() * row);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    std::copy_n(x.values().begin() + static_cast<long>(idx[k] * row), row, v.begin() + static_cast<long>(k * row));
    out.y.push_back(y[idx[k]]);
    if (!source.empty()) out.source.push_back(source[idx[k]]);
  }
  ad::Shape shape = x.shape();
  shape[0] = idx.size();
  out.x = Tensor::from(std::move(shape), std::move(v));
  return out;
}

Split read_cifar10_binary(const std::filesystem::path& file, std::size_t max_records) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw FormatError("cannot open cifar10 file " + file.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t whole = bytes.size() / cifar_record;
  if (bytes.size() % cifar_record != 0) {
    throw FormatError(file.string() + ": truncated record at byte offset " + std::to_string(whole * cifar_record) +
                      " (file size " + std::to_string(bytes.size()) + " is not a multiple of 3073)");
  }
  const std::size_t n = max_records ? std::min(max_records, whole) : whole;
  Split split;
  std::vector<double> x(n * cifar_pixels);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t offset = r * cifar_record;
    if (bytes[offset] >= cifar_classes) {
      throw FormatError(file.string() + ": label byte " + std::to_string(bytes[offset]) + " at offset " +
                        std::to_string(offset) + " is not in [0,10)");
    }
    split.y.push_back(bytes[offset]);
    split.source.push_back(r);
    for (std::size_t p = 0; p < cifar_pixels; ++p) x[r * cifar_pixels + p] = bytes[offset + 1 + p] / 255.0;
  }
  split.x = Tensor::from({n, 3, cifar_side, cifar_side}, std::move(x));
  return split;
}

Dataset load_dataset(const DatasetSpec& spec) {
  spec.validate();
  Dataset data;
  if (spec.source == DataSource::cifar10_binary) {
    std::vector<Split> parts;
    for (const auto& f : spec.train_files) parts.push_back(downscale(read_cifar10_binary(f, spec.max_records), spec.downscale));
    Pool pool;
    for (const Split& s : parts) {
      const Pool p = to_pool(s);
      pool.dim = p.dim;
      pool.features.insert(pool.features.end(), p.features.begin(), p.features.end());
      pool.labels.insert(pool.labels.end(), p.labels.begin(), p.labels.end());
    }
    const std::size_t n = pool.labels.size();
    if (spec.n_train + spec.n_val > n) {
      throw ParameterError("requested " + std::to_string(spec.n_train + spec.n_val) + " train+val examples but only " +
                           std::to_string(n) + " records are available");
    }
    const ad::Shape item{3, cifar_side / spec.downscale, cifar_side / spec.downscale};
    const auto order = shuffled_indices(n, derive_key(spec.seed, {0x737074}));
    data.train = take(pool, order, 0, spec.n_train, item);
    data.val = take(pool, order, spec.n_train, spec.n_val, item);
    if (!spec.test_file.empty()) {
      Split test = downscale(read_cifar10_binary(spec.test_file, spec.max_records), spec.downscale);
      if (spec.n_test && spec.n_test < test.size()) {
        std::vector<std::size_t> first(spec.n_test);
        for (std::size_t i = 0; i < spec.n_test; ++i) first[i] = i;
        test = test.subset(first);
      }
      // Test records come from a separate file; offset their pool ids.
      for (std::size_t& s : test.source) s += n;
      data.test = std::move(test);
    } else {
      if (spec.n_train + spec.n_val + spec.n_test > n) throw ParameterError("not enough records for a test split");
      data.test = take(pool, order, spec.n_train + spec.n_val, spec.n_test, item);
    }
    data.classes = cifar_classes;
    data.image_shaped = true;
    return data;
  }

  const std::size_t n = spec.n_train + spec.n_val + spec.n_test;
  const Pool pool = synthetic_pool(spec, n);
  const ad::Shape item{pool.dim, 1, 1};
  const auto order = shuffled_indices(n, derive_key(spec.seed, {0x737074}));
  data.train = take(pool, order, 0, spec.n_train, item);
  data.val = take(pool, order, spec.n_train, spec.n_val, item);
  data.test = take(pool, order, spec.n_train + spec.n_val, spec.n_test, item);
  data.classes = spec.source == DataSource::synthetic_moons ? 2 : spec.classes;
  data.image_shaped = false;
  return data;
}

void flip_horizontal(std::span<double> image, std::size_t channels, std::size_t h, std::size_t w) {
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < h; ++i) {
      double* row = image.data() + (c * h + i) * w;
      std::reverse(row, row + w);
    }
}

std::vector<double> crop_padded(std::span<const double> image, std::size_t channels, std::size_t h, std::size_t w,
                                std::size_t pad, std::size_t oy, std::size_t ox) {
  if (oy > 2 * pad || ox > 2 * pad) throw ParameterError("crop offset outside the padded image");
  std::vector<double> out(channels * h * w, 0.0);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < h; ++i) {
      const long si = static_cast<long>(i + oy) - static_cast<long>(pad);
      if (si < 0 || si >= static_cast<long>(h)) continue;
      for (std::size_t j = 0; j < w; ++j) {
        const long sj = static_cast<long>(j + ox) - static_cast<long>(pad);
        if (sj < 0 || sj >= static_cast<long>(w)) continue;
        out[(c * h + i) * w + j] = image[(c * h + static_cast<std::size_t>(si)) * w + static_cast<std::size_t>(sj)];
      }
    }
  return out;
}

Tensor augment(const Tensor& batch, std::uint64_t key) {
  if (batch.rank() != 4) throw ParameterError("augment expects [N,C,H,W], got " + ad::shape_str(batch.shape()));
  const std::size_t N = batch.dim(0), C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
  if (H == 1 && W == 1) return batch.detach();
  const std::size_t item = C * H * W;
  std::vector<double> out(batch.numel());
  for (std::size_t n = 0; n < N; ++n) {
    KeyedStream s(derive_key(key, {n}));
    const bool flip = s.uniform() < 0.5;
    const std::size_t oy = s.next_u64() % (2 * crop_pad + 1);
    const std::size_t ox = s.next_u64() % (2 * crop_pad + 1);
    std::vector<double> img(batch.values().begin() + static_cast<long>(n * item),
                            batch.values().begin() + static_cast<long>((n + 1) * item));
    if (flip) flip_horizontal(img, C, H, W);
    const std::vector<double> cropped = crop_padded(img, C, H, W, crop_pad, oy, ox);
    std::copy(cropped.begin(), cropped.end(), out.begin() + static_cast<long>(n * item));
  }
  return Tensor::from(batch.shape(), std::move(out));
}

}  // namespace enres::lab
