#include "enres/common/random.hpp"

#include <cmath>
#include <numbers>

namespace enres {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
}  // namespace

std::uint64_t mix64(std::uint64_t x) noexcept {
  x += kGolden;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_key(std::uint64_t parent, std::initializer_list<std::uint64_t> labels) noexcept {
  std::uint64_t k = mix64(parent ^ 0x6A09E667F3BCC908ULL);
  for (std::uint64_t label : labels) {
    k = mix64(k ^ mix64(label + 0x3C6EF372FE94F82BULL));
  }
  return k;
}

std::uint64_t KeyedStream::next_u64() noexcept {
  // Two rounds so that nearby keys do not produce shifted copies of each other.
  return mix64(mix64(key_) + (++counter_) * kGolden);
}

double KeyedStream::uniform() noexcept {
  // 53 random mantissa bits, shifted by half an ulp to exclude 0.
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double KeyedStream::uniform(double lo, double hi) noexcept {
  return lo + (hi - lo) * uniform();
}

double KeyedStream::normal() noexcept {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

}  // namespace enres
