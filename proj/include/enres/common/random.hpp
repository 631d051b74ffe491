#pragma once

#include <cstdint>
#include <initializer_list>

namespace enres {

/// SplitMix64 finalizer; a bijective 64-bit mixer.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Derives a child key from a parent key and a list of integer labels
/// (path index, step, member, layer, ...). Order of labels matters.
std::uint64_t derive_key(std::uint64_t parent, std::initializer_list<std::uint64_t> labels) noexcept;

/// Counter-based random stream: the i-th draw is a pure function of
/// (key, i), so streams with distinct keys can be consumed in any order
/// or on any thread without changing results.
class KeyedStream {
 public:
  explicit KeyedStream(std::uint64_t key) noexcept : key_(key) {}

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept;
  /// Uniform on the open interval (0, 1).
  double uniform() noexcept;
  /// Uniform on [lo, hi].
  double uniform(double lo, double hi) noexcept;
  /// Standard normal via Box-Muller; pairs are consumed together.
  double normal() noexcept;

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace enres
