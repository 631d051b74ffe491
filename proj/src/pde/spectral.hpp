#pragma once

#include <complex>
#include <span>
#include <vector>

namespace enres::pde::detail {

/// Real-to-complex 2D transform pair on an n x n periodic grid backed by
/// FFTW. Spectral arrays are n x (n/2+1), row index = kx, column = ky >= 0.
/// The inverse is normalized, so inverse(forward(f)) == f.
class Spectral2D {
 public:
  explicit Spectral2D(int n);
  ~Spectral2D();
  Spectral2D(const Spectral2D&) = delete;
  Spectral2D& operator=(const Spectral2D&) = delete;

  int n() const noexcept { return n_; }
  int half() const noexcept { return n_ / 2 + 1; }
  std::size_t spectral_size() const noexcept { return static_cast<std::size_t>(n_) * half(); }

  void forward(std::span<const double> in, std::span<std::complex<double>> out);
  void inverse(std::span<const std::complex<double>> in, std::span<double> out);

  /// Signed integer wavenumber of row index i (or column index for the full axis).
  int wavenumber(int i) const noexcept { return i <= n_ / 2 ? i : i - n_; }

 private:
  int n_;
  std::vector<double> real_;
  std::vector<std::complex<double>> spec_;
  void* plan_fwd_ = nullptr;
  void* plan_inv_ = nullptr;
};

}  // namespace enres::pde::detail
