#include "spectral.hpp"

#include <fftw3.h>

#include <algorithm>

namespace enres::pde::detail {

Spectral2D::Spectral2D(int n) : n_(n), real_(static_cast<std::size_t>(n) * n), spec_(static_cast<std::size_t>(n) * (n / 2 + 1)) {
  auto* spec = reinterpret_cast<fftw_complex*>(spec_.data());
  // FFTW_ESTIMATE never touches the arrays during planning and gives a
  // fixed algorithm choice, which keeps results reproducible run to run.
  plan_fwd_ = fftw_plan_dft_r2c_2d(n, n, real_.data(), spec, FFTW_ESTIMATE);
  plan_inv_ = fftw_plan_dft_c2r_2d(n, n, spec, real_.data(), FFTW_ESTIMATE);
}

Spectral2D::~Spectral2D() {
  fftw_destroy_plan(static_cast<fftw_plan>(plan_fwd_));
  fftw_destroy_plan(static_cast<fftw_plan>(plan_inv_));
}

void Spectral2D::forward(std::span<const double> in, std::span<std::complex<double>> out) {
  std::copy(in.begin(), in.end(), real_.begin());
  fftw_execute(static_cast<fftw_plan>(plan_fwd_));
  std::copy(spec_.begin(), spec_.end(), out.begin());
}

void Spectral2D::inverse(std::span<const std::complex<double>> in, std::span<double> out) {
  // c2r destroys its input, so always go through the owned buffer.
  std::copy(in.begin(), in.end(), spec_.begin());
  fftw_execute(static_cast<fftw_plan>(plan_inv_));
  const double scale = 1.0 / (static_cast<double>(n_) * n_);
  std::transform(real_.begin(), real_.end(), out.begin(), [scale](double v) { return v * scale; });
}

}  // namespace enres::pde::detail
