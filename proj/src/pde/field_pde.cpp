#include "enres/pde/field_pde.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <string>

#include "enres/common/error.hpp"
#include "enres/common/random.hpp"
#include "spectral.hpp"

namespace enres::pde {

using cplx = std::complex<double>;

Grid2D::Grid2D(int n) : n_(n) {
  if (n < 8 || (n & (n - 1)) != 0) {
    throw ParameterError("grid size must be a power of two >= 8, got " + std::to_string(n));
  }
}

std::size_t Grid2D::index(long i, long j) const noexcept {
  const long n = n_;
  i %= n;
  j %= n;
  if (i < 0) i += n;
  if (j < 0) j += n;
  return static_cast<std::size_t>(i * n + j);
}

ScalarField2D::ScalarField2D(Grid2D grid, double fill) : grid_(grid), values_(grid.size(), fill) {}

ScalarField2D::ScalarField2D(Grid2D grid, std::vector<double> values) : grid_(grid), values_(std::move(values)) {
  if (values_.size() != grid_.size()) {
    throw ParameterError("field has " + std::to_string(values_.size()) + " values, grid needs " +
                         std::to_string(grid_.size()));
  }
}

double ScalarField2D::interpolate(double x, double y) const noexcept {
  const int n = grid_.n();
  const double gx = (x - std::floor(x)) * n;
  const double gy = (y - std::floor(y)) * n;
  const long i0 = static_cast<long>(std::floor(gx));
  const long j0 = static_cast<long>(std::floor(gy));
  const double fx = gx - i0;
  const double fy = gy - j0;
  return (1 - fx) * (1 - fy) * at(i0, j0) + fx * (1 - fy) * at(i0 + 1, j0) + (1 - fx) * fy * at(i0, j0 + 1) +
         fx * fy * at(i0 + 1, j0 + 1);
}

double ScalarField2D::sup_norm() const noexcept {
  double m = 0.0;
  for (double v : values_) m = std::max(m, std::abs(v));
  return m;
}

double ScalarField2D::mean() const noexcept {
  // Neumaier summation keeps the zero-mode check tight for large grids.
  double sum = 0.0, comp = 0.0;
  for (double v : values_) {
    const double t = sum + v;
    comp += std::abs(sum) >= std::abs(v) ? (sum - t) + v : (v - t) + sum;
    sum = t;
  }
  return (sum + comp) / static_cast<double>(values_.size());
}

VelocityField::VelocityField(ScalarField2D x, ScalarField2D y) : vx(std::move(x)), vy(std::move(y)) {
  if (!(vx.grid() == vy.grid())) throw ParameterError("velocity components on different grids");
}

VelocityField VelocityField::constant(Grid2D g, double cx, double cy) {
  return VelocityField(ScalarField2D(g, cx), ScalarField2D(g, cy));
}

bool VelocityField::is_zero() const noexcept {
  auto zero = [](double v) { return v == 0.0; };
  return std::ranges::all_of(vx.values(), zero) && std::ranges::all_of(vy.values(), zero);
}

void DiffusionConfig::validate() const {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ParameterError("sigma must be finite and >= 0");
  if (!(dt > 0.0) || dt > 1.0) throw ParameterError("dt must lie in (0, 1]");
  if (!(t_final >= 0.0) || !std::isfinite(t_final)) throw ParameterError("t_final must be finite and >= 0");
}

long DiffusionConfig::step_count() const {
  const double ratio = t_final / dt;
  const double nearest = std::round(ratio);
  if (std::abs(ratio - nearest) <= 1e-9 * std::max(1.0, ratio)) return static_cast<long>(nearest);
  return static_cast<long>(std::ceil(ratio));
}

VelocityField sample_random_velocity(const Grid2D& grid, std::uint64_t seed) {
  VelocityField v(grid);
  KeyedStream sx(derive_key(seed, {0x76656C, 0}));
  KeyedStream sy(derive_key(seed, {0x76656C, 1}));
  for (double& c : v.vx.values()) c = sx.uniform(-1.0, 1.0);
  for (double& c : v.vy.values()) c = sy.uniform(-1.0, 1.0);
  return v;
}

ScalarField2D sample_random_terminal(const Grid2D& grid, std::uint64_t seed, int cutoff) {
  const int n = grid.n();
  if (cutoff <= 0 || cutoff > n / 2) {
    throw ParameterError("cutoff must lie in (0, n/2], got " + std::to_string(cutoff));
  }
  ScalarField2D f(grid);
  KeyedStream s(derive_key(seed, {0x746572}));
  for (double& c : f.values()) c = s.uniform(-1.0, 1.0);
  if (cutoff == n / 2) return f;

  detail::Spectral2D fft(n);
  std::vector<cplx> spec(fft.spectral_size());
  fft.forward(f.values(), spec);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < fft.half(); ++j) {
      if (std::max(std::abs(fft.wavenumber(i)), j) > cutoff) spec[static_cast<std::size_t>(i) * fft.half() + j] = 0.0;
    }
  }
  fft.inverse(spec, f.values());
  return f;
}

namespace {

/// Forward-in-tau stepper for v_tau = F . grad v + 1/2 sigma^2 Lap v.
class ConvectionDiffusionStepper {
 public:
  ConvectionDiffusionStepper(const VelocityField& velocity, const DiffusionConfig& cfg)
      : velocity_(velocity),
        cfg_(cfg),
        n_(velocity.grid().n()),
        fft_(n_),
        ikx_(fft_.spectral_size()),
        iky_(fft_.spectral_size()),
        k2_(fft_.spectral_size()),
        keep_(fft_.spectral_size(), 1.0),
        gx_(velocity.grid().size()),
        gy_(velocity.grid().size()),
        spec_tmp_(fft_.spectral_size()),
        advect_(!velocity.is_zero()) {
    const double two_pi = 2.0 * std::numbers::pi;
    const int dealias_max = n_ / 3;
    for (int i = 0; i < n_; ++i) {
      for (int j = 0; j < fft_.half(); ++j) {
        const std::size_t s = static_cast<std::size_t>(i) * fft_.half() + j;
        const int kx = fft_.wavenumber(i);
        const int ky = j;
        // The Nyquist mode has no well-defined odd derivative on a real grid.
        const double dkx = (i == n_ / 2) ? 0.0 : two_pi * kx;
        const double dky = (j == n_ / 2) ? 0.0 : two_pi * ky;
        ikx_[s] = cplx(0.0, dkx);
        iky_[s] = cplx(0.0, dky);
        k2_[s] = two_pi * two_pi * (static_cast<double>(kx) * kx + static_cast<double>(ky) * ky);
        if (cfg.dealias && (std::abs(kx) > dealias_max || ky > dealias_max)) keep_[s] = 0.0;
      }
    }
  }

  void run(std::vector<cplx>& v) {
    const long steps = cfg_.step_count();
    std::vector<cplx> k1(v.size()), k2(v.size()), stage(v.size());
    std::vector<double> decay_full = decay_factors(cfg_.dt);
    for (long step = 0; step < steps; ++step) {
      const double dt = (step == steps - 1) ? cfg_.t_final - cfg_.dt * static_cast<double>(steps - 1) : cfg_.dt;
      const std::vector<double> decay_last = (dt != cfg_.dt) ? decay_factors(dt) : std::vector<double>{};
      const std::vector<double>& decay = decay_last.empty() ? decay_full : decay_last;

      if (!advect_) {
        for (std::size_t s = 0; s < v.size(); ++s) v[s] *= decay[s];
      } else {
        // Integrating-factor Heun: the exact diffusion factor multiplies the
        // state and the first-stage tendency; the second stage sits at tau+dt.
        tendency(v, k1);
        for (std::size_t s = 0; s < v.size(); ++s) stage[s] = decay[s] * (v[s] + dt * k1[s]);
        tendency(stage, k2);
        for (std::size_t s = 0; s < v.size(); ++s) v[s] = decay[s] * (v[s] + 0.5 * dt * k1[s]) + 0.5 * dt * k2[s];
      }
      for (const cplx& c : v) {
        if (!std::isfinite(c.real()) || !std::isfinite(c.imag())) {
          throw DivergenceError("convection-diffusion solve diverged at step " + std::to_string(step), step);
        }
      }
    }
  }

  detail::Spectral2D& fft() { return fft_; }

 private:
  std::vector<double> decay_factors(double dt) const {
    std::vector<double> d(k2_.size());
    const double nu = 0.5 * cfg_.sigma * cfg_.sigma;
    for (std::size_t s = 0; s < d.size(); ++s) d[s] = std::exp(-nu * k2_[s] * dt);
    return d;
  }

  /// out = P(F . grad v), P the dealiasing projector.
  void tendency(const std::vector<cplx>& v, std::vector<cplx>& out) {
    for (std::size_t s = 0; s < v.size(); ++s) spec_tmp_[s] = ikx_[s] * v[s];
    fft_.inverse(spec_tmp_, gx_);
    for (std::size_t s = 0; s < v.size(); ++s) spec_tmp_[s] = iky_[s] * v[s];
    fft_.inverse(spec_tmp_, gy_);
    const auto vx = velocity_.vx.values();
    const auto vy = velocity_.vy.values();
    for (std::size_t p = 0; p < gx_.size(); ++p) gx_[p] = vx[p] * gx_[p] + vy[p] * gy_[p];
    fft_.forward(gx_, out);
    for (std::size_t s = 0; s < out.size(); ++s) out[s] *= keep_[s];
  }

  const VelocityField& velocity_;
  DiffusionConfig cfg_;
  int n_;
  detail::Spectral2D fft_;
  std::vector<cplx> ikx_, iky_;
  std::vector<double> k2_, keep_;
  std::vector<double> gx_, gy_;
  std::vector<cplx> spec_tmp_;
  bool advect_;
};

ScalarField2D evolve(const ScalarField2D& initial, const VelocityField& velocity, const DiffusionConfig& cfg) {
  cfg.validate();
  if (!(initial.grid() == velocity.grid())) {
    throw ParameterError("terminal field and velocity are on different grids");
  }
  for (double v : initial.values()) {
    if (!std::isfinite(v)) throw ParameterError("terminal field contains non-finite values");
  }
  ConvectionDiffusionStepper stepper(velocity, cfg);
  std::vector<cplx> spec(stepper.fft().spectral_size());
  stepper.fft().forward(initial.values(), spec);
  stepper.run(spec);
  ScalarField2D out(initial.grid());
  stepper.fft().inverse(spec, out.values());
  return out;
}

}  // namespace

ScalarField2D solve_convection_diffusion(const ScalarField2D& terminal, const VelocityField& velocity,
                                         const DiffusionConfig& cfg) {
  return evolve(terminal, velocity, cfg);
}

ScalarField2D refine_bilinear(const ScalarField2D& field, int factor) {
  if (factor < 1) throw ParameterError("refinement factor must be >= 1, got " + std::to_string(factor));
  if (factor == 1) return field;
  const Grid2D fine(field.grid().n() * factor);
  const double h = fine.spacing();
  ScalarField2D out(fine);
  for (int i = 0; i < fine.n(); ++i)
    for (int j = 0; j < fine.n(); ++j) out.at(i, j) = field.interpolate(i * h, j * h);
  return out;
}

double grad_sup_norm(const ScalarField2D& field) {
  const int n = field.grid().n();
  const double inv_2h = 0.5 * n;
  double best = 0.0;
  for (long i = 0; i < n; ++i) {
    for (long j = 0; j < n; ++j) {
      const double dx = (field.at(i + 1, j) - field.at(i - 1, j)) * inv_2h;
      const double dy = (field.at(i, j + 1) - field.at(i, j - 1)) * inv_2h;
      best = std::max(best, std::hypot(dx, dy));
    }
  }
  return best;
}

GradientBoundCheck verify_gradient_bound(const ScalarField2D& u0, double sigma, const DiffusionConfig& cfg) {
  DiffusionConfig diffusion = cfg;
  diffusion.sigma = sigma;
  diffusion.t_final = 1.0;
  const ScalarField2D u1 = evolve(u0, VelocityField(u0.grid()), diffusion);
  GradientBoundCheck check;
  check.lhs = grad_sup_norm(u1);
  check.rhs = std::exp(-sigma * sigma) * (u0.sup_norm() + grad_sup_norm(u0));
  check.holds = check.lhs <= check.rhs + 1e-8;
  return check;
}

GradientBoundCheck verify_gradient_bound(const ScalarField2D& u0, const VelocityField& velocity, double sigma,
                                         const DiffusionConfig& cfg) {
  if (!velocity.is_zero()) {
    throw UnsupportedError("gradient bound check needs zero velocity; estimating gamma is not supported");
  }
  return verify_gradient_bound(u0, sigma, cfg);
}

double modulus_of_continuity(const ScalarField2D& field, int radius_nodes) {
  const int n = field.grid().n();
  if (radius_nodes < 1 || radius_nodes > n / 4) {
    throw ParameterError("radius must lie in [1, n/4], got " + std::to_string(radius_nodes));
  }
  double best = 0.0;
  for (long i = 0; i < n; ++i) {
    for (long j = 0; j < n; ++j) {
      const double base = field.at(i, j);
      for (long di = -radius_nodes; di <= radius_nodes; ++di)
        for (long dj = -radius_nodes; dj <= radius_nodes; ++dj)
          best = std::max(best, std::abs(field.at(i + di, j + dj) - base));
    }
  }
  return best;
}

}  // namespace enres::pde
