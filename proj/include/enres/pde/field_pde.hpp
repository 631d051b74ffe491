#pragma once
/*
 * Terminal-value convection-diffusion on the periodic unit square.
 *
 *   u_t + F(x) . grad u + 1/2 sigma^2 Lap u = 0,   t in [0, 1),   u(x, 1) = f(x)
 *
 * is solved backwards by the substitution tau = 1 - t, which gives the
 * well-posed forward problem v_tau = F . grad v + 1/2 sigma^2 Lap v with
 * v(., 0) = f, and u(., 0) = v(., 1). Derivatives are taken in Fourier space,
 * diffusion is integrated exactly with an integrating factor and the
 * convection term is advanced with explicit RK2 (Heun).
 *
 * The regularity probes (grad_sup_norm, modulus_of_continuity) work directly
 * on grid samples with periodic indexing.
 */

#include <cstdint>
#include <span>
#include <vector>

namespace enres::pde {

/// Uniform periodic grid on [0,1]^2 with n nodes per side, node (i,j) at (i/n, j/n).
class Grid2D {
 public:
  /// Throws ParameterError unless n >= 8 and n is a power of two.
  explicit Grid2D(int n);

  int n() const noexcept { return n_; }
  double spacing() const noexcept { return 1.0 / n_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(n_) * n_; }
  /// Row-major linear index with periodic wrap on both axes.
  std::size_t index(long i, long j) const noexcept;

  friend bool operator==(const Grid2D&, const Grid2D&) = default;

 private:
  int n_;
};

/// n x n samples; row i is the fixed-x line x = i*h.
class ScalarField2D {
 public:
  explicit ScalarField2D(Grid2D grid, double fill = 0.0);
  ScalarField2D(Grid2D grid, std::vector<double> values);

  const Grid2D& grid() const noexcept { return grid_; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }

  double at(long i, long j) const noexcept { return values_[grid_.index(i, j)]; }
  double& at(long i, long j) noexcept { return values_[grid_.index(i, j)]; }

  /// Bilinear interpolation with periodic wrap at an arbitrary point.
  double interpolate(double x, double y) const noexcept;

  double sup_norm() const noexcept;
  double mean() const noexcept;

  /// Builds a field from a function of the node coordinates.
  template <class Fn>
  static ScalarField2D from_function(Grid2D grid, Fn&& fn) {
    ScalarField2D f(grid);
    const double h = grid.spacing();
    for (int i = 0; i < grid.n(); ++i)
      for (int j = 0; j < grid.n(); ++j) f.at(i, j) = fn(i * h, j * h);
    return f;
  }

 private:
  Grid2D grid_;
  std::vector<double> values_;
};

/// Two-component, time-constant velocity sampled at grid nodes.
struct VelocityField {
  explicit VelocityField(Grid2D g) : vx(g), vy(g) {}
  VelocityField(ScalarField2D x, ScalarField2D y);

  static VelocityField constant(Grid2D g, double cx, double cy);

  const Grid2D& grid() const noexcept { return vx.grid(); }
  bool is_zero() const noexcept;

  ScalarField2D vx;
  ScalarField2D vy;
};

struct DiffusionConfig {
  double sigma = 0.0;
  double dt = 1e-3;
  double t_final = 1.0;
  bool dealias = true;

  /// Throws ParameterError on sigma < 0, dt outside (0, 1] or t_final < 0.
  void validate() const;
  /// Steps of size dt covering t_final; the last one is shortened if needed.
  long step_count() const;
};

VelocityField sample_random_velocity(const Grid2D& grid, std::uint64_t seed);

/// Uniform [-1,1] node noise, low-pass filtered to max(|kx|,|ky|) <= cutoff.
ScalarField2D sample_random_terminal(const Grid2D& grid, std::uint64_t seed, int cutoff);

/// Returns u(., 0) for terminal data u(., 1) = terminal.
ScalarField2D solve_convection_diffusion(const ScalarField2D& terminal, const VelocityField& velocity,
                                         const DiffusionConfig& cfg);

/// Samples the periodic bilinear interpolant of `field` on a grid `factor`
/// times finer; nodes shared with the coarse grid keep their values.
ScalarField2D refine_bilinear(const ScalarField2D& field, int factor);

/// Max over nodes of the Euclidean norm of the periodic centered-difference gradient.
double grad_sup_norm(const ScalarField2D& field);

struct GradientBoundCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
};

/// Evolves u0 one time unit under pure diffusion and compares
/// |grad u(1)|_inf against exp(-sigma^2) (|u0|_inf + |grad u0|_inf).
GradientBoundCheck verify_gradient_bound(const ScalarField2D& u0, double sigma, const DiffusionConfig& cfg);
/// Same, but rejects a nonzero velocity with UnsupportedError.
GradientBoundCheck verify_gradient_bound(const ScalarField2D& u0, const VelocityField& velocity, double sigma,
                                         const DiffusionConfig& cfg);

/// max |f(x + d) - f(x)| over nodes x and node offsets with |d|_inf <= radius_nodes * h.
double modulus_of_continuity(const ScalarField2D& field, int radius_nodes);

}  // namespace enres::pde
