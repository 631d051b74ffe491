#pragma once
/*
 * Monte Carlo evaluation of u(x, 0) = E[ f(X(1)) | X(0) = x ] for the Ito
 * process dX = F(X) dt + sigma dB, discretized by Euler-Maruyama on the
 * periodic unit square. Each path draws its Gaussian increments from its own
 * counter-based stream keyed by (seed, path index), so an estimate does not
 * depend on the order in which paths are simulated.
 */

#include <array>
#include <cstdint>
#include <vector>

#include "enres/pde/field_pde.hpp"

namespace enres::fk {

using Point2 = std::array<double, 2>;

struct SDEConfig {
  double sigma = 0.0;
  double dt = 1e-3;
  long n_paths = 1000;
  std::uint64_t seed = 0;

  void validate() const;
  long step_count() const;
};

struct MCEstimate {
  double mean = 0.0;
  /// Sample standard deviation / sqrt(n_paths); 0 when n_paths == 1.
  double std_error = 0.0;
  long n_paths = 0;
  /// False when n_paths == 1 and std_error carries no information.
  bool stderr_defined = false;
};

/// Simulates one path from x0 over unit time; result wrapped into [0,1)^2.
Point2 euler_maruyama_endpoint(Point2 x0, const pde::VelocityField& velocity, const SDEConfig& cfg,
                               long path_index);

/// Throws ParameterError when cfg.n_paths < 1 or the grids differ.
MCEstimate estimate_u0(Point2 x0, const pde::ScalarField2D& terminal, const pde::VelocityField& velocity,
                       const SDEConfig& cfg);

struct ComparisonRow {
  Point2 point{};
  double pde_value = 0.0;
  MCEstimate mc;
  double abs_err = 0.0;
  double err_over_stderr = 0.0;
};

struct ComparisonReport {
  double max_abs_err = 0.0;
  double max_err_over_stderr = 0.0;
  std::vector<ComparisonRow> rows;
};

/// Cross-checks Monte Carlo estimates against the bilinear interpolation of
/// the spectral solution at each probe point. The diffusion coefficient of
/// both routes is `sigma` (overriding mc_cfg.sigma and pde_cfg.sigma). The
/// paths sample the bilinear interpolants of `velocity` and `terminal`; the
/// spectral solve uses the same interpolants on a grid `refine` times finer.
ComparisonReport compare_with_pde(const std::vector<Point2>& points, const pde::ScalarField2D& terminal,
                                  const pde::VelocityField& velocity, double sigma, const SDEConfig& mc_cfg,
                                  const pde::DiffusionConfig& pde_cfg, int refine = 4);

/// k*k probe points on grid nodes, evenly spread over the torus.
std::vector<Point2> lattice_probe_points(const pde::Grid2D& grid, int count);

}  // namespace enres::fk
