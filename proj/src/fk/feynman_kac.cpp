#include "enres/fk/feynman_kac.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "enres/common/error.hpp"
#include "enres/common/random.hpp"

namespace enres::fk {

namespace {

double wrap_unit(double x) noexcept {
  double w = x - std::floor(x);
  return w >= 1.0 ? 0.0 : w;
}

/// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  void add(double v) noexcept {
    const double t = sum_ + v;
    comp_ += std::abs(sum_) >= std::abs(v) ? (sum_ - t) + v : (v - t) + sum_;
    sum_ = t;
  }
  double value() const noexcept { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

/// Bilinear periodic lookup of both velocity components with shared weights.
class VelocitySampler {
 public:
  explicit VelocitySampler(const pde::VelocityField& v)
      : n_(v.grid().n()), vx_(v.vx.values().data()), vy_(v.vy.values().data()) {}

  /// (x, y) must lie in [0, 1).
  void operator()(double x, double y, double& fx, double& fy) const noexcept {
    const double gx = x * n_;
    const double gy = y * n_;
    const int i0 = std::min(static_cast<int>(gx), n_ - 1);
    const int j0 = std::min(static_cast<int>(gy), n_ - 1);
    const double ax = gx - i0;
    const double ay = gy - j0;
    const int i1 = i0 + 1 == n_ ? 0 : i0 + 1;
    const int j1 = j0 + 1 == n_ ? 0 : j0 + 1;
    const double w00 = (1 - ax) * (1 - ay), w10 = ax * (1 - ay), w01 = (1 - ax) * ay, w11 = ax * ay;
    const std::size_t k00 = static_cast<std::size_t>(i0) * n_ + j0, k10 = static_cast<std::size_t>(i1) * n_ + j0;
    const std::size_t k01 = static_cast<std::size_t>(i0) * n_ + j1, k11 = static_cast<std::size_t>(i1) * n_ + j1;
    fx = w00 * vx_[k00] + w10 * vx_[k10] + w01 * vx_[k01] + w11 * vx_[k11];
    fy = w00 * vy_[k00] + w10 * vy_[k10] + w01 * vy_[k01] + w11 * vy_[k11];
  }

 private:
  int n_;
  const double* vx_;
  const double* vy_;
};

}  // namespace

void SDEConfig::validate() const {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ParameterError("sigma must be finite and >= 0");
  if (!(dt > 0.0) || dt > 1.0) throw ParameterError("dt must lie in (0, 1]");
  if (n_paths < 1) throw ParameterError("n_paths must be >= 1, got " + std::to_string(n_paths));
}

long SDEConfig::step_count() const {
  pde::DiffusionConfig d;
  d.dt = dt;
  return d.step_count();
}

Point2 euler_maruyama_endpoint(Point2 x0, const pde::VelocityField& velocity, const SDEConfig& cfg,
                               long path_index) {
  const long steps = cfg.step_count();
  KeyedStream noise(derive_key(cfg.seed, {static_cast<std::uint64_t>(path_index)}));
  double x = wrap_unit(x0[0]);
  double y = wrap_unit(x0[1]);
  const bool frozen_noise = cfg.sigma == 0.0;
  const VelocitySampler sample(velocity);
  double fx = 0.0, fy = 0.0;
  for (long step = 0; step < steps; ++step) {
    const double h = (step == steps - 1) ? 1.0 - cfg.dt * static_cast<double>(steps - 1) : cfg.dt;
    sample(x, y, fx, fy);
    x += fx * h;
    y += fy * h;
    if (!frozen_noise) {
      // Stream position 2*step, 2*step+1 belongs to this step.
      const double scale = cfg.sigma * std::sqrt(h);
      x += scale * noise.normal();
      y += scale * noise.normal();
    }
    x = wrap_unit(x);
    y = wrap_unit(y);
  }
  return {x, y};
}

MCEstimate estimate_u0(Point2 x0, const pde::ScalarField2D& terminal, const pde::VelocityField& velocity,
                       const SDEConfig& cfg) {
  cfg.validate();
  if (!(terminal.grid() == velocity.grid())) throw ParameterError("terminal field and velocity are on different grids");

  std::vector<double> payoff(static_cast<std::size_t>(cfg.n_paths));
  for (long p = 0; p < cfg.n_paths; ++p) {
    const Point2 end = euler_maruyama_endpoint(x0, velocity, cfg, p);
    payoff[static_cast<std::size_t>(p)] = terminal.interpolate(end[0], end[1]);
  }

  CompensatedSum sum;
  for (double v : payoff) sum.add(v);
  MCEstimate est;
  est.n_paths = cfg.n_paths;
  est.mean = sum.value() / static_cast<double>(cfg.n_paths);
  if (cfg.n_paths == 1) return est;

  CompensatedSum sq;
  for (double v : payoff) sq.add((v - est.mean) * (v - est.mean));
  const double var = sq.value() / static_cast<double>(cfg.n_paths - 1);
  est.std_error = std::sqrt(var / static_cast<double>(cfg.n_paths));
  est.stderr_defined = true;
  return est;
}

ComparisonReport compare_with_pde(const std::vector<Point2>& points, const pde::ScalarField2D& terminal,
                                  const pde::VelocityField& velocity, double sigma, const SDEConfig& mc_cfg,
                                  const pde::DiffusionConfig& pde_cfg, int refine) {
  if (!(terminal.grid() == velocity.grid())) throw ParameterError("terminal field and velocity are on different grids");
  pde::DiffusionConfig dcfg = pde_cfg;
  dcfg.sigma = sigma;
  dcfg.t_final = 1.0;
  SDEConfig scfg = mc_cfg;
  scfg.sigma = sigma;
  // Both routes see the same bilinear coefficient field; the spectral solve
  // runs on a finer grid so that it resolves it.
  const pde::VelocityField fine_velocity(pde::refine_bilinear(velocity.vx, refine),
                                         pde::refine_bilinear(velocity.vy, refine));
  const pde::ScalarField2D u0 =
      pde::solve_convection_diffusion(pde::refine_bilinear(terminal, refine), fine_velocity, dcfg);

  ComparisonReport report;
  for (std::size_t k = 0; k < points.size(); ++k) {
    ComparisonRow row;
    row.point = points[k];
    row.pde_value = u0.interpolate(row.point[0], row.point[1]);
    // Each probe point gets its own family of path streams.
    SDEConfig point_cfg = scfg;
    point_cfg.seed = derive_key(scfg.seed, {k});
    row.mc = estimate_u0(row.point, terminal, velocity, point_cfg);
    row.abs_err = std::abs(row.mc.mean - row.pde_value);
    if (row.mc.std_error > 0.0) {
      row.err_over_stderr = row.abs_err / row.mc.std_error;
    } else {
      row.err_over_stderr = row.abs_err <= 1e-12 ? 0.0 : std::numeric_limits<double>::infinity();
    }
    report.max_abs_err = std::max(report.max_abs_err, row.abs_err);
    report.max_err_over_stderr = std::max(report.max_err_over_stderr, row.err_over_stderr);
    report.rows.push_back(row);
  }
  return report;
}

std::vector<Point2> lattice_probe_points(const pde::Grid2D& grid, int count) {
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(count))));
  if (side < 1 || side * side != count || grid.n() % side != 0) {
    throw ParameterError("probe count must be a square whose root divides n, got " + std::to_string(count));
  }
  const int stride = grid.n() / side;
  const double h = grid.spacing();
  std::vector<Point2> pts;
  for (int a = 0; a < side; ++a)
    for (int b = 0; b < side; ++b) pts.push_back({(a * stride + stride / 2) * h, (b * stride + stride / 2) * h});
  return pts;
}

}  // namespace enres::fk
