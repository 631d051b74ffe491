#include <doctest.h>

#include <cmath>
#include <numbers>

#include "enres/common/error.hpp"
#include "enres/fk/feynman_kac.hpp"

using namespace enres;
using namespace enres::fk;
using pde::Grid2D;
using pde::ScalarField2D;
using pde::VelocityField;

namespace {

constexpr double two_pi = 2.0 * std::numbers::pi;

double wrap_signed(double d) { return d - std::round(d); }

ScalarField2D sine_x(Grid2D g) {
  return ScalarField2D::from_function(g, [](double x, double) { return std::sin(two_pi * x); });
}

}  // namespace

TEST_CASE("frozen and constant-drift paths") {
  const Grid2D g(16);
  SDEConfig cfg;
  cfg.sigma = 0.0;
  const Point2 x0{0.3, 0.7};
  const Point2 still = euler_maruyama_endpoint(x0, VelocityField(g), cfg, 0);
  CHECK(still[0] == x0[0]);
  CHECK(still[1] == x0[1]);

  const double c = 0.85;
  const Point2 moved = euler_maruyama_endpoint(x0, VelocityField::constant(g, c, 0.0), cfg, 3);
  CHECK(std::abs(wrap_signed(moved[0] - std::fmod(x0[0] + c, 1.0))) <= 1e-12);
  CHECK(moved[1] == doctest::Approx(x0[1]).epsilon(1e-12));
}

TEST_CASE("Brownian displacement variance accumulates to sigma squared") {
  const Grid2D g(16);
  SDEConfig cfg;
  cfg.sigma = 0.1;
  cfg.dt = 1e-2;
  const Point2 x0{0.5, 0.5};
  const long n = 100000;
  double sx = 0, sxx = 0, sy = 0, syy = 0;
  for (long p = 0; p < n; ++p) {
    const Point2 e = euler_maruyama_endpoint(x0, VelocityField(g), cfg, p);
    const double dx = wrap_signed(e[0] - x0[0]), dy = wrap_signed(e[1] - x0[1]);
    sx += dx;
    sxx += dx * dx;
    sy += dy;
    syy += dy * dy;
  }
  const double vx = (sxx - sx * sx / n) / (n - 1), vy = (syy - sy * sy / n) / (n - 1);
  CHECK(vx == doctest::Approx(0.01).epsilon(0.03));
  CHECK(vy == doctest::Approx(0.01).epsilon(0.03));
}

TEST_CASE("paths are independent of simulation order") {
  const Grid2D g(16);
  SDEConfig cfg;
  cfg.sigma = 0.3;
  const auto v = pde::sample_random_velocity(g, 2);
  const Point2 a = euler_maruyama_endpoint({0.1, 0.2}, v, cfg, 17);
  euler_maruyama_endpoint({0.1, 0.2}, v, cfg, 3);
  const Point2 b = euler_maruyama_endpoint({0.1, 0.2}, v, cfg, 17);
  CHECK(a[0] == b[0]);
  CHECK(a[1] == b[1]);
}

TEST_CASE("estimate_u0 on constant and deterministic payoffs") {
  const Grid2D g(16);
  SDEConfig cfg;
  cfg.sigma = 0.4;
  cfg.n_paths = 200;
  const auto c = estimate_u0({0.3, 0.6}, ScalarField2D(g, 2.5), pde::sample_random_velocity(g, 1), cfg);
  CHECK(c.mean == doctest::Approx(2.5));
  CHECK(c.std_error == doctest::Approx(0.0).epsilon(1e-12));

  cfg.sigma = 0.0;
  const auto f = pde::sample_random_terminal(g, 4, 4);
  const Point2 x0{3.0 / 16, 5.0 / 16};
  const auto d = estimate_u0(x0, f, VelocityField(g), cfg);
  CHECK(d.mean == doctest::Approx(f.at(3, 5)));
  CHECK(d.std_error == 0.0);

  cfg.n_paths = 1;
  CHECK_FALSE(estimate_u0(x0, f, VelocityField(g), cfg).stderr_defined);
  cfg.n_paths = 0;
  CHECK_THROWS_AS(estimate_u0(x0, f, VelocityField(g), cfg), ParameterError);
}

TEST_CASE("estimate_u0 reproduces heat decay of a sine payoff") {
  const Grid2D g(128);
  SDEConfig cfg;
  cfg.sigma = 0.2;
  cfg.dt = 1e-2;
  cfg.n_paths = 10000;
  cfg.seed = 5;
  const Point2 x0{0.2, 0.4};
  const auto est = estimate_u0(x0, sine_x(g), VelocityField(g), cfg);
  const double pi2 = std::numbers::pi * std::numbers::pi;
  const double expect = std::exp(-2.0 * pi2 * 0.04) * std::sin(two_pi * x0[0]);
  CHECK(std::abs(est.mean - expect) <= 3.0 * est.std_error);
}

TEST_CASE("Monte Carlo standard error shrinks like one over root n") {
  const Grid2D g(16);
  SDEConfig cfg;
  cfg.sigma = 0.3;
  cfg.dt = 1e-2;
  cfg.n_paths = 4000;
  const auto f = pde::sample_random_terminal(g, 6, 3);
  const auto v = pde::sample_random_velocity(g, 6);
  const double e1 = estimate_u0({0.4, 0.1}, f, v, cfg).std_error;
  cfg.n_paths = 8000;
  const double e2 = estimate_u0({0.4, 0.1}, f, v, cfg).std_error;
  CHECK(e2 / e1 == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(0.2));
}

TEST_CASE("comparison without dynamics reduces to interpolation") {
  const Grid2D g(16);
  const auto f = pde::sample_random_terminal(g, 3, 4);
  SDEConfig mc;
  mc.n_paths = 10;
  pde::DiffusionConfig pc;
  const auto rep = compare_with_pde(lattice_probe_points(g, 16), f, VelocityField(g), 0.0, mc, pc);
  CHECK(rep.rows.size() == 16);
  CHECK(rep.max_abs_err <= 1e-6);
}

TEST_CASE("probe lattice") {
  const auto pts = lattice_probe_points(Grid2D(32), 16);
  CHECK(pts.size() == 16);
  for (const auto& p : pts) {
    CHECK(p[0] * 32 == doctest::Approx(std::round(p[0] * 32)));
    CHECK(p[1] >= 0.0);
    CHECK(p[1] < 1.0);
  }
  CHECK_THROWS_AS(lattice_probe_points(Grid2D(32), 15), ParameterError);
}
