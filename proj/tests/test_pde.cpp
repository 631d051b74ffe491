#include <doctest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <sstream>
#include <vector>

#include "enres/common/error.hpp"
#include "enres/pde/field_io.hpp"
#include "enres/pde/field_pde.hpp"

using namespace enres;
using namespace enres::pde;

namespace {

constexpr double two_pi = 2.0 * std::numbers::pi;

double max_abs_diff(const ScalarField2D& a, const ScalarField2D& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

/// Textbook O(n^4) 2D DFT; coefficient (kx, ky) for signed wavenumbers.
std::complex<double> naive_dft(const ScalarField2D& f, int kx, int ky) {
  const int n = f.grid().n();
  std::complex<double> acc = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) acc += f.at(i, j) * std::polar(1.0, -two_pi * (kx * i + ky * j) / n);
  return acc;
}

/// Inverse of naive_dft restricted to max(|kx|,|ky|) <= cutoff.
ScalarField2D naive_low_pass(const ScalarField2D& f, int cutoff) {
  const int n = f.grid().n();
  std::vector<std::complex<double>> coeff;
  std::vector<std::pair<int, int>> modes;
  for (int kx = -cutoff; kx <= cutoff; ++kx)
    for (int ky = -cutoff; ky <= cutoff; ++ky) {
      modes.emplace_back(kx, ky);
      coeff.push_back(naive_dft(f, kx, ky));
    }
  ScalarField2D out(f.grid());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      std::complex<double> acc = 0.0;
      for (std::size_t m = 0; m < modes.size(); ++m)
        acc += coeff[m] * std::polar(1.0, two_pi * (modes[m].first * i + modes[m].second * j) / n);
      out.at(i, j) = acc.real() / (n * n);
    }
  return out;
}

ScalarField2D sine_x(Grid2D g) {
  return ScalarField2D::from_function(g, [](double x, double) { return std::sin(two_pi * x); });
}

}  // namespace

TEST_CASE("grid sizes must be powers of two") {
  CHECK_THROWS_AS(Grid2D(12), ParameterError);
  CHECK_THROWS_AS(Grid2D(4), ParameterError);
  CHECK(Grid2D(16).size() == 256);
  CHECK(Grid2D(8).index(-1, 8) == Grid2D(8).index(7, 0));
}

TEST_CASE("diffusion config validation") {
  DiffusionConfig c;
  c.sigma = -0.1;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c.sigma = 0.1;
  c.dt = 0.0;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c.dt = 0.3;
  CHECK(c.step_count() == 4);
}

TEST_CASE("random velocity is deterministic, seed sensitive and roughly centered") {
  const Grid2D g16(16);
  const auto a = sample_random_velocity(g16, 5), b = sample_random_velocity(g16, 5), c = sample_random_velocity(g16, 6);
  CHECK(max_abs_diff(a.vx, b.vx) == 0.0);
  CHECK(max_abs_diff(a.vy, b.vy) == 0.0);
  CHECK(max_abs_diff(a.vx, c.vx) + max_abs_diff(a.vy, c.vy) > 0.0);

  const auto v = sample_random_velocity(Grid2D(128), 3);
  CHECK(std::abs(v.vx.mean()) <= 0.03);
  CHECK(std::abs(v.vy.mean()) <= 0.03);
  CHECK(v.vx.sup_norm() <= 1.0);
  CHECK(v.vy.sup_norm() <= 1.0);
}

TEST_CASE("random terminal field is band limited") {
  const Grid2D g(16);
  const auto raw = sample_random_terminal(g, 9, 8);
  const auto again = sample_random_terminal(g, 9, 8);
  CHECK(max_abs_diff(raw, again) == 0.0);
  CHECK(raw.sup_norm() <= 1.0);

  const auto low = sample_random_terminal(g, 9, 1);
  for (int kx = -7; kx <= 8; ++kx)
    for (int ky = -7; ky <= 8; ++ky)
      if (std::max(std::abs(kx), std::abs(ky)) > 1) CHECK(std::abs(naive_dft(low, kx, ky)) < 1e-10);
  // The filtered field is the low-pass of the unfiltered one.
  CHECK(max_abs_diff(low, naive_low_pass(raw, 1)) < 1e-12);
}

TEST_CASE("zero velocity and zero diffusion leave the field unchanged") {
  const Grid2D g(32);
  const auto f = sample_random_terminal(g, 1, 6);
  DiffusionConfig cfg;
  cfg.sigma = 0.0;
  CHECK(max_abs_diff(solve_convection_diffusion(f, VelocityField(g), cfg), f) <= 1e-10);
}

TEST_CASE("single Fourier mode decays like the heat kernel") {
  const Grid2D g(64);
  const auto f = sine_x(g);
  for (double sigma : {0.1, 0.5}) {
    DiffusionConfig cfg;
    cfg.sigma = sigma;
    const double decay = std::exp(-2.0 * std::numbers::pi * std::numbers::pi * sigma * sigma);
    ScalarField2D expect = f;
    for (double& v : expect.values()) v *= decay;
    CHECK(max_abs_diff(solve_convection_diffusion(f, VelocityField(g), cfg), expect) <= 1e-6 * decay);
  }
}

TEST_CASE("constant-velocity transport shifts the terminal condition") {
  const Grid2D g(128);
  auto fn = [](double x, double y) { return std::sin(two_pi * x) * std::cos(two_pi * y) + 0.5 * std::cos(two_pi * 2 * x); };
  const double cx = 0.3, cy = -0.2;
  DiffusionConfig cfg;
  cfg.sigma = 0.0;
  const auto u0 = solve_convection_diffusion(ScalarField2D::from_function(g, fn), VelocityField::constant(g, cx, cy), cfg);
  const auto expect = ScalarField2D::from_function(g, [&](double x, double y) { return fn(x + cx, y + cy); });
  CHECK(max_abs_diff(u0, expect) <= 1e-4);
}

TEST_CASE("grad_sup_norm") {
  CHECK(grad_sup_norm(ScalarField2D(Grid2D(16), 3.0)) == 0.0);
  const double g = grad_sup_norm(sine_x(Grid2D(128)));
  CHECK(g == doctest::Approx(two_pi).epsilon(0.005));
  CHECK(grad_sup_norm(sample_random_terminal(Grid2D(16), 2, 8)) >= 0.0);
}

TEST_CASE("gradient bound under pure diffusion") {
  DiffusionConfig cfg;
  const auto flat = verify_gradient_bound(ScalarField2D(Grid2D(32), 1.5), 0.3, cfg);
  CHECK(flat.lhs == 0.0);
  CHECK(flat.holds);

  const double pi2 = std::numbers::pi * std::numbers::pi;
  const auto s = verify_gradient_bound(sine_x(Grid2D(128)), 0.5, cfg);
  CHECK(s.lhs == doctest::Approx(two_pi * std::exp(-2.0 * pi2 * 0.25)).epsilon(0.005));
  CHECK(s.rhs == doctest::Approx(std::exp(-0.25) * (1.0 + two_pi)).epsilon(0.005));
  CHECK(s.holds);

  const auto f = sample_random_terminal(Grid2D(32), 4, 5);
  const auto zero = verify_gradient_bound(f, 0.0, cfg);
  CHECK(zero.lhs == doctest::Approx(grad_sup_norm(f)));
  CHECK(zero.holds);

  const Grid2D g(16);
  CHECK_THROWS_AS(verify_gradient_bound(ScalarField2D(g), VelocityField::constant(g, 1.0, 0.0), 0.1, cfg),
                  UnsupportedError);
}

TEST_CASE("modulus of continuity") {
  CHECK(modulus_of_continuity(ScalarField2D(Grid2D(16), 2.0), 1) == 0.0);
  const auto s = sine_x(Grid2D(128));
  CHECK(modulus_of_continuity(s, 1) == doctest::Approx(two_pi / 128).epsilon(0.02));
  const auto r = sample_random_terminal(Grid2D(32), 8, 6);
  double prev = 0.0;
  for (int radius = 1; radius <= 8; ++radius) {
    const double m = modulus_of_continuity(r, radius);
    CHECK(m >= prev);
    prev = m;
  }
}

TEST_CASE("bilinear refinement keeps coarse nodes and interpolates between them") {
  const auto f = sample_random_terminal(Grid2D(16), 3, 4);
  const auto fine = refine_bilinear(f, 4);
  CHECK(fine.grid().n() == 64);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) CHECK(fine.at(4 * i, 4 * j) == f.at(i, j));
  CHECK(fine.at(2, 1) == doctest::Approx(f.interpolate(2.0 / 64, 1.0 / 64)));
}

TEST_CASE("field csv round trip and malformed input") {
  const auto f = sample_random_terminal(Grid2D(8), 1, 4);
  std::stringstream ss;
  write_field_csv(ss, f, 0.25);
  const auto back = read_field_csv(ss);
  CHECK(back.sigma == 0.25);
  CHECK(max_abs_diff(back.field, f) == 0.0);

  std::stringstream bad("# n=8 sigma=0.1\n1,2,3\n");
  CHECK_THROWS_AS(read_field_csv(bad), FormatError);
  std::stringstream no_header("1,2\n");
  CHECK_THROWS_AS(read_field_csv(no_header), FormatError);
}
