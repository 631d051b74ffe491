#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "enres/ad/ops.hpp"
#include "enres/attack/attacks.hpp"
#include "enres/common/error.hpp"
#include "enres/common/random.hpp"
#include "support/gradcheck.hpp"

using namespace enres;
using namespace enres::attack;
using enres::testing::random_tensor;

namespace {

/// logits = flatten(x) W + b, optionally plus keyed Gaussian logit noise.
class LinearClassifier : public Classifier {
 public:
  LinearClassifier(Tensor w, Tensor b, double noise = 0.0) : w_(std::move(w)), b_(std::move(b)), noise_(noise) {}

  Tensor logits(const Tensor& x, std::uint64_t key) override {
    const std::size_t n = x.dim(0);
    Tensor z = ad::dense(ad::reshape(x, {n, x.numel() / n}), w_, b_);
    if (noise_ > 0.0) z = ad::add(z, ad::gaussian_sample(z.shape(), noise_, key));
    return z;
  }
  bool stochastic() const override { return noise_ > 0.0; }
  std::vector<Tensor> parameters() const override { return {w_, b_}; }

 private:
  Tensor w_, b_;
  double noise_;
};

LinearClassifier random_linear(std::size_t d, std::size_t k, std::mt19937_64& rng, double noise = 0.0) {
  return LinearClassifier(random_tensor({d, k}, rng, -3.0, 3.0), random_tensor({k}, rng), noise);
}

std::vector<int> random_labels(std::size_t n, int k, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> u(0, k - 1);
  std::vector<int> y(n);
  for (int& v : y) v = u(rng);
  return y;
}

double linf(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

bool in_box(const Tensor& t) {
  return std::all_of(t.values().begin(), t.values().end(), [](double v) { return v >= 0.0 && v <= 1.0; });
}

AttackSpec spec_of(AttackKind kind, double eps, double alpha = 2.0 / 255.0, int iters = 20) {
  AttackSpec s;
  s.kind = kind;
  s.epsilon = eps;
  s.alpha = alpha;
  s.iters = iters;
  return s;
}

}  // namespace

TEST_CASE("fgsm follows the gradient sign of a linear loss") {
  // logit gap 3 x1 - 2 x2 against label 1: d CE / dx has signs (+, -).
  LinearClassifier m(Tensor::from({2, 2}, {3, 0, -2, 0}), Tensor::zeros({2}));
  const Tensor x = Tensor::from({1, 2}, {0.5, 0.5});
  const auto adv = fgsm(m, x, std::vector<int>{1}, spec_of(AttackKind::fgsm, 0.1), 0);
  CHECK(adv.x_adv.values()[0] == doctest::Approx(0.6));
  CHECK(adv.x_adv.values()[1] == doctest::Approx(0.4));

  const auto none = fgsm(m, x, std::vector<int>{1}, spec_of(AttackKind::fgsm, 0.0), 0);
  CHECK(linf(none.x_adv, x) == 0.0);
}

TEST_CASE("ifgsm saturates at the epsilon ball") {
  LinearClassifier m(Tensor::from({1, 2}, {1, 0}), Tensor::zeros({2}));
  const Tensor x = Tensor::from({1, 1}, {0.5});
  const auto adv = ifgsm(m, x, std::vector<int>{1}, spec_of(AttackKind::ifgsm, 8.0 / 255.0), 0);
  CHECK(adv.x_adv.values()[0] == doctest::Approx(0.5 + 8.0 / 255.0).epsilon(1e-12));
  CHECK(adv.x_adv.values()[0] == doctest::Approx(0.53137).epsilon(1e-4));
}

TEST_CASE("single-step ifgsm with alpha = epsilon is fgsm") {
  std::mt19937_64 rng(3);
  for (double noise : {0.0, 0.5}) {
    auto m = random_linear(6, 3, rng, noise);
    const Tensor x = random_tensor({4, 6}, rng, 0.0, 1.0, false);
    const auto y = random_labels(4, 3, rng);
    const auto a = fgsm(m, x, y, spec_of(AttackKind::fgsm, 0.05), 99);
    const auto b = ifgsm(m, x, y, spec_of(AttackKind::ifgsm, 0.05, 0.05, 1), 99);
    CHECK(linf(a.x_adv, b.x_adv) == 0.0);
  }
}

TEST_CASE("perturbation and box contracts on random cases") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> eps_d(0.0, 0.2);
  for (int c = 0; c < 200; ++c) {
    auto m = random_linear(5, 3, rng, c % 2 ? 0.3 : 0.0);
    const Tensor x = random_tensor({3, 5}, rng, 0.0, 1.0, false);
    const auto y = random_labels(3, 3, rng);
    const double eps = eps_d(rng);
    const auto f = fgsm(m, x, y, spec_of(AttackKind::fgsm, eps), c);
    auto ps = spec_of(AttackKind::ifgsm, eps, eps / 4 + 1e-4, 7);
    ps.random_init = c % 3 == 0;
    const auto i = ifgsm(m, x, y, ps, c);
    const Tensor p = pgd_init(x, eps, c);
    for (const Tensor* t : {&f.x_adv, &i.x_adv, &p}) {
      CHECK(linf(*t, x) <= eps + 1e-9);
      CHECK(in_box(*t));
    }
  }
}

TEST_CASE("pgd_init draws uniformly from the epsilon cube") {
  const Tensor x0 = Tensor::full({1, 2}, 0.3);
  CHECK(linf(pgd_init(x0, 0.0, 5), x0) == 0.0);

  const std::size_t n = 100000;
  const double eps = 0.1;
  const Tensor x = Tensor::full({n}, 0.5);
  const Tensor p = pgd_init(x, eps, 17);
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = p.values()[i] - 0.5;
  std::sort(d.begin(), d.end());
  double ks = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double cdf = (d[i] + eps) / (2 * eps);
    ks = std::max({ks, std::abs(cdf - static_cast<double>(i) / n), std::abs(cdf - static_cast<double>(i + 1) / n)});
  }
  CHECK(ks <= 0.02);
}

TEST_CASE("eot gradient") {
  std::mt19937_64 rng(6);
  auto det = random_linear(4, 3, rng);
  const Tensor x = random_tensor({2, 4}, rng, 0.0, 1.0, false);
  const std::vector<int> y{0, 2};
  const Tensor g1 = eot_gradient(det, x, y, 1, 3), g5 = eot_gradient(det, x, y, 5, 3);
  CHECK(linf(g1, g5) == 0.0);

  auto noisy = random_linear(4, 3, rng, 1.0);
  // One pass with the run-0 key, computed through the classifier directly.
  Tensor xr = Tensor::from(x.shape(), std::vector<double>(x.values().begin(), x.values().end()), true);
  ad::backward(ad::cross_entropy_from_logits(noisy.logits(xr, derive_key(7, {0})), y));
  const Tensor one = eot_gradient(noisy, x, y, 1, 7);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(one.values()[i] == doctest::Approx(xr.grad()[i]));

  auto total_variance = [&](int runs) {
    const int reps = 100;
    std::vector<double> s(x.numel(), 0.0), s2(x.numel(), 0.0);
    for (int r = 0; r < reps; ++r) {
      const Tensor g = eot_gradient(noisy, x, y, runs, derive_key(1000 + runs, {static_cast<std::uint64_t>(r)}));
      for (std::size_t i = 0; i < x.numel(); ++i) {
        s[i] += g.values()[i];
        s2[i] += g.values()[i] * g.values()[i];
      }
    }
    double v = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) v += (s2[i] - s[i] * s[i] / reps) / (reps - 1);
    return v;
  };
  const double ratio = total_variance(1) / total_variance(8);
  CHECK(ratio >= 8.0 / 1.5);
  CHECK(ratio <= 8.0 * 1.5);
}

TEST_CASE("attacks leave model parameters untouched") {
  std::mt19937_64 rng(7);
  auto m = random_linear(4, 2, rng);
  const Tensor x = random_tensor({2, 4}, rng, 0.0, 1.0, false);
  ifgsm(m, x, std::vector<int>{0, 1}, spec_of(AttackKind::ifgsm, 0.1), 1);
  for (const Tensor& p : m.parameters()) {
    CHECK(p.requires_grad());
    CHECK_FALSE(p.has_grad());
  }
}

TEST_CASE("cw stays put when the target already wins") {
  LinearClassifier m(Tensor::from({2, 2}, {2, -2, 1, -1}), Tensor::zeros({2}));
  const Tensor x = Tensor::from({1, 2}, {0.7, 0.6});
  AttackSpec s = spec_of(AttackKind::cw, 0.0);
  s.cw_kappa = 0.0;
  const auto adv = cw(m, x, std::vector<int>{0}, s, 0);
  CHECK(linf(adv.x_adv, x) <= 1e-3);
  CHECK(adv.success[0]);
}

TEST_CASE("cw matches a brute-force search on a two-pixel linear model") {
  // Z(x) = (w.x, -w.x); the oracle minimizes |x' - x|_inf + c * hinge over
  // the 1/255 grid and reports whether its minimizer reaches the target.
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0), wd(-2.0, 2.0);
  AttackSpec s = spec_of(AttackKind::cw, 0.0);
  s.cw_c = 1.0;
  s.cw_kappa = 0.05;
  s.cw_steps = 1000;
  s.cw_lr = 0.01;
  int checked = 0, agree = 0, oracle_hits = 0;
  while (checked < 20) {
    const double w1 = wd(rng), w2 = wd(rng), x1 = u(rng), x2 = u(rng);
    const int target = 0;
    auto obj = [&](double a, double b, bool& hit) {
      const double z = w1 * a + w2 * b;  // Z_target - Z_other = 2 z
      hit = 2 * z > 0.0;
      return std::max(std::abs(a - x1), std::abs(b - x2)) + s.cw_c * std::max(-s.cw_kappa, -2 * z);
    };
    double best_hit = 1e9, best_miss = 1e9;
    for (int i = 0; i <= 255; ++i)
      for (int j = 0; j <= 255; ++j) {
        bool hit = false;
        const double o = obj(i / 255.0, j / 255.0, hit);
        (hit ? best_hit : best_miss) = std::min(hit ? best_hit : best_miss, o);
      }
    // Skip near ties, where a grid of step 1/255 cannot decide.
    if (std::abs(best_hit - best_miss) < 0.02) continue;
    ++checked;
    LinearClassifier m(Tensor::from({2, 2}, {w1, -w1, w2, -w2}), Tensor::zeros({2}));
    const auto adv = cw(m, Tensor::from({1, 2}, {x1, x2}), std::vector<int>{target}, s, checked);
    CHECK(in_box(adv.x_adv));
    agree += adv.success[0] == (best_hit < best_miss);
    oracle_hits += best_hit < best_miss;
  }
  CHECK(agree == 20);
  CHECK(oracle_hits > 0);
  CHECK(oracle_hits < 20);
}

TEST_CASE("run_attack with cw reports untargeted success") {
  std::mt19937_64 rng(9);
  auto m = random_linear(3, 4, rng);
  const Tensor x = random_tensor({5, 3}, rng, 0.0, 1.0, false);
  const auto y = predict(m.logits(x, 0));
  AttackSpec s = spec_of(AttackKind::cw, 0.0);
  s.cw_steps = 20;
  const auto adv = run_attack(m, x, y, s, 2);
  const auto pred = predict(m.logits(adv.x_adv, 0));
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(adv.success[i] == (pred[i] != y[i]));
  CHECK(in_box(adv.x_adv));
}

TEST_CASE("least likely targets and prediction") {
  LinearClassifier m(Tensor::from({1, 3}, {1, -2, 0.5}), Tensor::zeros({3}));
  const Tensor x = Tensor::from({2, 1}, {1.0, -1.0});
  CHECK(least_likely_targets(m, x, 0) == std::vector<int>{1, 0});
  CHECK(predict(m.logits(x, 0)) == std::vector<int>{0, 1});
}

TEST_CASE("attack spec parsing and validation") {
  CHECK(parse_attack_kind("cw") == AttackKind::cw);
  CHECK_THROWS_AS(parse_attack_kind("deepfool"), ParameterError);
  CHECK(spec_of(AttackKind::ifgsm, 0.03).label() == "ifgsm20");
  CHECK(spec_of(AttackKind::fgsm, 0.03).label() == "fgsm");
  AttackSpec bad = spec_of(AttackKind::ifgsm, -0.1);
  CHECK_THROWS_AS(bad.validate(), ParameterError);
}
