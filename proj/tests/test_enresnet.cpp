#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "enres/ad/ops.hpp"
#include "enres/common/error.hpp"
#include "enres/net/enresnet.hpp"
#include "support/gradcheck.hpp"

using namespace enres;
using namespace enres::net;
using enres::testing::random_tensor;

namespace {

NoiseSpec no_noise() {
  NoiseSpec s;
  s.a = 0.0;
  return s;
}

bool same_values(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (a.values()[i] != b.values()[i]) return false;
  return true;
}

/// L(w) = sum_i CE(sum_m w_m y_i^m, t_i), computed directly.
double ensemble_loss(const std::vector<Tensor>& logits, const std::vector<int>& y, const std::vector<double>& w) {
  const std::size_t N = logits[0].dim(0), K = logits[0].dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    std::vector<double> z(K, 0.0);
    for (std::size_t m = 0; m < logits.size(); ++m)
      for (std::size_t k = 0; k < K; ++k) z[k] += w[m] * logits[m].values()[i * K + k];
    const double zmax = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - zmax);
    total += zmax + std::log(s) - z[static_cast<std::size_t>(y[i])];
  }
  return total;
}

}  // namespace

TEST_CASE("noise standard deviation") {
  NoiseSpec s;
  s.a = 0.1;
  CHECK(noise_std(Tensor::full({3, 2}, 4.0), s) == 0.0);
  CHECK(noise_std(Tensor::from({2}, {0.0, 2.0}), s) == doctest::Approx(0.1));
  s.mode = NoiseMode::fixed;
  CHECK(noise_std(Tensor::from({2}, {0.0, 200.0}), s) == 0.1);
  s.a = -1.0;
  CHECK_THROWS_AS(s.validate(), ParameterError);
}

TEST_CASE("noiseless residual block is the plain pre-activation block") {
  std::mt19937_64 rng(1);
  auto p = ResidualBlockParams::init(4, 77);
  auto q = p;  // stats copied, tensors shared
  const Tensor x = random_tensor({2, 4, 3, 3}, rng, -1.0, 1.0, false);
  const Tensor y = residual_block_forward(x, p, no_noise(), 5, ad::Mode::eval);

  Tensor h = ad::batchnorm2d(x, q.gamma1, q.beta1, q.stats1, 1e-5, ad::Mode::eval);
  h = ad::conv2d(ad::relu(h), q.conv1, 1, 1);
  h = ad::batchnorm2d(h, q.gamma2, q.beta2, q.stats2, 1e-5, ad::Mode::eval);
  h = ad::conv2d(ad::relu(h), q.conv2, 1, 1);
  CHECK(same_values(y, ad::add(x, h)));
}

TEST_CASE("zero convolutions give the identity skip") {
  std::mt19937_64 rng(2);
  auto p = ResidualBlockParams::init(3, 1);
  for (Tensor* t : {&p.conv1, &p.conv2, &p.beta1, &p.beta2})
    for (double& v : t->mutable_values()) v = 0.0;
  const Tensor x = random_tensor({2, 3, 2, 2}, rng, -1.0, 1.0, false);
  CHECK(same_values(residual_block_forward(x, p, no_noise(), 0, ad::Mode::train), x));
}

TEST_CASE("block noise is keyed and has the configured spread") {
  std::mt19937_64 rng(3);
  auto p = ResidualBlockParams::init(8, 4);
  const Tensor x = random_tensor({16, 8, 4, 4}, rng, -1.0, 1.0, false);
  NoiseSpec spec;
  spec.a = 0.1;
  const Tensor clean = residual_block_forward(x, p, no_noise(), 0, ad::Mode::eval);
  const double sigma = noise_std(clean, spec);

  const Tensor a1 = residual_block_forward(x, p, spec, 11, ad::Mode::eval);
  const Tensor a2 = residual_block_forward(x, p, spec, 11, ad::Mode::eval);
  const Tensor b = residual_block_forward(x, p, spec, 12, ad::Mode::eval);
  CHECK(same_values(a1, a2));
  double s2 = 0.0;
  for (std::size_t i = 0; i < a1.numel(); ++i) s2 += std::pow(a1.values()[i] - b.values()[i], 2);
  const double sd = std::sqrt(s2 / static_cast<double>(a1.numel()));
  CHECK(sd == doctest::Approx(std::sqrt(2.0) * sigma).epsilon(0.05));

  spec.active_in_eval = false;
  CHECK(same_values(residual_block_forward(x, p, spec, 11, ad::Mode::eval), clean));
}

TEST_CASE("ensemble forward") {
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor({3, 2, 4, 4}, rng, 0.0, 1.0, false);

  auto single = EnResNetModel::create(1, 2, 4, 2, 3, no_noise(), 9);
  CHECK(same_values(ensemble_forward(single, x, ad::Mode::eval, 1),
                    single.members[0].forward(x, single.noise, 1, ad::Mode::eval)));

  auto twins = EnResNetModel::create(2, 2, 4, 2, 3, no_noise(), 9);
  twins.members[1] = twins.members[0];
  const Tensor avg = ensemble_forward(twins, x, ad::Mode::eval, 1);
  const Tensor one = twins.members[0].forward(x, twins.noise, 1, ad::Mode::eval);
  for (std::size_t i = 0; i < avg.numel(); ++i) CHECK(avg.values()[i] == doctest::Approx(one.values()[i]));

  auto fixed = EnResNetModel::create(2, 2, 4, 1, 2, no_noise(), 3);
  for (std::size_t m = 0; m < 2; ++m) {
    for (double& v : fixed.members[m].fc_w.mutable_values()) v = 0.0;
    fixed.members[m].fc_b.mutable_values()[0] = m == 0 ? 1.0 : 0.0;
    fixed.members[m].fc_b.mutable_values()[1] = m == 0 ? 0.0 : 1.0;
  }
  fixed.weights = {0.3, 0.7};
  const Tensor z = ensemble_forward(fixed, x, ad::Mode::eval, 0);
  CHECK(z.values()[0] == doctest::Approx(0.3));
  CHECK(z.values()[1] == doctest::Approx(0.7));
}

TEST_CASE("member noise streams do not depend on member order") {
  std::mt19937_64 rng(5);
  const Tensor x = random_tensor({2, 2, 3, 3}, rng, 0.0, 1.0, false);
  NoiseSpec spec;
  spec.a = 0.2;
  auto m = EnResNetModel::create(2, 2, 4, 2, 2, spec, 21);
  m.weights = {0.25, 0.75};
  const Tensor before = ensemble_forward(m, x, ad::Mode::eval, 8);
  std::swap(m.members[0], m.members[1]);
  std::swap(m.weights[0], m.weights[1]);
  const Tensor after = ensemble_forward(m, x, ad::Mode::eval, 8);
  for (std::size_t i = 0; i < before.numel(); ++i) CHECK(after.values()[i] == doctest::Approx(before.values()[i]));
}

TEST_CASE("ensemble weight gradients") {
  const std::vector<Tensor> same{Tensor::from({2, 3}, {1, 2, 0, -1, 0, 1}), Tensor::from({2, 3}, {1, 2, 0, -1, 0, 1})};
  const auto gs = ensemble_weight_grads(same, std::vector<int>{0, 2}, std::vector<double>{0.4, 0.6});
  CHECK(gs[0] == doctest::Approx(gs[1]));

  const std::vector<Tensor> two{Tensor::from({1, 2}, {1, 0}), Tensor::from({1, 2}, {0, 1})};
  const std::vector<int> y{0};
  const std::vector<double> w{0.5, 0.5};
  const auto g = ensemble_weight_grads(two, y, w);
  const double h = 1e-6;
  for (std::size_t m = 0; m < 2; ++m) {
    auto up = w, down = w;
    up[m] += h;
    down[m] -= h;
    const double numeric = (ensemble_loss(two, y, up) - ensemble_loss(two, y, down)) / (2 * h);
    CHECK(g[m] == doctest::Approx(numeric).epsilon(1e-6));
  }

  const std::vector<Tensor> confident{Tensor::from({1, 2}, {60, -60}), Tensor::from({1, 2}, {50, -50})};
  for (double v : ensemble_weight_grads(confident, y, w)) CHECK(std::abs(v) < 1e-20);
}

TEST_CASE("ensemble weight updates stay on the simplex") {
  const EnsembleWeightState s{{0.5, 0.5}, 0.1};
  const auto same = update_ensemble_weights(s, std::vector<double>{0.0, 0.0});
  CHECK(same.w[0] == 0.5);
  const auto moved = update_ensemble_weights(s, std::vector<double>{1.0, -1.0});
  CHECK(moved.w[0] == doctest::Approx(0.4));
  CHECK(moved.w[1] == doctest::Approx(0.6));

  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0.0, 5.0);
  EnsembleWeightState st{{0.2, 0.3, 0.5}, 0.05};
  for (int i = 0; i < 100; ++i) {
    st = update_ensemble_weights(st, std::vector<double>{n(rng), n(rng), n(rng)});
    CHECK(std::accumulate(st.w.begin(), st.w.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    for (double w : st.w) CHECK(w >= 0.0);
  }
}

TEST_CASE("integrating a model with itself keeps its logits and parameters") {
  std::mt19937_64 rng(7);
  const Tensor x = random_tensor({2, 3, 2, 2}, rng, 0.0, 1.0, false);
  auto m = EnResNetModel::create(1, 3, 4, 1, 2, no_noise(), 4);
  const std::vector<double> before(m.members[0].stem.values().begin(), m.members[0].stem.values().end());
  const std::vector<EnResNetModel> both{m, m};
  auto merged = integrate_separate(both, std::vector<double>{0.5, 0.5});
  CHECK(merged.members.size() == 2);
  const Tensor a = ensemble_forward(m, x, ad::Mode::eval, 0), b = ensemble_forward(merged, x, ad::Mode::eval, 0);
  CHECK(same_values(a, b));

  for (double& v : merged.members[0].stem.mutable_values()) v += 1.0;
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(m.members[0].stem.values()[i] == before[i]);
}

TEST_CASE("integration weights multiply through and noise must agree") {
  auto a = EnResNetModel::create(2, 1, 2, 1, 2, no_noise(), 1);
  auto b = EnResNetModel::create(1, 1, 2, 1, 2, no_noise(), 2);
  a.weights = {0.25, 0.75};
  const std::vector<EnResNetModel> ms{a, b};
  const auto merged = integrate_separate(ms, std::vector<double>{0.5, 0.5});
  CHECK(merged.weights[0] == doctest::Approx(0.125));
  CHECK(merged.weights[1] == doctest::Approx(0.375));
  CHECK(merged.weights[2] == doctest::Approx(0.5));

  NoiseSpec other;
  other.a = 0.3;
  const std::vector<EnResNetModel> mixed{a, EnResNetModel::create(1, 1, 2, 1, 2, other, 3)};
  CHECK_THROWS_AS(integrate_separate(mixed, std::vector<double>{0.5, 0.5}), ParameterError);
}

TEST_CASE("spec record round trip") {
  NoiseSpec s;
  s.a = 0.15;
  s.mode = NoiseMode::fixed;
  s.active_in_eval = false;
  auto m = EnResNetModel::create(3, 5, 6, 2, 4, s, 12);
  m.weights = {0.2, 0.3, 0.5};
  const auto back = model_from_spec_record(spec_record(m));
  CHECK(spec_record(back) == spec_record(m));
  CHECK(back.noise.mode == NoiseMode::fixed);
  CHECK_FALSE(back.noise.active_in_eval);
  CHECK_THROWS_AS(model_from_spec_record("nonsense"), FormatError);
}

TEST_CASE("model validation") {
  auto m = EnResNetModel::create(2, 1, 2, 1, 2, no_noise(), 1);
  m.weights = {0.5, 0.6};
  CHECK_THROWS_AS(m.validate(), ParameterError);
  CHECK_THROWS_AS(EnResNetModel::create(0, 1, 2, 1, 2, no_noise(), 1), ParameterError);
}
