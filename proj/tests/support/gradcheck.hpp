#pragma once
// Central finite-difference oracle for the autodiff engine. A vector-valued
// op is reduced to a scalar by contracting its output with a fixed random
// probe, so every output entry contributes to the checked gradient.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "enres/ad/ops.hpp"
#include "enres/ad/tensor.hpp"

namespace enres::testing {

using ad::Tensor;

inline Tensor random_tensor(ad::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = true) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(ad::shape_numel(shape));
  for (double& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

/// Values with |x| >= gap, for checks around kinks at zero.
inline Tensor away_from_zero(ad::Shape shape, std::mt19937_64& rng, double gap) {
  Tensor t = random_tensor(std::move(shape), rng);
  for (double& x : t.mutable_values()) x = std::copysign(gap + std::abs(x), x);
  return t;
}

/// Worst relative error over all inputs; each input's error is
/// max|analytic - numeric| / max(max|numeric|, floor).
inline double gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& op, std::vector<Tensor> inputs,
                        std::mt19937_64& rng, double h = 1e-6, double floor = 1e-8) {
  const Tensor probe0 = op(inputs);
  const Tensor probe = random_tensor(probe0.shape(), rng, -1.0, 1.0, false);
  auto loss = [&] { return ad::sum(ad::mul(op(inputs), probe)); };

  for (Tensor& t : inputs) t.zero_grad();
  ad::backward(loss());

  double worst = 0.0;
  for (Tensor& t : inputs) {
    if (!t.requires_grad()) continue;
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    double err = 0.0, scale = floor;
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double x0 = t.values()[i];
      t.mutable_values()[i] = x0 + h;
      const double up = loss().item();
      t.mutable_values()[i] = x0 - h;
      const double down = loss().item();
      t.mutable_values()[i] = x0;
      const double numeric = (up - down) / (2.0 * h);
      err = std::max(err, std::abs(analytic[i] - numeric));
      scale = std::max(scale, std::abs(numeric));
    }
    worst = std::max(worst, err / scale);
  }
  return worst;
}

struct GradcheckCase {
  const char* name;
  double rel_err;
};

/// One randomized finite-difference check per differentiable op.
inline std::vector<GradcheckCase> gradcheck_all_ops(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> dim(2, 4);
  std::vector<GradcheckCase> out;
  auto run = [&](const char* name, auto op, std::vector<Tensor> in) { out.push_back({name, gradcheck(op, in, rng)}); };

  const ad::Shape s{dim(rng), dim(rng), dim(rng)};
  run("add", [](const auto& v) { return ad::add(v[0], v[1]); }, {random_tensor(s, rng), random_tensor(s, rng)});
  run("sub", [](const auto& v) { return ad::sub(v[0], v[1]); }, {random_tensor(s, rng), random_tensor(s, rng)});
  run("mul", [](const auto& v) { return ad::mul(v[0], v[1]); }, {random_tensor(s, rng), random_tensor(s, rng)});
  run("scale", [](const auto& v) { return ad::scale(v[0], -1.7); }, {random_tensor(s, rng)});
  run("add_scalar", [](const auto& v) { return ad::add_scalar(v[0], 0.3); }, {random_tensor(s, rng)});
  run("relu", [](const auto& v) { return ad::relu(v[0]); }, {away_from_zero(s, rng, 1e-3)});
  run("tanh", [](const auto& v) { return ad::tanh(v[0]); }, {random_tensor(s, rng, -2.0, 2.0)});
  run("sum", [](const auto& v) { return ad::sum(v[0]); }, {random_tensor(s, rng)});
  run("mean", [](const auto& v) { return ad::mean(v[0]); }, {random_tensor(s, rng)});
  run("sum_rows", [](const auto& v) { return ad::sum_rows(v[0]); }, {random_tensor(s, rng)});
  run("reshape", [&](const auto& v) { return ad::reshape(v[0], {s[0], s[1] * s[2]}); }, {random_tensor(s, rng)});

  const std::size_t n = dim(rng), c = dim(rng), f = dim(rng), hw = dim(rng) + 2;
  run("conv2d", [](const auto& v) { return ad::conv2d(v[0], v[1], 1, 1); },
      {random_tensor({n, c, hw, hw}, rng), random_tensor({f, c, 3, 3}, rng)});
  run("conv2d_stride2", [](const auto& v) { return ad::conv2d(v[0], v[1], 2, 1); },
      {random_tensor({n, c, 5, 5}, rng), random_tensor({f, c, 3, 3}, rng)});

  run("batchnorm2d_train",
      [&](const auto& v) {
        ad::BatchNormStats st(c);
        return ad::batchnorm2d(v[0], v[1], v[2], st, 1e-5, ad::Mode::train);
      },
      {random_tensor({n, c, 2, 2}, rng), random_tensor({c}, rng, 0.5, 1.5), random_tensor({c}, rng)});
  run("batchnorm2d_eval",
      [&](const auto& v) {
        ad::BatchNormStats st(c);
        for (std::size_t i = 0; i < c; ++i) {
          st.mean[i] = 0.1 * static_cast<double>(i);
          st.var[i] = 0.5 + 0.2 * static_cast<double>(i);
        }
        return ad::batchnorm2d(v[0], v[1], v[2], st, 1e-5, ad::Mode::eval);
      },
      {random_tensor({n, c, 2, 2}, rng), random_tensor({c}, rng, 0.5, 1.5), random_tensor({c}, rng)});

  const std::size_t d = dim(rng), k = dim(rng);
  run("dense", [](const auto& v) { return ad::dense(v[0], v[1], v[2]); },
      {random_tensor({n, d}, rng), random_tensor({d, k}, rng), random_tensor({k}, rng)});
  run("global_avg_pool", [](const auto& v) { return ad::global_avg_pool(v[0]); },
      {random_tensor({n, c, 3, 2}, rng)});

  std::vector<int> labels(n);
  std::uniform_int_distribution<int> lab(0, static_cast<int>(k) - 1);
  for (int& y : labels) y = lab(rng);
  run("cross_entropy_from_logits", [&](const auto& v) { return ad::cross_entropy_from_logits(v[0], labels); },
      {random_tensor({n, k}, rng, -3.0, 3.0)});
  run("weighted_sum",
      [](const auto& v) {
        const std::vector<double> w{0.2, 0.5, 0.3};
        return ad::weighted_sum(v, w);
      },
      {random_tensor({n, k}, rng), random_tensor({n, k}, rng), random_tensor({n, k}, rng)});
  run("smooth_max_abs_rows", [](const auto& v) { return ad::smooth_max_abs_rows(v[0], 0.5); },
      {random_tensor({n, d}, rng)});

  // Distinct, well separated logits keep the hinge away from its kinks.
  Tensor hinge_in = Tensor::zeros({n, k}, true);
  std::vector<std::size_t> perm(k);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < k; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t i = 0; i < k; ++i) hinge_in.mutable_values()[r * k + i] = 0.5 * static_cast<double>(perm[i]);
  }
  run("target_margin_hinge", [&](const auto& v) { return ad::target_margin_hinge(v[0], labels, 10.0); },
      {hinge_in});
  return out;
}

}  // namespace enres::testing
