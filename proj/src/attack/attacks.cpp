#include "enres/attack/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "enres/ad/ops.hpp"
#include "enres/ad/optim.hpp"
#include "enres/common/error.hpp"
#include "enres/common/random.hpp"

namespace enres::attack {

namespace {

constexpr double cw_squeeze = 1e-6;
constexpr double cw_temperature = 1e-3;
constexpr std::uint64_t init_label = 0x696E6974;

/// Turns off gradient tracking on the model parameters for its lifetime.
class FrozenParameters {
 public:
  explicit FrozenParameters(const Classifier& model) : params_(model.parameters()) {
    for (Tensor& p : params_) {
      was_tracked_.push_back(p.requires_grad());
      p.set_requires_grad(false);
    }
  }
  ~FrozenParameters() {
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i].set_requires_grad(was_tracked_[i]);
  }
  FrozenParameters(const FrozenParameters&) = delete;
  FrozenParameters& operator=(const FrozenParameters&) = delete;

 private:
  std::vector<Tensor> params_;
  std::vector<bool> was_tracked_;
};

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

int effective_runs(const Classifier& model, int runs) { return model.stochastic() ? runs : 1; }

std::vector<bool> untargeted_success(Classifier& model, const Tensor& x_adv, std::span<const int> y,
                                     std::uint64_t key) {
  const std::vector<int> pred = predict(model.logits(x_adv, key));
  std::vector<bool> out(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) out[i] = pred[i] != y[i];
  return out;
}

std::uint64_t success_key(std::uint64_t key) { return derive_key(key, {0x73756363}); }

}  // namespace

Tensor EnsembleClassifier::logits(const Tensor& x, std::uint64_t key) {
  return net::ensemble_forward(*model_, x, ad::Mode::eval, key);
}

std::string to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::fgsm:
      return "fgsm";
    case AttackKind::ifgsm:
      return "ifgsm";
    case AttackKind::cw:
      return "cw";
  }
  return "unknown";
}

AttackKind parse_attack_kind(const std::string& name) {
  if (name == "fgsm") return AttackKind::fgsm;
  if (name == "ifgsm") return AttackKind::ifgsm;
  if (name == "cw") return AttackKind::cw;
  throw ParameterError("unknown attack kind '" + name + "' (expected fgsm, ifgsm or cw)");
}

void AttackSpec::validate() const {
  if (!(epsilon >= 0.0)) throw ParameterError("attack epsilon must be >= 0");
  if (kind == AttackKind::ifgsm) {
    if (!(alpha > 0.0)) throw ParameterError("ifgsm alpha must be > 0");
    if (iters < 1) throw ParameterError("ifgsm iters must be >= 1");
  }
  if (kind == AttackKind::cw && (cw_steps < 1 || !(cw_lr > 0.0) || !(cw_c >= 0.0))) {
    throw ParameterError("cw needs steps >= 1, lr > 0 and c >= 0");
  }
  if (eot_runs < 1) throw ParameterError("eot_runs must be >= 1");
}

std::string AttackSpec::label() const {
  if (kind == AttackKind::ifgsm) return (random_init ? "pgd" : "ifgsm") + std::to_string(iters);
  return to_string(kind);
}

std::vector<int> predict(const Tensor& logits) {
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  std::vector<int> out(N);
  for (std::size_t n = 0; n < N; ++n) {
    const auto row = logits.values().subspan(n * K, K);
    out[n] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

Tensor eot_gradient(Classifier& model, const Tensor& x, std::span<const int> y, int runs, std::uint64_t key) {
  if (runs < 1) throw ParameterError("eot_gradient needs runs >= 1");
  runs = effective_runs(model, runs);
  FrozenParameters frozen(model);
  Tensor xr = Tensor::from(x.shape(), std::vector<double>(x.values().begin(), x.values().end()), true);
  for (int r = 0; r < runs; ++r) {
    const Tensor loss = ad::cross_entropy_from_logits(model.logits(xr, derive_key(key, {static_cast<std::uint64_t>(r)})), y);
    ad::backward(loss);
  }
  std::vector<double> g(xr.grad().begin(), xr.grad().end());
  for (double& v : g) v /= static_cast<double>(runs);
  return Tensor::from(x.shape(), std::move(g));
}

AdversarialBatch fgsm(Classifier& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec,
                      std::uint64_t key) {
  spec.validate();
  const Tensor g = eot_gradient(model, x, y, spec.eot_runs, derive_key(key, {0}));
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::clamp(x.values()[i] + spec.epsilon * sign(g.values()[i]), 0.0, 1.0);
  }
  AdversarialBatch batch{Tensor::from(x.shape(), std::move(out)), {}};
  batch.success = untargeted_success(model, batch.x_adv, y, success_key(key));
  return batch;
}

AdversarialBatch ifgsm(Classifier& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec,
                       std::uint64_t key) {
  spec.validate();
  const auto xv = x.values();
  std::vector<double> lo(x.numel()), hi(x.numel());
  for (std::size_t i = 0; i < lo.size(); ++i) {
    lo[i] = std::max(xv[i] - spec.epsilon, 0.0);
    hi[i] = std::min(xv[i] + spec.epsilon, 1.0);
  }
  Tensor cur = spec.random_init ? pgd_init(x, spec.epsilon, derive_key(key, {init_label})) : x.detach();
  for (int it = 0; it < spec.iters; ++it) {
    const Tensor g = eot_gradient(model, cur, y, spec.eot_runs, derive_key(key, {static_cast<std::uint64_t>(it)}));
    std::vector<double> next(cur.numel());
    for (std::size_t i = 0; i < next.size(); ++i) {
      next[i] = std::clamp(cur.values()[i] + spec.alpha * sign(g.values()[i]), lo[i], hi[i]);
    }
    cur = Tensor::from(x.shape(), std::move(next));
  }
  AdversarialBatch batch{cur, {}};
  batch.success = untargeted_success(model, batch.x_adv, y, success_key(key));
  return batch;
}

Tensor pgd_init(const Tensor& x, double epsilon, std::uint64_t key) {
  if (!(epsilon >= 0.0)) throw ParameterError("pgd_init epsilon must be >= 0");
  KeyedStream stream(key);
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double u = epsilon > 0.0 ? stream.uniform(-epsilon, epsilon) : 0.0;
    out[i] = std::clamp(x.values()[i] + u, 0.0, 1.0);
  }
  return Tensor::from(x.shape(), std::move(out));
}

std::vector<int> least_likely_targets(Classifier& model, const Tensor& x, std::uint64_t key) {
  const Tensor z = model.logits(x.detach(), key);
  const std::size_t N = z.dim(0), K = z.dim(1);
  std::vector<int> out(N);
  for (std::size_t n = 0; n < N; ++n) {
    const auto row = z.values().subspan(n * K, K);
    out[n] = static_cast<int>(std::min_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

AdversarialBatch cw(Classifier& model, const Tensor& x, std::span<const int> targets, const AttackSpec& spec,
                    std::uint64_t key) {
  spec.validate();
  const std::size_t N = x.dim(0);
  const std::size_t row = x.numel() / N;
  const int runs = effective_runs(model, spec.eot_runs);
  FrozenParameters frozen(model);

  std::vector<double> v0(x.numel());
  for (std::size_t i = 0; i < v0.size(); ++i) {
    const double s = std::clamp(x.values()[i], cw_squeeze, 1.0 - cw_squeeze);
    v0[i] = std::atanh(2.0 * s - 1.0);
  }
  Tensor v = Tensor::from(x.shape(), std::move(v0), true);
  const Tensor x_ref = x.detach();
  std::vector<Tensor> params{v};
  ad::AdamState adam;

  std::vector<double> best(x.values().begin(), x.values().end());
  std::vector<double> best_obj(N, std::numeric_limits<double>::infinity());
  std::vector<double> hinge_sum(N);

  // Step s evaluates the current candidate, records it if it is the best so
  // far, then (except after the last step) takes one Adam step.
  for (int step = 0; step <= spec.cw_steps; ++step) {
    v.zero_grad();
    const Tensor cand = ad::scale(ad::add_scalar(ad::tanh(v), 1.0), 0.5);
    const Tensor dist = ad::smooth_max_abs_rows(ad::sub(cand, x_ref), cw_temperature);
    std::fill(hinge_sum.begin(), hinge_sum.end(), 0.0);
    for (int r = 0; r < runs; ++r) {
      const std::uint64_t k = derive_key(key, {static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(r)});
      const Tensor hinge = ad::target_margin_hinge(model.logits(cand, k), targets, spec.cw_kappa);
      for (std::size_t n = 0; n < N; ++n) hinge_sum[n] += hinge.values()[n];
      if (step < spec.cw_steps) {
        const Tensor obj = ad::add(ad::scale(ad::sum(dist), 1.0 / runs), ad::scale(ad::sum(hinge), spec.cw_c / runs));
        ad::backward(obj);
      }
    }
    for (std::size_t n = 0; n < N; ++n) {
      double linf = 0.0;
      for (std::size_t i = 0; i < row; ++i) {
        linf = std::max(linf, std::abs(cand.values()[n * row + i] - x_ref.values()[n * row + i]));
      }
      const double obj = linf + spec.cw_c * hinge_sum[n] / runs;
      if (obj < best_obj[n]) {
        best_obj[n] = obj;
        std::copy_n(cand.values().begin() + static_cast<long>(n * row), row, best.begin() + static_cast<long>(n * row));
      }
    }
    if (step < spec.cw_steps) ad::adam_step(params, adam, spec.cw_lr);
  }

  AdversarialBatch batch{Tensor::from(x.shape(), std::move(best)), {}};
  const std::vector<int> pred = predict(model.logits(batch.x_adv, success_key(key)));
  batch.success.resize(N);
  for (std::size_t n = 0; n < N; ++n) batch.success[n] = pred[n] == targets[n];
  return batch;
}

AdversarialBatch run_attack(Classifier& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec,
                            std::uint64_t key) {
  switch (spec.kind) {
    case AttackKind::fgsm:
      return fgsm(model, x, y, spec, key);
    case AttackKind::ifgsm:
      return ifgsm(model, x, y, spec, key);
    case AttackKind::cw: {
      const std::vector<int> targets = least_likely_targets(model, x, derive_key(key, {0x746172}));
      AdversarialBatch batch = cw(model, x, targets, spec, key);
      batch.success = untargeted_success(model, batch.x_adv, y, success_key(key));
      return batch;
    }
  }
  throw ParameterError("unknown attack kind");
}

}  // namespace enres::attack
