#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "enres/ad/tensor.hpp"
#include "enres/net/enresnet.hpp"

namespace enres::attack {

using ad::Tensor;

/// A differentiable classifier as seen by an attacker.
class Classifier {
 public:
  virtual ~Classifier() = default;
  /// Logits [N,K] for x [N,...]; `key` selects the noise realization.
  virtual Tensor logits(const Tensor& x, std::uint64_t key) = 0;
  virtual bool stochastic() const = 0;
  /// Trainable tensors; attacks stop gradient accumulation into them.
  virtual std::vector<Tensor> parameters() const = 0;
};

/// Evaluation-mode view of an ensemble (batchnorm uses running statistics).
class EnsembleClassifier : public Classifier {
 public:
  explicit EnsembleClassifier(net::EnResNetModel& model) : model_(&model) {}
  Tensor logits(const Tensor& x, std::uint64_t key) override;
  bool stochastic() const override { return model_->stochastic(ad::Mode::eval); }
  std::vector<Tensor> parameters() const override { return model_->parameters(); }

 private:
  net::EnResNetModel* model_;
};

enum class AttackKind { fgsm, ifgsm, cw };

std::string to_string(AttackKind kind);
/// Throws ParameterError for names other than fgsm, ifgsm, cw.
AttackKind parse_attack_kind(const std::string& name);

struct AttackSpec {
  AttackKind kind = AttackKind::ifgsm;
  double epsilon = 8.0 / 255.0;
  double alpha = 2.0 / 255.0;
  int iters = 20;
  double cw_c = 10.0;
  double cw_kappa = 0.0;
  int cw_steps = 50;
  double cw_lr = 6e-4;
  int eot_runs = 5;
  bool random_init = false;  // ifgsm only: start from pgd_init

  void validate() const;
  /// Short label such as "ifgsm20" or "fgsm".
  std::string label() const;
};

struct AdversarialBatch {
  Tensor x_adv;
  std::vector<bool> success;  // misclassified (untargeted) or hit the target (cw)
};

/// Mean over `runs` passes of d(mean cross-entropy)/dx; pass r uses noise key
/// derive_key(key, {r}). A deterministic classifier is evaluated once.
Tensor eot_gradient(Classifier& model, const Tensor& x, std::span<const int> y, int runs, std::uint64_t key);

AdversarialBatch fgsm(Classifier& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec,
                      std::uint64_t key);
AdversarialBatch ifgsm(Classifier& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec,
                       std::uint64_t key);
/// clamp(x + U[-eps, eps], 0, 1), deterministic per key.
Tensor pgd_init(const Tensor& x, double epsilon, std::uint64_t key);
AdversarialBatch cw(Classifier& model, const Tensor& x, std::span<const int> targets, const AttackSpec& spec,
                    std::uint64_t key);

/// Class with the smallest logit per row (untargeted C&W goal).
std::vector<int> least_likely_targets(Classifier& model, const Tensor& x, std::uint64_t key);

/// Dispatches on spec.kind; for cw the targets are the least-likely classes
/// and success means misclassification with respect to `y`.
AdversarialBatch run_attack(Classifier& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec,
                            std::uint64_t key);

/// argmax per row of [N,K] values.
std::vector<int> predict(const Tensor& logits);

}  // namespace enres::attack
