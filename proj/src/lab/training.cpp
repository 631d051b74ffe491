#include "enres/lab/training.hpp"

#include <algorithm>
#include <cmath>

#include "enres/ad/ops.hpp"
#include "enres/ad/optim.hpp"
#include "enres/attack/attacks.hpp"
#include "enres/common/error.hpp"
#include "enres/common/random.hpp"

namespace enres::lab {

namespace {

/// Consecutive chunks of `order`; a trailing single example joins the
/// previous chunk so train-mode batchnorm always sees two or more rows.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t batch) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += batch) {
    out.emplace_back(order.begin() + static_cast<long>(i),
                     order.begin() + static_cast<long>(std::min(order.size(), i + batch)));
  }
  if (out.size() > 1 && out.back().size() == 1) {
    out[out.size() - 2].push_back(out.back()[0]);
    out.pop_back();
  }
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

void learn_weights(net::EnResNetModel& model, const Split& train, double lr_w) {
  std::vector<Tensor> logits;
  for (auto& m : model.members) logits.push_back(m.forward(train.x, model.noise, eval_key, ad::Mode::eval));
  std::vector<double> g = net::ensemble_weight_grads(logits, train.y, model.weights);
  for (double& v : g) v /= static_cast<double>(train.size());
  model.weights = net::update_ensemble_weights({model.weights, lr_w}, g).w;
}

TrainResult run_training(const net::EnResNetModel& init, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  init.validate();
  net::EnResNetModel model = init.clone();
  std::vector<Tensor> params = model.parameters();
  ad::SgdState sgd;

  TrainResult result;
  result.model = model.clone();
  result.val_accuracy = accuracy(model, data.val);
  result.val_history.push_back(result.val_accuracy);

  attack::AttackSpec pgd;
  pgd.kind = attack::AttackKind::ifgsm;
  pgd.random_init = true;
  pgd.iters = cfg.pgd.iters;
  pgd.alpha = cfg.pgd.alpha;
  pgd.epsilon = cfg.pgd.epsilon;
  pgd.eot_runs = cfg.pgd.eot_runs;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr_at_epoch(epoch);
    const auto e = static_cast<std::uint64_t>(epoch);
    const auto batches = make_batches(shuffled_indices(data.train.size(), derive_key(cfg.seed, {0x65706F, e})),
                                      cfg.batch_size);
    double loss_sum = 0.0;
    for (std::size_t step = 0; step < batches.size(); ++step) {
      const Split batch = data.train.subset(batches[step]);
      Tensor xb = data.image_shaped ? augment(batch.x, derive_key(cfg.seed, {0x617567, e, step})) : batch.x;
      try {
        if (cfg.adversarial) {
          attack::EnsembleClassifier victim(model);
          const Tensor clean = xb;
          xb = attack::ifgsm(victim, clean, batch.y, pgd, derive_key(cfg.seed, {0x706764, e, step})).x_adv;
          if (max_abs_diff(xb, clean) > cfg.pgd.epsilon + 1e-9) {
            throw std::logic_error("PGD perturbation exceeded epsilon during training");
          }
        }
        for (Tensor& p : params) p.zero_grad();
        const Tensor logits = net::ensemble_forward(model, xb, ad::Mode::train, derive_key(cfg.seed, {0x666F72, e, step}));
        const Tensor loss = ad::cross_entropy_from_logits(logits, batch.y);
        ad::backward(loss);
        ad::sgd_momentum_step(params, sgd, lr, cfg.momentum, cfg.weight_decay);
        for (const Tensor& p : params) {
          for (double v : p.values())
            if (!std::isfinite(v)) throw NonFiniteError("non-finite parameter after optimizer step");
        }
        loss_sum += loss.item() * static_cast<double>(batch.size());
      } catch (const NonFiniteError& err) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + " step " + std::to_string(step) +
                                  ": " + err.what(),
                              static_cast<long>(step));
      }
    }
    result.loss_history.push_back(loss_sum / static_cast<double>(data.train.size()));
    if (cfg.learn_weights && model.members.size() > 1) learn_weights(model, data.train, cfg.lr_w);
    result.weight_history.push_back(model.weights);

    const double val = accuracy(model, data.val);
    result.val_history.push_back(val);
    if (val >= result.val_accuracy) {
      result.val_accuracy = val;
      result.best_epoch = epoch + 1;
      result.model = model.clone();
    }
  }
  return result;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 0) throw ParameterError("epochs must be >= 0");
  if (!(lr0 > 0.0)) throw ParameterError("lr0 must be > 0");
  if (!(decay_factor > 0.0)) throw ParameterError("decay_factor must be > 0");
  for (std::size_t i = 0; i < decay_fractions.size(); ++i) {
    if (i > 0 && !(decay_fractions[i] > decay_fractions[i - 1])) {
      throw ParameterError("decay fractions must be strictly increasing");
    }
  }
  if (batch_size < 2) throw ParameterError("batch_size must be >= 2");
  if (pgd.iters < 1 || !(pgd.alpha > 0.0) || !(pgd.epsilon >= 0.0) || pgd.eot_runs < 1) {
    throw ParameterError("pgd needs iters >= 1, alpha > 0, epsilon >= 0, eot_runs >= 1");
  }
  if (adversarial && pgd.alpha > pgd.epsilon && pgd.epsilon > 0.0) throw ParameterError("pgd.alpha must be <= pgd.epsilon");
  if (!(lr_w >= 0.0)) throw ParameterError("lr_w must be >= 0");
}

double TrainConfig::lr_at_fraction(double fraction) const {
  double lr = lr0;
  for (double f : decay_fractions)
    if (fraction >= f) lr /= decay_factor;
  return lr;
}

double TrainConfig::lr_at_epoch(int epoch) const {
  return lr_at_fraction(epochs > 0 ? static_cast<double>(epoch) / epochs : 0.0);
}

double accuracy(net::EnResNetModel& model, const Split& split, std::uint64_t key, std::size_t batch) {
  if (split.size() == 0) throw ParameterError("accuracy of an empty split");
  std::size_t correct = 0;
  for (std::size_t start = 0; start < split.size(); start += batch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(split.size(), start + batch); ++i) idx.push_back(i);
    const Split part = split.subset(idx);
    const std::vector<int> pred =
        attack::predict(net::ensemble_forward(model, part.x, ad::Mode::eval, derive_key(key, {start})));
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == part.y[i];
  }
  return static_cast<double>(correct) / static_cast<double>(split.size());
}

TrainResult train_natural(const net::EnResNetModel& init, const Dataset& data, const TrainConfig& cfg) {
  if (cfg.adversarial) throw ParameterError("train_natural called with an adversarial config");
  return run_training(init, data, cfg);
}

TrainResult train_adversarial(const net::EnResNetModel& init, const Dataset& data, const TrainConfig& cfg) {
  if (!cfg.adversarial) throw ParameterError("train_adversarial called with a natural config");
  return run_training(init, data, cfg);
}

TrainResult train(const net::EnResNetModel& init, const Dataset& data, const TrainConfig& cfg) {
  return run_training(init, data, cfg);
}

}  // namespace enres::lab
