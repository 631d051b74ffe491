#pragma once

#include <cstdint>
#include <vector>

#include "enres/lab/dataset.hpp"
#include "enres/net/enresnet.hpp"

namespace enres::lab {

struct PgdConfig {
  int iters = 10;
  double alpha = 2.0 / 255.0;
  double epsilon = 8.0 / 255.0;
  int eot_runs = 1;
};

struct TrainConfig {
  int epochs = 30;
  double lr0 = 0.1;
  std::vector<double> decay_fractions{0.4, 0.6, 0.8};
  double decay_factor = 10.0;
  std::size_t batch_size = 128;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  bool adversarial = false;
  PgdConfig pgd;
  bool learn_weights = false;  // one ensemble-weight update per epoch
  double lr_w = 0.01;
  std::uint64_t seed = 1;

  void validate() const;
  /// Learning rate in effect at a point `fraction` of the way through training.
  double lr_at_fraction(double fraction) const;
  double lr_at_epoch(int epoch) const;
};

struct TrainResult {
  net::EnResNetModel model;          // best-validation parameters
  double val_accuracy = 0.0;         // accuracy of `model` on the validation split
  int best_epoch = 0;                // 0: initialization
  std::vector<double> val_history;   // entry e: after epoch e (entry 0: initialization)
  std::vector<double> loss_history;  // mean training loss per epoch
  std::vector<std::vector<double>> weight_history;  // ensemble weights after each epoch
};

/// Fixed evaluation-time noise key used for validation and reports.
constexpr std::uint64_t eval_key = 0x4556414C;

/// Accuracy on a split in eval mode with a fixed noise key.
double accuracy(net::EnResNetModel& model, const Split& split, std::uint64_t key = eval_key,
                std::size_t batch = 500);

/// Minibatch SGD on cross-entropy (natural ERM); cfg.adversarial must be false.
TrainResult train_natural(const net::EnResNetModel& init, const Dataset& data, const TrainConfig& cfg);
/// PGD adversarial training; cfg.adversarial must be true.
TrainResult train_adversarial(const net::EnResNetModel& init, const Dataset& data, const TrainConfig& cfg);
/// Dispatches on cfg.adversarial.
TrainResult train(const net::EnResNetModel& init, const Dataset& data, const TrainConfig& cfg);

}  // namespace enres::lab
