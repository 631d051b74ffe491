#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>

#include "enres/attack/attacks.hpp"
#include "enres/lab/dataset.hpp"
#include "enres/net/enresnet.hpp"

namespace enres::lab {

struct EvalReport {
  double a_nat = 0.0;
  std::map<std::string, double> a_rob;                // attack label -> accuracy
  std::optional<std::map<std::string, double>> blind;  // oracle name -> accuracy
  double seconds = 0.0;
  std::size_t n_examples = 0;
};

/// Natural accuracy plus robust accuracy for every attack, on the same
/// examples, in batches of `batch`. All noise keys derive from `key`.
EvalReport evaluate(net::EnResNetModel& model, const Split& data, std::span<const attack::AttackSpec> attacks,
                    std::uint64_t key, std::size_t batch = 250);

/// Adversarial examples crafted white-box on `oracle`, classified by `target`.
/// The report's a_nat is the target's clean accuracy and blind[oracle_name]
/// its accuracy on the transferred examples.
EvalReport evaluate_blind(net::EnResNetModel& target, net::EnResNetModel& oracle, const std::string& oracle_name,
                          const Split& data, const attack::AttackSpec& spec, std::uint64_t key,
                          std::size_t batch = 250);

}  // namespace enres::lab
