#include "enres/lab/evaluate.hpp"

#include <algorithm>
#include <chrono>

#include "enres/common/error.hpp"
#include "enres/common/random.hpp"

namespace enres::lab {

namespace {

std::vector<Split> batches_of(const Split& data, std::size_t batch) {
  std::vector<Split> out;
  for (std::size_t start = 0; start < data.size(); start += batch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(data.size(), start + batch); ++i) idx.push_back(i);
    out.push_back(data.subset(idx));
  }
  return out;
}

std::size_t count_correct(attack::Classifier& model, const Tensor& x, std::span<const int> y, std::uint64_t key) {
  const std::vector<int> pred = attack::predict(model.logits(x, key));
  std::size_t c = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) c += pred[i] == y[i];
  return c;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

EvalReport evaluate(net::EnResNetModel& model, const Split& data, std::span<const attack::AttackSpec> attacks,
                    std::uint64_t key, std::size_t batch) {
  if (data.size() == 0) throw ParameterError("evaluate needs a non-empty split");
  const auto t0 = std::chrono::steady_clock::now();
  attack::EnsembleClassifier victim(model);
  const auto parts = batches_of(data, batch);
  EvalReport report;
  report.n_examples = data.size();

  std::size_t correct = 0;
  for (std::size_t b = 0; b < parts.size(); ++b) {
    correct += count_correct(victim, parts[b].x, parts[b].y, derive_key(key, {0x6E6174, b}));
  }
  report.a_nat = static_cast<double>(correct) / static_cast<double>(data.size());

  for (std::size_t a = 0; a < attacks.size(); ++a) {
    std::size_t kept = 0;
    for (std::size_t b = 0; b < parts.size(); ++b) {
      const auto adv = attack::run_attack(victim, parts[b].x, parts[b].y, attacks[a], derive_key(key, {0x61746B, a, b}));
      kept += count_correct(victim, adv.x_adv, parts[b].y, derive_key(key, {0x6E6174, b}));
    }
    report.a_rob[attacks[a].label()] = static_cast<double>(kept) / static_cast<double>(data.size());
  }
  report.seconds = seconds_since(t0);
  return report;
}

EvalReport evaluate_blind(net::EnResNetModel& target, net::EnResNetModel& oracle, const std::string& oracle_name,
                          const Split& data, const attack::AttackSpec& spec, std::uint64_t key, std::size_t batch) {
  if (data.size() == 0) throw ParameterError("evaluate_blind needs a non-empty split");
  if (target.members[0].in_channels != oracle.members[0].in_channels ||
      target.members[0].classes != oracle.members[0].classes) {
    throw ParameterError("evaluate_blind: target and oracle disagree on input channels or class count");
  }
  const auto t0 = std::chrono::steady_clock::now();
  attack::EnsembleClassifier tgt(target);
  attack::EnsembleClassifier orc(oracle);
  const auto parts = batches_of(data, batch);
  EvalReport report;
  report.n_examples = data.size();
  std::size_t clean = 0, kept = 0;
  for (std::size_t b = 0; b < parts.size(); ++b) {
    const std::uint64_t eval = derive_key(key, {0x6E6174, b});
    clean += count_correct(tgt, parts[b].x, parts[b].y, eval);
    // Same attack key as evaluate() uses for attack 0, so target == oracle
    // reproduces the white-box number exactly.
    const auto adv = attack::run_attack(orc, parts[b].x, parts[b].y, spec, derive_key(key, {0x61746B, 0, b}));
    kept += count_correct(tgt, adv.x_adv, parts[b].y, eval);
  }
  report.a_nat = static_cast<double>(clean) / static_cast<double>(data.size());
  report.blind = std::map<std::string, double>{{oracle_name, static_cast<double>(kept) / static_cast<double>(data.size())}};
  report.seconds = seconds_since(t0);
  return report;
}

}  // namespace enres::lab
