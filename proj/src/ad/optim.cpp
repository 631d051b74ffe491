#include "enres/ad/optim.hpp"

#include <cmath>

#include "enres/common/error.hpp"

namespace enres::ad {

namespace {

void size_buffers(std::vector<std::vector<double>>& buffers, const std::vector<Tensor>& params) {
  if (buffers.empty()) {
    for (const Tensor& p : params) buffers.emplace_back(p.numel(), 0.0);
    return;
  }
  if (buffers.size() != params.size()) throw ParameterError("optimizer state does not match parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (buffers[i].size() != params[i].numel()) {
      throw ParameterError("optimizer buffer " + std::to_string(i) + " does not match parameter shape " +
                           shape_str(params[i].shape()));
    }
  }
}

}  // namespace

void sgd_momentum_step(std::vector<Tensor>& params, SgdState& state, double lr, double momentum,
                       double weight_decay) {
  size_buffers(state.velocity, params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    std::vector<double>& v = state.velocity[i];
    const bool has_grad = p.has_grad();
    std::span<const double> g = has_grad ? p.grad() : std::span<const double>{};
    std::span<double> w = p.mutable_values();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = (has_grad ? g[j] : 0.0) + weight_decay * w[j];
      v[j] = momentum * v[j] + gj;
      w[j] -= lr * v[j];
    }
  }
}

void adam_step(std::vector<Tensor>& params, AdamState& state, double lr, double beta1, double beta2, double eps) {
  size_buffers(state.m, params);
  size_buffers(state.v, params);
  ++state.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (!p.has_grad()) continue;
    std::span<const double> g = p.grad();
    std::span<double> w = p.mutable_values();
    std::vector<double>& m = state.m[i];
    std::vector<double>& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
      v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
    }
  }
}

}  // namespace enres::ad
