#pragma once

#include <cstdint>
#include <vector>

#include "enres/ad/tensor.hpp"

namespace enres::ad {

/// Heavy-ball SGD with L2 weight decay folded into the gradient.
struct SgdState {
  std::vector<std::vector<double>> velocity;  // lazily sized to the parameters
};

/// v <- momentum*v + (grad + weight_decay*param); param <- param - lr*v.
/// Parameters without an accumulated gradient are treated as having grad 0.
void sgd_momentum_step(std::vector<Tensor>& params, SgdState& state, double lr, double momentum,
                       double weight_decay);

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
};

/// Bias-corrected Adam; increments state.step by one per call.
void adam_step(std::vector<Tensor>& params, AdamState& state, double lr, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8);

}  // namespace enres::ad
