#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "enres/ad/tensor.hpp"

namespace enres::ad {

// Elementwise; shapes must match exactly (no broadcasting).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Per-row sum of an [N, ...] tensor -> [N].
Tensor sum_rows(const Tensor& x);
/// Same storage order, new shape with equal element count.
Tensor reshape(const Tensor& x, Shape shape);

/// Cross-correlation. x [N,C,H,W], kernel [F,C,kh,kw] with odd kh, kw;
/// zero padding of `padding` on each side.
Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t stride = 1, std::size_t padding = 0);

enum class Mode { train, eval };

/// Running statistics updated by train-mode batchnorm (EMA, momentum 0.1).
struct BatchNormStats {
  std::vector<double> mean;
  std::vector<double> var;
  double momentum = 0.1;

  explicit BatchNormStats(std::size_t channels = 0) : mean(channels, 0.0), var(channels, 1.0) {}
};

/// Per-channel normalization of x [N,C,H,W]. Train mode uses batch statistics
/// (biased variance) and folds them into `stats` (unbiased variance); eval
/// mode normalizes with `stats`. Throws DegenerateBatchError when train mode
/// sees fewer than two samples per channel.
Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats, double eps,
                   Mode mode);

/// x [N,D] * w [D,K] + b [K].
Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b);
/// [N,C,H,W] -> [N,C] mean over the spatial axes.
Tensor global_avg_pool(const Tensor& x);

/// Mean over the batch of -log softmax(logits)[label]; logits [N,K].
Tensor cross_entropy_from_logits(const Tensor& logits, std::span<const int> labels);

/// sum_k weights[k] * terms[k]; all terms share one shape.
Tensor weighted_sum(std::span<const Tensor> terms, std::span<const double> weights);

/// Smooth per-row maximum of |x|: T * log(sum_i exp(x_i/T) + exp(-x_i/T)).
/// Upper-bounds max|x_i| by at most T*log(2*row_size). x [N, ...] -> [N].
Tensor smooth_max_abs_rows(const Tensor& x, double temperature);

/// Per-row targeted hinge max(-kappa, max_{i != t} z_i - z_t); logits [N,K] -> [N].
Tensor target_margin_hinge(const Tensor& logits, std::span<const int> targets, double kappa);

/// i.i.d. N(0, std^2) samples from the keyed stream; std = 0 gives zeros.
Tensor gaussian_sample(const Shape& shape, double std, std::uint64_t stream_key);

/// Row-wise softmax of [N,K] values (no graph).
std::vector<double> softmax_rows(std::span<const double> logits, std::size_t rows, std::size_t cols);

}  // namespace enres::ad
