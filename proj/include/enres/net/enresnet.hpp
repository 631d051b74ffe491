#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "enres/ad/ops.hpp"
#include "enres/ad/tensor.hpp"

namespace enres::net {

using ad::Mode;
using ad::Tensor;

enum class NoiseMode { scaled, fixed };

struct NoiseSpec {
  double a = 0.1;
  NoiseMode mode = NoiseMode::scaled;
  bool active_in_eval = true;

  void validate() const;
  /// True when a forward pass in `mode` injects noise.
  bool active(Mode mode) const noexcept { return a > 0.0 && (mode == Mode::train || active_in_eval); }
};

/// scaled: a * sqrt(population variance of all elements); fixed: a.
double noise_std(const Tensor& pre_noise, const NoiseSpec& spec);

/// Pre-activation residual mapping: two (batchnorm, relu, 3x3 conv) stages.
struct ResidualBlockParams {
  Tensor gamma1, beta1, conv1;
  Tensor gamma2, beta2, conv2;
  ad::BatchNormStats stats1, stats2;

  static ResidualBlockParams init(std::size_t width, std::uint64_t key);
  std::vector<Tensor> parameters() const { return {gamma1, beta1, conv1, gamma2, beta2, conv2}; }
};

/// y = x + F(x), plus N(0, noise_std(y)^2) drawn from `stream_key` when the
/// noise is active. The noise amplitude is a constant for differentiation.
Tensor residual_block_forward(const Tensor& x, ResidualBlockParams& params, const NoiseSpec& spec,
                              std::uint64_t stream_key, Mode mode);

/// Stem 3x3 conv to `width` channels, `blocks` residual blocks at constant
/// width, global average pooling and a dense classifier.
struct TinyResNet {
  std::size_t in_channels = 0;
  std::size_t width = 0;
  std::size_t classes = 0;
  std::uint64_t noise_id = 0;  // member-specific salt for noise streams
  Tensor stem;
  std::vector<ResidualBlockParams> blocks;
  Tensor fc_w, fc_b;

  static TinyResNet init(std::size_t in_channels, std::size_t width, std::size_t blocks, std::size_t classes,
                         std::uint64_t seed);

  /// Logits [N, classes] for x [N, in_channels, H, W].
  Tensor forward(const Tensor& x, const NoiseSpec& spec, std::uint64_t stream_key, Mode mode);

  std::vector<Tensor> parameters() const;
  /// Every tensor needed to reproduce the forward pass (parameters and
  /// batchnorm running statistics), with stable names.
  std::vector<std::pair<std::string, Tensor>> named_state() const;
};

struct EnResNetModel {
  std::vector<TinyResNet> members;
  std::vector<double> weights;  // on the simplex
  NoiseSpec noise;

  /// N structurally identical members with uniform weights; member m is
  /// initialized from derive_key(seed, {m}).
  static EnResNetModel create(std::size_t n_members, std::size_t in_channels, std::size_t width,
                              std::size_t blocks, std::size_t classes, const NoiseSpec& noise, std::uint64_t seed);

  void validate() const;
  std::vector<Tensor> parameters() const;
  bool stochastic(Mode mode) const noexcept { return noise.active(mode); }
  /// Deep copy; the copy shares no storage with the original.
  EnResNetModel clone() const;
};

/// sum_k w_k * logits_k(x); member k draws noise from a stream keyed by
/// (stream_key, member noise_id), so reordering members leaves outputs unchanged.
Tensor ensemble_forward(EnResNetModel& model, const Tensor& x, Mode mode, std::uint64_t stream_key);

/// dL/dw_k for L = sum_i CE(sum_m w_m y_i^m, t_i), each y^m an [N,K] logit block.
std::vector<double> ensemble_weight_grads(std::span<const Tensor> member_logits, std::span<const int> labels,
                                          std::span<const double> w);

struct EnsembleWeightState {
  std::vector<double> w;
  double lr_w = 0.01;
};

/// Gradient step, clamp at zero, renormalize; uniform when everything clamps.
EnsembleWeightState update_ensemble_weights(const EnsembleWeightState& state, std::span<const double> grads);

/// Flat ensemble of all members of `models`; member weights are scaled by the
/// model weights. Inputs are copied, never modified.
EnResNetModel integrate_separate(std::span<const EnResNetModel> models, std::span<const double> weights);

/// Human-readable model specification record (round-trips through parse).
std::string spec_record(const EnResNetModel& model);
/// Rebuilds an architecture with freshly initialized tensors from a record.
EnResNetModel model_from_spec_record(const std::string& record);

}  // namespace enres::net
