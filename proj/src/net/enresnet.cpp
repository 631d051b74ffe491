#include "enres/net/enresnet.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "enres/common/error.hpp"
#include "enres/common/random.hpp"

namespace enres::net {

namespace {

constexpr double bn_eps = 1e-5;

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), the common framework default.
Tensor fan_in_uniform(ad::Shape shape, std::size_t fan_in, std::uint64_t key) {
  KeyedStream stream(key);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(ad::shape_numel(shape));
  for (double& e : v) e = stream.uniform(-bound, bound);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor copy_tensor(const Tensor& t) { return t.clone(); }

ResidualBlockParams clone_block(const ResidualBlockParams& b) {
  ResidualBlockParams c;
  c.gamma1 = copy_tensor(b.gamma1);
  c.beta1 = copy_tensor(b.beta1);
  c.conv1 = copy_tensor(b.conv1);
  c.gamma2 = copy_tensor(b.gamma2);
  c.beta2 = copy_tensor(b.beta2);
  c.conv2 = copy_tensor(b.conv2);
  c.stats1 = b.stats1;
  c.stats2 = b.stats2;
  return c;
}

TinyResNet clone_member(const TinyResNet& m) {
  TinyResNet c;
  c.in_channels = m.in_channels;
  c.width = m.width;
  c.classes = m.classes;
  c.noise_id = m.noise_id;
  c.stem = copy_tensor(m.stem);
  for (const auto& b : m.blocks) c.blocks.push_back(clone_block(b));
  c.fc_w = copy_tensor(m.fc_w);
  c.fc_b = copy_tensor(m.fc_b);
  return c;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void NoiseSpec::validate() const {
  if (!(a >= 0.0) || !std::isfinite(a)) throw ParameterError("noise scale a must be finite and >= 0");
}

double noise_std(const Tensor& pre_noise, const NoiseSpec& spec) {
  if (pre_noise.numel() == 0) throw ParameterError("noise_std of an empty tensor");
  if (spec.mode == NoiseMode::fixed) return spec.a;
  const auto v = pre_noise.values();
  double mean = 0.0;
  for (double e : v) mean += e;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double e : v) var += (e - mean) * (e - mean);
  var /= static_cast<double>(v.size());
  return spec.a * std::sqrt(var);
}

ResidualBlockParams ResidualBlockParams::init(std::size_t width, std::uint64_t key) {
  ResidualBlockParams p;
  p.gamma1 = Tensor::full({width}, 1.0, true);
  p.beta1 = Tensor::zeros({width}, true);
  p.conv1 = fan_in_uniform({width, width, 3, 3}, width * 9, derive_key(key, {1}));
  p.gamma2 = Tensor::full({width}, 1.0, true);
  p.beta2 = Tensor::zeros({width}, true);
  p.conv2 = fan_in_uniform({width, width, 3, 3}, width * 9, derive_key(key, {2}));
  p.stats1 = ad::BatchNormStats(width);
  p.stats2 = ad::BatchNormStats(width);
  return p;
}

Tensor residual_block_forward(const Tensor& x, ResidualBlockParams& p, const NoiseSpec& spec,
                              std::uint64_t stream_key, Mode mode) {
  Tensor h = ad::batchnorm2d(x, p.gamma1, p.beta1, p.stats1, bn_eps, mode);
  h = ad::conv2d(ad::relu(h), p.conv1, 1, 1);
  h = ad::batchnorm2d(h, p.gamma2, p.beta2, p.stats2, bn_eps, mode);
  h = ad::conv2d(ad::relu(h), p.conv2, 1, 1);
  Tensor y = ad::add(x, h);
  if (!spec.active(mode)) return y;
  const double sigma = noise_std(y, spec);
  if (sigma == 0.0) return y;
  return ad::add(y, ad::gaussian_sample(y.shape(), sigma, stream_key));
}

TinyResNet TinyResNet::init(std::size_t in_channels, std::size_t width, std::size_t n_blocks, std::size_t classes,
                            std::uint64_t seed) {
  if (in_channels == 0 || width == 0 || classes < 2) {
    throw ParameterError("TinyResNet needs in_channels >= 1, width >= 1 and at least two classes");
  }
  TinyResNet m;
  m.in_channels = in_channels;
  m.width = width;
  m.classes = classes;
  m.noise_id = derive_key(seed, {0x6E6F697365});
  m.stem = fan_in_uniform({width, in_channels, 3, 3}, in_channels * 9, derive_key(seed, {0}));
  for (std::size_t b = 0; b < n_blocks; ++b) m.blocks.push_back(ResidualBlockParams::init(width, derive_key(seed, {1, b})));
  m.fc_w = fan_in_uniform({width, classes}, width, derive_key(seed, {2}));
  m.fc_b = fan_in_uniform({classes}, width, derive_key(seed, {3}));
  return m;
}

Tensor TinyResNet::forward(const Tensor& x, const NoiseSpec& spec, std::uint64_t stream_key, Mode mode) {
  if (x.rank() != 4 || x.dim(1) != in_channels) {
    throw ParameterError("TinyResNet expects [N," + std::to_string(in_channels) + ",H,W] input, got " +
                         ad::shape_str(x.shape()));
  }
  Tensor h = ad::conv2d(x, stem, 1, 1);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    h = residual_block_forward(h, blocks[b], spec, derive_key(stream_key, {noise_id, b}), mode);
  }
  return ad::dense(ad::global_avg_pool(h), fc_w, fc_b);
}

std::vector<Tensor> TinyResNet::parameters() const {
  std::vector<Tensor> out{stem};
  for (const auto& b : blocks)
    for (const Tensor& t : b.parameters()) out.push_back(t);
  out.push_back(fc_w);
  out.push_back(fc_b);
  return out;
}

std::vector<std::pair<std::string, Tensor>> TinyResNet::named_state() const {
  std::vector<std::pair<std::string, Tensor>> out{{"stem", stem}};
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    const std::string p = "block" + std::to_string(i) + ".";
    const auto stats = [](const std::vector<double>& v) { return Tensor::from({v.size()}, v); };
    out.emplace_back(p + "bn1.gamma", b.gamma1);
    out.emplace_back(p + "bn1.beta", b.beta1);
    out.emplace_back(p + "bn1.mean", stats(b.stats1.mean));
    out.emplace_back(p + "bn1.var", stats(b.stats1.var));
    out.emplace_back(p + "conv1", b.conv1);
    out.emplace_back(p + "bn2.gamma", b.gamma2);
    out.emplace_back(p + "bn2.beta", b.beta2);
    out.emplace_back(p + "bn2.mean", stats(b.stats2.mean));
    out.emplace_back(p + "bn2.var", stats(b.stats2.var));
    out.emplace_back(p + "conv2", b.conv2);
  }
  out.emplace_back("fc.w", fc_w);
  out.emplace_back("fc.b", fc_b);
  return out;
}

EnResNetModel EnResNetModel::create(std::size_t n_members, std::size_t in_channels, std::size_t width,
                                    std::size_t blocks, std::size_t classes, const NoiseSpec& noise,
                                    std::uint64_t seed) {
  if (n_members == 0) throw ParameterError("an ensemble needs at least one member");
  noise.validate();
  EnResNetModel model;
  model.noise = noise;
  for (std::size_t m = 0; m < n_members; ++m) {
    model.members.push_back(TinyResNet::init(in_channels, width, blocks, classes, derive_key(seed, {m})));
  }
  model.weights.assign(n_members, 1.0 / static_cast<double>(n_members));
  return model;
}

void EnResNetModel::validate() const {
  if (members.empty()) throw ParameterError("an ensemble needs at least one member");
  if (weights.size() != members.size()) {
    throw ParameterError(std::to_string(weights.size()) + " ensemble weights for " + std::to_string(members.size()) +
                         " members");
  }
  double s = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw ParameterError("ensemble weights must be nonnegative");
    s += w;
  }
  if (std::abs(s - 1.0) > 1e-12) throw ParameterError("ensemble weights must sum to 1, got " + format_double(s));
  for (const auto& m : members) {
    if (m.in_channels != members[0].in_channels || m.classes != members[0].classes) {
      throw ParameterError("ensemble members disagree on input channels or class count");
    }
  }
  noise.validate();
}

std::vector<Tensor> EnResNetModel::parameters() const {
  std::vector<Tensor> out;
  for (const auto& m : members)
    for (const Tensor& t : m.parameters()) out.push_back(t);
  return out;
}

EnResNetModel EnResNetModel::clone() const {
  EnResNetModel c;
  for (const auto& m : members) c.members.push_back(clone_member(m));
  c.weights = weights;
  c.noise = noise;
  return c;
}

Tensor ensemble_forward(EnResNetModel& model, const Tensor& x, Mode mode, std::uint64_t stream_key) {
  if (model.members.size() == 1 && model.weights.size() == 1 && model.weights[0] == 1.0) {
    return model.members[0].forward(x, model.noise, stream_key, mode);
  }
  if (model.weights.size() != model.members.size()) throw ParameterError("ensemble weight count mismatch");
  std::vector<Tensor> logits;
  logits.reserve(model.members.size());
  for (auto& m : model.members) logits.push_back(m.forward(x, model.noise, stream_key, mode));
  return ad::weighted_sum(logits, model.weights);
}

std::vector<double> ensemble_weight_grads(std::span<const Tensor> member_logits, std::span<const int> labels,
                                          std::span<const double> w) {
  if (member_logits.empty() || member_logits.size() != w.size()) {
    throw ParameterError("ensemble_weight_grads: " + std::to_string(member_logits.size()) + " members vs " +
                         std::to_string(w.size()) + " weights");
  }
  const Tensor& first = member_logits[0];
  if (first.rank() != 2) throw ParameterError("ensemble_weight_grads expects [N,K] logits");
  const std::size_t N = first.dim(0), K = first.dim(1);
  for (const Tensor& t : member_logits) {
    if (t.shape() != first.shape()) throw ParameterError("ensemble_weight_grads: member logit shapes differ");
  }
  if (labels.size() != N) throw ParameterError("ensemble_weight_grads: label count mismatch");

  std::vector<double> combined(N * K, 0.0);
  for (std::size_t m = 0; m < w.size(); ++m)
    for (std::size_t i = 0; i < N * K; ++i) combined[i] += w[m] * member_logits[m].values()[i];
  const std::vector<double> p = ad::softmax_rows(combined, N, K);

  std::vector<double> grads(w.size(), 0.0);
  for (std::size_t m = 0; m < w.size(); ++m) {
    const auto y = member_logits[m].values();
    for (std::size_t i = 0; i < N; ++i) {
      const int t = labels[i];
      if (t < 0 || static_cast<std::size_t>(t) >= K) throw ParameterError("ensemble_weight_grads: label out of range");
      double expected = 0.0;
      for (std::size_t j = 0; j < K; ++j) expected += y[i * K + j] * p[i * K + j];
      grads[m] -= y[i * K + static_cast<std::size_t>(t)] - expected;
    }
  }
  return grads;
}

EnsembleWeightState update_ensemble_weights(const EnsembleWeightState& state, std::span<const double> grads) {
  if (grads.size() != state.w.size()) throw ParameterError("update_ensemble_weights: gradient count mismatch");
  EnsembleWeightState next = state;
  double s = 0.0;
  for (std::size_t k = 0; k < next.w.size(); ++k) {
    next.w[k] = std::max(0.0, state.w[k] - state.lr_w * grads[k]);
    s += next.w[k];
  }
  if (s > 0.0) {
    for (double& w : next.w) w /= s;
  } else {
    std::fill(next.w.begin(), next.w.end(), 1.0 / static_cast<double>(next.w.size()));
  }
  return next;
}

EnResNetModel integrate_separate(std::span<const EnResNetModel> models, std::span<const double> weights) {
  if (models.empty() || models.size() != weights.size()) {
    throw ParameterError("integrate_separate: " + std::to_string(models.size()) + " models vs " +
                         std::to_string(weights.size()) + " weights");
  }
  EnResNetModel out;
  out.noise = models[0].noise;
  double total = 0.0;
  for (std::size_t i = 0; i < models.size(); ++i) {
    const EnResNetModel& m = models[i];
    m.validate();
    if (m.members[0].in_channels != models[0].members[0].in_channels ||
        m.members[0].classes != models[0].members[0].classes) {
      throw ParameterError("integrate_separate: models disagree on input channels or class count");
    }
    if (m.noise.a != out.noise.a || m.noise.mode != out.noise.mode ||
        m.noise.active_in_eval != out.noise.active_in_eval) {
      throw ParameterError("integrate_separate: models use different noise specifications");
    }
    if (!(weights[i] >= 0.0)) throw ParameterError("integrate_separate: weights must be nonnegative");
    for (std::size_t k = 0; k < m.members.size(); ++k) {
      out.members.push_back(clone_member(m.members[k]));
      out.weights.push_back(weights[i] * m.weights[k]);
      total += weights[i] * m.weights[k];
    }
  }
  if (!(total > 0.0)) throw ParameterError("integrate_separate: weights sum to zero");
  for (double& w : out.weights) w /= total;
  return out;
}

std::string spec_record(const EnResNetModel& model) {
  std::ostringstream os;
  os << "enresnet 1\n";
  os << "members " << model.members.size() << "\n";
  os << "noise " << (model.noise.mode == NoiseMode::scaled ? "scaled" : "fixed") << " " << format_double(model.noise.a)
     << " " << (model.noise.active_in_eval ? "eval_on" : "eval_off") << "\n";
  for (std::size_t k = 0; k < model.members.size(); ++k) {
    const TinyResNet& m = model.members[k];
    os << "member " << k << " in=" << m.in_channels << " width=" << m.width << " blocks=" << m.blocks.size()
       << " classes=" << m.classes << " noise_id=" << m.noise_id << " weight=" << format_double(model.weights[k])
       << "\n";
  }
  return os.str();
}

EnResNetModel model_from_spec_record(const std::string& record) {
  std::istringstream is(record);
  std::string word;
  int version = 0;
  std::size_t n = 0;
  if (!(is >> word >> version) || word != "enresnet" || version != 1) {
    throw FormatError("model spec record: bad header");
  }
  if (!(is >> word >> n) || word != "members" || n == 0) throw FormatError("model spec record: bad member count");
  EnResNetModel model;
  std::string mode, eval;
  if (!(is >> word >> mode >> model.noise.a >> eval) || word != "noise" || (mode != "scaled" && mode != "fixed") ||
      (eval != "eval_on" && eval != "eval_off")) {
    throw FormatError("model spec record: bad noise line");
  }
  model.noise.mode = mode == "scaled" ? NoiseMode::scaled : NoiseMode::fixed;
  model.noise.active_in_eval = eval == "eval_on";
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t index = 0, in = 0, width = 0, blocks = 0, classes = 0;
    std::uint64_t noise_id = 0;
    double weight = 0.0;
    std::string line;
    if (!(is >> word >> index) || word != "member" || index != k || !std::getline(is, line)) {
      throw FormatError("model spec record: bad member line " + std::to_string(k));
    }
    if (std::sscanf(line.c_str(), " in=%zu width=%zu blocks=%zu classes=%zu noise_id=%" SCNu64 " weight=%lf", &in, &width,
                    &blocks, &classes, &noise_id, &weight) != 6) {
      throw FormatError("model spec record: bad member fields on line " + std::to_string(k));
    }
    TinyResNet m = TinyResNet::init(in, width, blocks, classes, k);
    m.noise_id = noise_id;
    model.members.push_back(std::move(m));
    model.weights.push_back(weight);
  }
  model.validate();
  return model;
}

}  // namespace enres::net
