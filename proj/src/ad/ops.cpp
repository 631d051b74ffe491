#include "enres/ad/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "enres/common/error.hpp"
#include "enres/common/random.hpp"

namespace enres::ad {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ParameterError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

/// Accumulation target for an input, or nullptr if it does not track grad.
double* grad_target(const std::shared_ptr<TensorImpl>& in) {
  return in->requires_grad ? in->grad_buffer().data() : nullptr;
}

void check_labels(std::span<const int> labels, std::size_t n, std::size_t k, const char* op) {
  if (labels.size() != n) {
    throw ParameterError(std::string(op) + ": " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                         " rows");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw ParameterError(std::string(op) + ": label " + std::to_string(y) + " outside [0," + std::to_string(k) + ")");
    }
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [ia = a.shared(), ib = b.shared()](const TensorImpl& o) {
    for (const auto& in : {ia, ib}) {
      if (double* g = grad_target(in))
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [ia = a.shared(), ib = b.shared()](const TensorImpl& o) {
    if (double* g = grad_target(ia))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    if (double* g = grad_target(ib))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] -= o.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [ia = a.shared(), ib = b.shared()](const TensorImpl& o) {
    if (double* g = grad_target(ia))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * ib->values[i];
    if (double* g = grad_target(ib))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * ia->values[i];
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * s;
  return make_result(a.shape(), std::move(out), {a}, [ia = a.shared(), s](const TensorImpl& o) {
    if (double* g = grad_target(ia))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * s;
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + s;
  return make_result(a.shape(), std::move(out), {a}, [ia = a.shared()](const TensorImpl& o) {
    if (double* g = grad_target(ia))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] > 0.0 ? x.values()[i] : 0.0;
  return make_result(x.shape(), std::move(out), {x}, [ix = x.shared()](const TensorImpl& o) {
    // Subgradient 0 at x == 0.
    if (double* g = grad_target(ix))
      for (std::size_t i = 0; i < o.grad.size(); ++i)
        if (ix->values[i] > 0.0) g[i] += o.grad[i];
  });
}

Tensor tanh(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.values()[i]);
  return make_result(x.shape(), std::move(out), {x}, [ix = x.shared()](const TensorImpl& o) {
    if (double* g = grad_target(ix))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * (1.0 - o.values[i] * o.values[i]);
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return make_result({1}, {s}, {x}, [ix = x.shared()](const TensorImpl& o) {
    if (double* g = grad_target(ix))
      for (std::size_t i = 0; i < ix->values.size(); ++i) g[i] += o.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum_rows(const Tensor& x) {
  const std::size_t n = x.dim(0);
  const std::size_t row = x.numel() / n;
  std::vector<double> out(n, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t i = 0; i < row; ++i) out[r] += x.values()[r * row + i];
  return make_result({n}, std::move(out), {x}, [ix = x.shared(), row](const TensorImpl& o) {
    if (double* g = grad_target(ix))
      for (std::size_t i = 0; i < ix->values.size(); ++i) g[i] += o.grad[i / row];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ParameterError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) + " changes element count");
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_result(std::move(shape), std::move(out), {x}, [ix = x.shared()](const TensorImpl& o) {
    if (double* g = grad_target(ix))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
  });
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t stride, std::size_t padding) {
  if (x.rank() != 4 || kernel.rank() != 4) throw ParameterError("conv2d expects rank-4 input and kernel");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t F = kernel.dim(0), KH = kernel.dim(2), KW = kernel.dim(3);
  if (kernel.dim(1) != C) {
    throw ParameterError("conv2d: kernel " + shape_str(kernel.shape()) + " does not match input " + shape_str(x.shape()));
  }
  if (KH % 2 == 0 || KW % 2 == 0) throw ParameterError("conv2d: kernel extents must be odd");
  if (stride == 0) throw ParameterError("conv2d: stride must be positive");
  if (H + 2 * padding < KH || W + 2 * padding < KW) throw ParameterError("conv2d: kernel larger than padded input");
  if ((H + 2 * padding - KH) % stride != 0 || (W + 2 * padding - KW) % stride != 0) {
    throw ParameterError("conv2d: output extent is not integral for this stride");
  }
  const std::size_t OH = (H + 2 * padding - KH) / stride + 1;
  const std::size_t OW = (W + 2 * padding - KW) / stride + 1;

  // Visits every (output pixel, input pixel) pair linked by kernel tap (ki,kj).
  // body(out_index, in_index) is called for each valid pair of the tap.
  const auto for_each_tap = [=](std::size_t ki, std::size_t kj, auto&& body) {
    for (std::size_t oh = 0; oh < OH; ++oh) {
      const long ih = static_cast<long>(oh * stride + ki) - static_cast<long>(padding);
      if (ih < 0 || ih >= static_cast<long>(H)) continue;
      for (std::size_t ow = 0; ow < OW; ++ow) {
        const long iw = static_cast<long>(ow * stride + kj) - static_cast<long>(padding);
        if (iw < 0 || iw >= static_cast<long>(W)) continue;
        body(oh * OW + ow, static_cast<std::size_t>(ih) * W + static_cast<std::size_t>(iw));
      }
    }
  };

  const double* xv = x.values().data();
  const double* kv = kernel.values().data();
  std::vector<double> out(N * F * OH * OW, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t f = 0; f < F; ++f) {
      double* op = out.data() + (n * F + f) * OH * OW;
      for (std::size_t c = 0; c < C; ++c) {
        const double* ip = xv + (n * C + c) * H * W;
        for (std::size_t ki = 0; ki < KH; ++ki)
          for (std::size_t kj = 0; kj < KW; ++kj) {
            const double w = kv[((f * C + c) * KH + ki) * KW + kj];
            if (w == 0.0) continue;
            for_each_tap(ki, kj, [&](std::size_t o, std::size_t i) { op[o] += w * ip[i]; });
          }
      }
    }

  return make_result(
      {N, F, OH, OW}, std::move(out), {x, kernel},
      [ix = x.shared(), ik = kernel.shared(), N, C, H, W, F, KH, KW, OH, OW, for_each_tap](const TensorImpl& o) {
        double* gx = grad_target(ix);
        double* gk = grad_target(ik);
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t f = 0; f < F; ++f) {
            const double* go = o.grad.data() + (n * F + f) * OH * OW;
            for (std::size_t c = 0; c < C; ++c) {
              const double* ip = ix->values.data() + (n * C + c) * H * W;
              double* gi = gx ? gx + (n * C + c) * H * W : nullptr;
              for (std::size_t ki = 0; ki < KH; ++ki)
                for (std::size_t kj = 0; kj < KW; ++kj) {
                  const std::size_t widx = ((f * C + c) * KH + ki) * KW + kj;
                  const double w = ik->values[widx];
                  double acc = 0.0;
                  for_each_tap(ki, kj, [&](std::size_t oi, std::size_t ii) {
                    acc += go[oi] * ip[ii];
                    if (gi) gi[ii] += w * go[oi];
                  });
                  if (gk) gk[widx] += acc;
                }
            }
          }
      });
}

Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats, double eps,
                   Mode mode) {
  if (x.rank() != 4) throw ParameterError("batchnorm2d expects [N,C,H,W], got " + shape_str(x.shape()));
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (gamma.numel() != C || beta.numel() != C || stats.mean.size() != C || stats.var.size() != C) {
    throw ParameterError("batchnorm2d: parameter size does not match " + std::to_string(C) + " channels");
  }
  const std::size_t M = N * HW;
  const double* xv = x.values().data();
  const auto at = [=](std::size_t n, std::size_t c, std::size_t p) { return (n * C + c) * HW + p; };

  std::vector<double> inv_std(C), mu(C);
  if (mode == Mode::train) {
    if (M < 2) throw DegenerateBatchError("batchnorm2d: train mode needs N*H*W >= 2, got " + std::to_string(M));
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t p = 0; p < HW; ++p) s += xv[at(n, c, p)];
      const double m = s / static_cast<double>(M);
      double ss = 0.0;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t p = 0; p < HW; ++p) {
          const double d = xv[at(n, c, p)] - m;
          ss += d * d;
        }
      const double var = ss / static_cast<double>(M);
      mu[c] = m;
      inv_std[c] = 1.0 / std::sqrt(var + eps);
      stats.mean[c] = (1.0 - stats.momentum) * stats.mean[c] + stats.momentum * m;
      stats.var[c] = (1.0 - stats.momentum) * stats.var[c] + stats.momentum * ss / static_cast<double>(M - 1);
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = stats.mean[c];
      inv_std[c] = 1.0 / std::sqrt(stats.var[c] + eps);
    }
  }

  std::vector<double> xhat(x.numel()), out(x.numel());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < HW; ++p) {
        const std::size_t i = at(n, c, p);
        xhat[i] = (xv[i] - mu[c]) * inv_std[c];
        out[i] = gamma.values()[c] * xhat[i] + beta.values()[c];
      }

  return make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [ix = x.shared(), ig = gamma.shared(), ib = beta.shared(), xhat = std::move(xhat), inv_std, mode, N, C, HW, M,
       at](const TensorImpl& o) {
        double* gx = grad_target(ix);
        double* gg = grad_target(ig);
        double* gb = grad_target(ib);
        for (std::size_t c = 0; c < C; ++c) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t p = 0; p < HW; ++p) {
              const std::size_t i = at(n, c, p);
              sum_dy += o.grad[i];
              sum_dy_xhat += o.grad[i] * xhat[i];
            }
          if (gg) gg[c] += sum_dy_xhat;
          if (gb) gb[c] += sum_dy;
          if (!gx) continue;
          const double g = ig->values[c];
          if (mode == Mode::eval) {
            for (std::size_t n = 0; n < N; ++n)
              for (std::size_t p = 0; p < HW; ++p) {
                const std::size_t i = at(n, c, p);
                gx[i] += o.grad[i] * g * inv_std[c];
              }
          } else {
            const double m = static_cast<double>(M);
            for (std::size_t n = 0; n < N; ++n)
              for (std::size_t p = 0; p < HW; ++p) {
                const std::size_t i = at(n, c, p);
                gx[i] += g * inv_std[c] / m * (m * o.grad[i] - sum_dy - xhat[i] * sum_dy_xhat);
              }
          }
        }
      });
}

Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1 || x.dim(1) != w.dim(0) || b.dim(0) != w.dim(1)) {
    throw ParameterError("dense: incompatible shapes x" + shape_str(x.shape()) + " w" + shape_str(w.shape()) + " b" +
                         shape_str(b.shape()));
  }
  const std::size_t N = x.dim(0), D = x.dim(1), K = w.dim(1);
  std::vector<double> out(N * K);
  for (std::size_t n = 0; n < N; ++n) {
    double* row = out.data() + n * K;
    for (std::size_t k = 0; k < K; ++k) row[k] = b.values()[k];
    for (std::size_t d = 0; d < D; ++d) {
      const double xd = x.values()[n * D + d];
      const double* wr = w.values().data() + d * K;
      for (std::size_t k = 0; k < K; ++k) row[k] += xd * wr[k];
    }
  }
  return make_result({N, K}, std::move(out), {x, w, b},
                     [ix = x.shared(), iw = w.shared(), ib = b.shared(), N, D, K](const TensorImpl& o) {
                       double* gx = grad_target(ix);
                       double* gw = grad_target(iw);
                       double* gb = grad_target(ib);
                       for (std::size_t n = 0; n < N; ++n) {
                         const double* go = o.grad.data() + n * K;
                         if (gb)
                           for (std::size_t k = 0; k < K; ++k) gb[k] += go[k];
                         for (std::size_t d = 0; d < D; ++d) {
                           const double* wr = iw->values.data() + d * K;
                           if (gx) {
                             double acc = 0.0;
                             for (std::size_t k = 0; k < K; ++k) acc += go[k] * wr[k];
                             gx[n * D + d] += acc;
                           }
                           if (gw) {
                             const double xd = ix->values[n * D + d];
                             for (std::size_t k = 0; k < K; ++k) gw[d * K + k] += xd * go[k];
                           }
                         }
                       }
                     });
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 4) throw ParameterError("global_avg_pool expects [N,C,H,W]");
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  std::vector<double> out(N * C, 0.0);
  for (std::size_t r = 0; r < N * C; ++r) {
    double s = 0.0;
    for (std::size_t p = 0; p < HW; ++p) s += x.values()[r * HW + p];
    out[r] = s / static_cast<double>(HW);
  }
  return make_result({N, C}, std::move(out), {x}, [ix = x.shared(), HW](const TensorImpl& o) {
    if (double* g = grad_target(ix))
      for (std::size_t i = 0; i < ix->values.size(); ++i) g[i] += o.grad[i / HW] / static_cast<double>(HW);
  });
}

std::vector<double> softmax_rows(std::span<const double> logits, std::size_t rows, std::size_t cols) {
  std::vector<double> p(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = logits.data() + r * cols;
    const double zmax = *std::max_element(z, z + cols);
    double s = 0.0;
    for (std::size_t k = 0; k < cols; ++k) s += (p[r * cols + k] = std::exp(z[k] - zmax));
    for (std::size_t k = 0; k < cols; ++k) p[r * cols + k] /= s;
  }
  return p;
}

Tensor cross_entropy_from_logits(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw ParameterError("cross_entropy expects [N,K] logits");
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  check_labels(labels, N, K, "cross_entropy");
  double loss = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    const double* z = logits.values().data() + n * K;
    const double zmax = *std::max_element(z, z + K);
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) s += std::exp(z[k] - zmax);
    loss += zmax + std::log(s) - z[labels[n]];
  }
  loss /= static_cast<double>(N);
  std::vector<int> y(labels.begin(), labels.end());
  return make_result({1}, {loss}, {logits}, [il = logits.shared(), y = std::move(y), N, K](const TensorImpl& o) {
    double* g = grad_target(il);
    if (!g) return;
    const std::vector<double> p = softmax_rows(il->values, N, K);
    const double s = o.grad[0] / static_cast<double>(N);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t k = 0; k < K; ++k)
        g[n * K + k] += s * (p[n * K + k] - (static_cast<int>(k) == y[n] ? 1.0 : 0.0));
  });
}

Tensor weighted_sum(std::span<const Tensor> terms, std::span<const double> weights) {
  if (terms.empty() || terms.size() != weights.size()) {
    throw ParameterError("weighted_sum: " + std::to_string(terms.size()) + " terms vs " +
                         std::to_string(weights.size()) + " weights");
  }
  for (const Tensor& t : terms) require_same_shape(t, terms[0], "weighted_sum");
  std::vector<double> out(terms[0].numel(), 0.0);
  for (std::size_t k = 0; k < terms.size(); ++k)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += weights[k] * terms[k].values()[i];
  std::vector<Tensor> inputs(terms.begin(), terms.end());
  std::vector<double> w(weights.begin(), weights.end());
  std::vector<std::shared_ptr<TensorImpl>> impls;
  for (const Tensor& t : inputs) impls.push_back(t.shared());
  return make_result(terms[0].shape(), std::move(out), std::move(inputs),
                     [impls = std::move(impls), w = std::move(w)](const TensorImpl& o) {
                       for (std::size_t k = 0; k < impls.size(); ++k) {
                         if (double* g = grad_target(impls[k]))
                           for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += w[k] * o.grad[i];
                       }
                     });
}

Tensor smooth_max_abs_rows(const Tensor& x, double temperature) {
  if (!(temperature > 0.0)) throw ParameterError("smooth_max_abs_rows: temperature must be positive");
  const std::size_t n = x.dim(0);
  const std::size_t row = x.numel() / n;
  std::vector<double> out(n), weights(x.numel());  // weights = d out / d x
  for (std::size_t r = 0; r < n; ++r) {
    const double* v = x.values().data() + r * row;
    double m = 0.0;
    for (std::size_t i = 0; i < row; ++i) m = std::max(m, std::abs(v[i]));
    double s = 0.0;
    for (std::size_t i = 0; i < row; ++i) {
      const double ep = std::exp((v[i] - m) / temperature);
      const double en = std::exp((-v[i] - m) / temperature);
      s += ep + en;
      weights[r * row + i] = ep - en;
    }
    out[r] = m + temperature * std::log(s);
    for (std::size_t i = 0; i < row; ++i) weights[r * row + i] /= s;
  }
  return make_result({n}, std::move(out), {x}, [ix = x.shared(), weights = std::move(weights), row](const TensorImpl& o) {
    if (double* g = grad_target(ix))
      for (std::size_t i = 0; i < weights.size(); ++i) g[i] += o.grad[i / row] * weights[i];
  });
}

Tensor target_margin_hinge(const Tensor& logits, std::span<const int> targets, double kappa) {
  if (logits.rank() != 2) throw ParameterError("target_margin_hinge expects [N,K] logits");
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  check_labels(targets, N, K, "target_margin_hinge");
  if (K < 2) throw ParameterError("target_margin_hinge needs at least two classes");
  std::vector<double> out(N);
  // Per row: index of the strongest non-target logit, or K when the hinge is flat.
  std::vector<std::size_t> rival(N, K);
  for (std::size_t n = 0; n < N; ++n) {
    const double* z = logits.values().data() + n * K;
    const auto t = static_cast<std::size_t>(targets[n]);
    std::size_t best = (t == 0) ? 1 : 0;
    for (std::size_t k = 0; k < K; ++k)
      if (k != t && z[k] > z[best]) best = k;
    const double margin = z[best] - z[t];
    if (margin > -kappa) {
      out[n] = margin;
      rival[n] = best;
    } else {
      out[n] = -kappa;
    }
  }
  std::vector<int> t(targets.begin(), targets.end());
  return make_result({N}, std::move(out), {logits},
                     [il = logits.shared(), rival = std::move(rival), t = std::move(t), K](const TensorImpl& o) {
                       double* g = grad_target(il);
                       if (!g) return;
                       for (std::size_t n = 0; n < rival.size(); ++n) {
                         if (rival[n] == K) continue;
                         g[n * K + rival[n]] += o.grad[n];
                         g[n * K + static_cast<std::size_t>(t[n])] -= o.grad[n];
                       }
                     });
}

Tensor gaussian_sample(const Shape& shape, double std, std::uint64_t stream_key) {
  if (!(std >= 0.0)) throw ParameterError("gaussian_sample: std must be >= 0");
  Tensor t = Tensor::zeros(shape);
  if (std == 0.0) return t;
  KeyedStream stream(stream_key);
  for (double& v : t.mutable_values()) v = std * stream.normal();
  return t;
}

}  // namespace enres::ad
