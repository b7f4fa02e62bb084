#include "leal/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "leal/errors.hpp"

namespace leal::nn {

using autograd::grad_sink;
using autograd::make_result;

// ---------------------------------------------------------------------------
// Linear / LayerNorm / MLP
// ---------------------------------------------------------------------------

Linear Linear::init(std::size_t in, std::size_t out, RngStream& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::vector<double> w(in * out), b(out);
  for (double& x : w) x = rng.uniform(-bound, bound);
  for (double& x : b) x = rng.uniform(-bound, bound);
  return {Tensor::from({in, out}, std::move(w), true), Tensor::from({out}, std::move(b), true)};
}

Linear Linear::zeros(std::size_t in, std::size_t out) {
  return {Tensor::zeros({in, out}, true), Tensor::zeros({out}, true)};
}

Tensor Linear::forward(const Tensor& x) const {
  if (x.ndim() < 1 || x.shape().back() != in_features()) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                         shape_str(weight.shape()));
  }
  return add(matmul(x, weight), bias);
}

void Linear::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

LayerNorm LayerNorm::init(std::size_t width) {
  return {Tensor::full({width}, 1.0, true), Tensor::zeros({width}, true), 1e-5};
}

void LayerNorm::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gain", gain});
  out.push_back({prefix + ".shift", shift});
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps) {
  if (x.ndim() < 1 || x.shape().back() == 0) throw DimensionError("layer_norm: empty last axis " + shape_str(x.shape()));
  const std::size_t d = x.shape().back();
  if (gain.numel() != d || shift.numel() != d) {
    throw DimensionError("layer_norm: input " + shape_str(x.shape()) + " with gain " + shape_str(gain.shape()) +
                         " and shift " + shape_str(shift.shape()));
  }
  const std::size_t rows = x.numel() / d;
  const auto in = x.data();
  const auto g = gain.data();
  const auto s = shift.data();
  std::vector<double> out(x.numel());
  auto normed = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (row[j] - mu) * is;
      (*normed)[r * d + j] = xh;
      out[r * d + j] = xh * g[j] + s[j];
    }
  }
  Shape shape = x.shape();
  return make_result(std::move(shape), std::move(out), {x, gain, shift},
                     [x, gain, shift, normed, inv_std, rows, d](const TensorImpl& o) {
                       const auto g = gain.data();
                       const double* go = o.grad.data();
                       double* gx = x.requires_grad() ? grad_sink(x).data() : nullptr;
                       double* gg = gain.requires_grad() ? grad_sink(gain).data() : nullptr;
                       double* gs = shift.requires_grad() ? grad_sink(shift).data() : nullptr;
                       const double inv_d = 1.0 / static_cast<double>(d);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* xh = normed->data() + r * d;
                         const double* gr = go + r * d;
                         double mean_gy = 0.0, mean_gy_xh = 0.0;
                         for (std::size_t j = 0; j < d; ++j) {
                           const double gy = gr[j] * g[j];
                           mean_gy += gy;
                           mean_gy_xh += gy * xh[j];
                           if (gg) gg[j] += gr[j] * xh[j];
                           if (gs) gs[j] += gr[j];
                         }
                         if (!gx) continue;
                         mean_gy *= inv_d;
                         mean_gy_xh *= inv_d;
                         const double is = (*inv_std)[r];
                         for (std::size_t j = 0; j < d; ++j) {
                           gx[r * d + j] += is * (gr[j] * g[j] - mean_gy - xh[j] * mean_gy_xh);
                         }
                       }
                     });
}

Mlp Mlp::init(const MlpSpec& spec, RngStream& rng) {
  if (spec.layer_widths.size() < 2) throw std::invalid_argument("MlpSpec needs at least one layer");
  for (std::size_t w : spec.layer_widths) {
    if (w == 0) throw std::invalid_argument("MlpSpec widths must be positive");
  }
  Mlp mlp;
  mlp.spec = spec;
  for (std::size_t i = 0; i + 1 < spec.layer_widths.size(); ++i) {
    mlp.layers.push_back(Linear::init(spec.layer_widths[i], spec.layer_widths[i + 1], rng));
    const bool hidden = i + 2 < spec.layer_widths.size();
    if (hidden && spec.use_layer_norm) mlp.norms.push_back(LayerNorm::init(spec.layer_widths[i + 1]));
  }
  return mlp;
}

void Mlp::collect(const std::string& prefix, ParamList& out) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].collect(prefix + ".layers." + std::to_string(i), out);
    if (i < norms.size()) norms[i].collect(prefix + ".norms." + std::to_string(i), out);
  }
}

Tensor mlp_forward(const Mlp& mlp, const Tensor& x) {
  if (x.ndim() < 1 || x.shape().back() != mlp.in_features()) {
    throw DimensionError("mlp: input " + shape_str(x.shape()) + " but first layer expects width " +
                         std::to_string(mlp.in_features()));
  }
  Tensor h = x;
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    h = mlp.layers[i].forward(h);
    if (i + 1 == mlp.layers.size()) break;
    if (mlp.spec.use_layer_norm) h = layer_norm(h, mlp.norms[i].gain, mlp.norms[i].shift, mlp.norms[i].eps);
    h = relu(h);
  }
  return h;
}

Tensor pointwise_mlp(const Mlp& mlp, const Tensor& x) {
  if (mlp.layers.size() != 2 || mlp.in_features() != 1 || mlp.out_features() != 1 || mlp.spec.use_layer_norm) {
    throw DimensionError("pointwise_mlp: expects a plain 1 -> h -> 1 network");
  }
  const Tensor w1 = mlp.layers[0].weight, b1 = mlp.layers[0].bias;
  const Tensor w2 = mlp.layers[1].weight, b2 = mlp.layers[1].bias;
  const std::size_t h = w1.dim(1);
  const auto in = x.data();
  std::vector<double> out(in.size());
  {
    const double* a = w1.data().data();
    const double* c = b1.data().data();
    const double* u = w2.data().data();
    const double bias = b2.data()[0];
    for (std::size_t i = 0; i < in.size(); ++i) {
      double acc = bias;
      for (std::size_t j = 0; j < h; ++j) {
        const double pre = a[j] * in[i] + c[j];
        if (pre > 0.0) acc += u[j] * pre;
      }
      out[i] = acc;
    }
  }
  Shape shape = x.shape();
  return make_result(std::move(shape), std::move(out), {x, w1, b1, w2, b2}, [x, w1, b1, w2, b2, h](const TensorImpl& o) {
    const auto in = x.data();
    const double* a = w1.data().data();
    const double* c = b1.data().data();
    const double* u = w2.data().data();
    double* gx = x.requires_grad() ? grad_sink(x).data() : nullptr;
    std::vector<double> ga(h, 0.0), gc(h, 0.0), gu(h, 0.0);
    double gbias = 0.0;
    for (std::size_t i = 0; i < in.size(); ++i) {
      const double g = o.grad[i];
      if (g == 0.0) continue;
      gbias += g;
      double dx = 0.0;
      for (std::size_t j = 0; j < h; ++j) {
        const double pre = a[j] * in[i] + c[j];
        if (pre <= 0.0) continue;
        const double gp = g * u[j];
        gu[j] += g * pre;
        ga[j] += gp * in[i];
        gc[j] += gp;
        dx += gp * a[j];
      }
      if (gx) gx[i] += dx;
    }
    const auto accumulate = [](const Tensor& t, const std::vector<double>& src) {
      if (!t.requires_grad()) return;
      auto dst = grad_sink(t);
      for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
    };
    accumulate(w1, ga);
    accumulate(b1, gc);
    accumulate(w2, gu);
    accumulate(b2, std::vector<double>{gbias});
  });
}

// ---------------------------------------------------------------------------
// Attention
// ---------------------------------------------------------------------------

MultiHeadAttention MultiHeadAttention::init(std::size_t dim, std::size_t heads, RngStream& rng) {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("heads", "embedding width " + std::to_string(dim) + " is not divisible by " +
                                   std::to_string(heads) + " heads");
  }
  MultiHeadAttention mha;
  mha.dim = dim;
  mha.heads = heads;
  mha.query = Linear::init(dim, dim, rng);
  mha.key = Linear::init(dim, dim, rng);
  mha.value = Linear::init(dim, dim, rng);
  mha.output = Linear::init(dim, dim, rng);
  return mha;
}

MultiHeadAttention MultiHeadAttention::identity(std::size_t dim, std::size_t heads) {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("heads", "embedding width " + std::to_string(dim) + " is not divisible by " +
                                   std::to_string(heads) + " heads");
  }
  std::vector<double> eye(dim * dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) eye[i * dim + i] = 1.0;
  const auto ident = [&] { return Linear{Tensor::from({dim, dim}, eye, true), Tensor::zeros({dim}, true)}; };
  return {dim, heads, ident(), ident(), ident(), ident()};
}

void MultiHeadAttention::collect(const std::string& prefix, ParamList& out) const {
  query.collect(prefix + ".query", out);
  key.collect(prefix + ".key", out);
  value.collect(prefix + ".value", out);
  output.collect(prefix + ".output", out);
}

AttentionResult multi_head_attention(const MultiHeadAttention& mha, const Tensor& q, const Tensor& k,
                                     const Tensor& v) {
  if (mha.heads == 0 || mha.dim % mha.heads != 0) {
    throw ConfigError("heads", "embedding width " + std::to_string(mha.dim) + " is not divisible by " +
                                   std::to_string(mha.heads) + " heads");
  }
  const auto check = [&](const Tensor& t, const char* what) {
    if (t.ndim() != 3 || t.dim(2) != mha.dim) {
      throw DimensionError(std::string("attention: ") + what + " has shape " + shape_str(t.shape()) +
                           ", expected [b x n x " + std::to_string(mha.dim) + "]");
    }
  };
  check(q, "query");
  check(k, "key");
  check(v, "value");
  if (k.dim(0) != q.dim(0) || v.dim(0) != q.dim(0) || k.dim(1) != v.dim(1)) {
    throw DimensionError("attention: incompatible q/k/v shapes " + shape_str(q.shape()) + ", " +
                         shape_str(k.shape()) + ", " + shape_str(v.shape()));
  }
  if (k.dim(1) == 0) throw DimensionError("attention: no keys");
  const std::size_t b = q.dim(0), nq = q.dim(1), nk = k.dim(1), heads = mha.heads, dh = mha.head_dim();
  const auto split = [&](const Tensor& t, std::size_t n) {
    return permute(reshape(t, {b, n, heads, dh}), {0, 2, 1, 3});
  };
  const Tensor qh = split(mha.query.forward(q), nq);
  const Tensor kh = split(mha.key.forward(k), nk);
  const Tensor vh = split(mha.value.forward(v), nk);
  const Tensor scores = mul_scalar(bmm(qh, kh, true), 1.0 / std::sqrt(static_cast<double>(dh)));
  const Tensor weights = softmax(scores, 3);
  const Tensor context = reshape(permute(bmm(weights, vh), {0, 2, 1, 3}), {b, nq, mha.dim});
  return {mha.output.forward(context), weights};
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

Tensor compute_loss(Task task, const Tensor& prediction, const Tensor& target) {
  if (prediction.ndim() < 1 || prediction.dim(0) != target.numel() || target.numel() == 0) {
    throw DimensionError("loss: prediction " + shape_str(prediction.shape()) + " vs target " +
                         shape_str(target.shape()));
  }
  const std::size_t batch = target.numel();
  if (task == Task::classification) {
    if (prediction.ndim() != 2) throw DimensionError("loss: logits must be [batch x classes], got " + shape_str(prediction.shape()));
    const std::size_t classes = prediction.dim(1);
    std::vector<std::size_t> offsets(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      const double label = target.data()[i];
      if (!(label >= 0.0) || label >= static_cast<double>(classes) || label != std::floor(label)) {
        throw std::out_of_range("loss: class index " + std::to_string(label) + " outside [0, " +
                                std::to_string(classes) + ")");
      }
      offsets[i] = i * classes + static_cast<std::size_t>(label);
    }
    return neg(mean(take(log_softmax(prediction, 1), offsets, {batch})));
  }
  if (prediction.numel() != batch) {
    throw DimensionError("loss: regression prediction " + shape_str(prediction.shape()) + " vs target " +
                         shape_str(target.shape()));
  }
  return mean(square(sub(reshape(prediction, {batch}), reshape(target.detach(), {batch}))));
}

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

AdamW::AdamW(ParamList params, AdamWConfig config) : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.value.numel(), 0.0);
    v_.emplace_back(p.value.numel(), 0.0);
  }
}

void AdamW::step() {
  for (const auto& p : params_) {
    if (!p.value.has_grad()) continue;
    for (double g : p.value.impl()->grad) {
      if (!std::isfinite(g)) throw NumericError("AdamW: non-finite gradient in parameter " + p.name);
    }
  }
  ++step_;
  const double t = static_cast<double>(step_);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2 = 1.0 - std::pow(config_.beta2, t);
  const double decay = 1.0 - config_.lr * config_.weight_decay;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor value = params_[k].value;
    if (!value.has_grad()) continue;
    const auto& g = value.impl()->grad;
    auto w = value.mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] *= decay;
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

}  // namespace leal::nn
