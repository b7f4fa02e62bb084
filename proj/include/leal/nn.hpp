#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "leal/params.hpp"
#include "leal/rng.hpp"
#include "leal/tensor.hpp"

namespace leal::nn {

/// y = x W + b with W stored [in x out].
struct Linear {
  Tensor weight;
  Tensor bias;

  /// Uniform(-1/sqrt(in), 1/sqrt(in)) for both weight and bias.
  static Linear init(std::size_t in, std::size_t out, RngStream& rng);
  static Linear zeros(std::size_t in, std::size_t out);

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct LayerNorm {
  Tensor gain;
  Tensor shift;
  double eps = 1e-5;

  static LayerNorm init(std::size_t width);
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Per-row (x - mean) / sqrt(var + eps) * gain + shift over the last axis (population variance).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps = 1e-5);

struct MlpSpec {
  /// Input width followed by the output width of every layer; at least two entries.
  std::vector<std::size_t> layer_widths;
  bool use_layer_norm = false;
};

struct Mlp {
  MlpSpec spec;
  std::vector<Linear> layers;
  std::vector<LayerNorm> norms;  // one per hidden layer when spec.use_layer_norm

  static Mlp init(const MlpSpec& spec, RngStream& rng);
  std::size_t in_features() const { return spec.layer_widths.front(); }
  std::size_t out_features() const { return spec.layer_widths.back(); }
  void collect(const std::string& prefix, ParamList& out) const;
};

/// linear -> (LayerNorm) -> ReLU for each hidden layer, plain linear output.
Tensor mlp_forward(const Mlp& mlp, const Tensor& x);

/// Applies a scalar 1 -> h -> 1 ReLU network independently to every element of `x`.
/// Fused: the hidden activations are never materialized.
Tensor pointwise_mlp(const Mlp& mlp, const Tensor& x);

struct MultiHeadAttention {
  std::size_t dim = 0;
  std::size_t heads = 1;
  Linear query, key, value, output;

  static MultiHeadAttention init(std::size_t dim, std::size_t heads, RngStream& rng);
  /// Identity projections with zero bias; used to evaluate the bare attention formula.
  static MultiHeadAttention identity(std::size_t dim, std::size_t heads);
  std::size_t head_dim() const { return dim / heads; }
  void collect(const std::string& prefix, ParamList& out) const;
};

struct AttentionResult {
  Tensor output;   // [b, n_q, d]
  Tensor weights;  // [b, H, n_q, n_k]
};

/// Scaled dot-product attention per head with scale 1/sqrt(d/H), then the output projection.
AttentionResult multi_head_attention(const MultiHeadAttention& mha, const Tensor& q, const Tensor& k,
                                     const Tensor& v);

enum class Task { classification, regression };

/// Mean softmax cross-entropy over logits[b, classes] with integer-valued targets[b],
/// or mean squared error over values[b, 1] (or [b]) against targets[b].
Tensor compute_loss(Task task, const Tensor& prediction, const Tensor& target);

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Decoupled-weight-decay Adam. Parameters without an accumulated gradient are skipped.
class AdamW {
 public:
  AdamW(ParamList params, AdamWConfig config);

  void step();
  void zero_grad() { zero_grads(params_); }

  const ParamList& params() const { return params_; }
  const AdamWConfig& config() const { return config_; }
  std::size_t steps() const { return step_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  ParamList params_;
  AdamWConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t step_ = 0;
};

}  // namespace leal::nn
