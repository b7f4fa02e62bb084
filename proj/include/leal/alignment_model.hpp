#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "leal/cluster_sampler.hpp"
#include "leal/nn.hpp"
#include "leal/params.hpp"
#include "leal/rng.hpp"
#include "leal/tensor.hpp"

namespace leal {

struct AlignmentConfig {
  std::size_t dim = 100;
  std::size_t heads = 4;
  std::size_t depth = 1;
  std::size_t ffn_hidden = 0;  // 0 means dim
  /// Use the sampler's pretrained encoder g^S as f^S instead of a separate network.
  bool tie_secondary_encoder = false;
};

/// Self-attention and feed-forward on each stream, then cross-attention from the primary
/// record to its candidates followed by a feed-forward. Every sub-layer is residual.
struct AlignmentBlock {
  nn::MultiHeadAttention self_primary, self_secondary, cross;
  nn::Mlp ffn_primary, ffn_secondary, ffn_cross;
};

struct AlignmentModelState {
  AlignmentConfig config;
  nn::Mlp primary_encoder;    // f^P: m_p -> d -> d
  nn::Mlp secondary_encoder;  // f^S: m_s -> d -> d (unused when tied)
  std::vector<AlignmentBlock> blocks;
  nn::Linear head;  // d -> classes (or 1)

  std::size_t dim() const { return config.dim; }
  std::size_t outputs() const { return head.out_features(); }
  void collect(ParamList& out) const;
};

AlignmentModelState init_alignment_model(std::size_t primary_width, std::size_t secondary_width,
                                         std::size_t outputs, const AlignmentConfig& config, RngStream& rng);

/// f(x) for a batch of rows; throws DimensionError on a width mismatch.
Tensor encode_records(const nn::Mlp& encoder, const Tensor& x);

struct SoftAlignment {
  Tensor z_tilde;         // [B x d]: z_p + attention-weighted sum of candidates
  Tensor lambda;          // [B x K], averaged over heads
  Tensor lambda_by_head;  // [B x H x 1 x K]
};

/// Residual attention of each primary embedding z_p[b] over its candidates z_s[b].
/// z_p: [B x d] (or [d]); z_s: [B x K x d] (or [K x d]).
SoftAlignment soft_align(const nn::MultiHeadAttention& attention, const Tensor& z_p, const Tensor& z_s);

Tensor predict_head(const nn::Linear& head, const Tensor& z_tilde);

struct AlignOutput {
  Tensor prediction;                 // [B x outputs]
  std::vector<Tensor> lambda;        // per block, [B x K]
  std::vector<Tensor> lambda_heads;  // per block, [B x H x 1 x K]
};

/// Alignment and prediction for explicit candidates: x_s holds B*K rows, K per primary row.
/// `scale` ([B x K]) multiplies the candidate embeddings when given.
AlignOutput align_candidates(const AlignmentModelState& model, const nn::Mlp* tied_encoder, const Tensor& x_p,
                             const Tensor& x_s, std::size_t k, const std::optional<Tensor>& scale = std::nullopt);

struct ForwardResult;

struct ForwardOptions {
  SampleMode mode = SampleMode::train;
  std::size_t k = 5;
  /// Multiply each candidate embedding by p / detach(p) so the loss reaches the sampler.
  bool straight_through = true;
  /// Reuse the candidates and the detached probabilities of an earlier pass. The loss is
  /// then a smooth function of the parameters whose gradient is the straight-through one,
  /// which is what a finite-difference check can verify.
  const ForwardResult* frozen = nullptr;
};

struct ForwardResult {
  Tensor prediction;
  Tensor p;                            // [B x n_s]
  std::vector<std::size_t> candidates;  // B x K' row-major
  std::size_t k = 0;                   // K' = min(K, n_s)
  std::vector<Tensor> lambda;
  std::vector<Tensor> lambda_heads;
};

/// Sampler probabilities, candidate selection (stream forked per row in train mode),
/// candidate encoding, stacked soft alignment and the head.
ForwardResult model_forward(const Tensor& x_p, const Tensor& secondary, const ClusterSamplerState& sampler,
                            const AlignmentModelState& model, const ForwardOptions& options, const RngStream& stream);

}  // namespace leal
