#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "leal/nn.hpp"
#include "leal/params.hpp"
#include "leal/rng.hpp"
#include "leal/tensor.hpp"

namespace leal {

struct AutoencoderConfig {
  std::size_t depth = 2;  // 1: linear maps; 2: one hidden layer of width d with LayerNorm
  std::size_t dim = 100;
  std::size_t epochs = 100;
  double lr = 1e-3;
  std::size_t batch_size = 128;
  double weight_decay = 0.01;
};

struct AutoencoderResult {
  nn::Mlp encoder, decoder;
  std::vector<double> epoch_loss;   // mean reconstruction MSE per epoch
  std::vector<double> best_so_far;  // running minimum of epoch_loss
  double final_loss = 0.0;          // full-data MSE after the last epoch
};

/// Encoder / decoder shapes used for a given input width.
nn::MlpSpec encoder_spec(std::size_t input_width, const AutoencoderConfig& config);
nn::MlpSpec decoder_spec(std::size_t input_width, const AutoencoderConfig& config);

/// Minimizes ||X - phi(g(X))||^2 with AdamW over shuffled mini-batches.
/// Throws NumericError (naming the learning rate) when the loss stops being finite.
AutoencoderResult pretrain_autoencoder(const Tensor& secondary, const AutoencoderConfig& config,
                                       std::uint64_t seed);

/// k-means on the rows of `h`; the centroids become a trainable tensor.
Tensor init_centroids_kmeans(const Tensor& h, std::size_t clusters, RngStream& stream);

/// Student's t soft assignment: q[j, i] proportional to (1 + ||h_j - c_i||^2 / gamma)^(-(gamma+1)/2),
/// normalized over clusters i for every record j. h[n x d], centroids[C x d] -> [n x C].
Tensor in_cluster_probs(const Tensor& h, const Tensor& centroids, double gamma);

/// softmax(generator(x_p)) per primary row: [B x m] -> [B x C].
Tensor cluster_weights(const Tensor& x_p, const nn::Mlp& generator);

/// Scores s = w q^T per (primary row, secondary record), mapped through the pointwise
/// combiner and normalized over records: q[n x C], w[B x C] -> p[B x n].
Tensor sampling_probs(const Tensor& q, const Tensor& w, const nn::Mlp& combiner);

enum class SampleMode { train, infer };

/// K distinct indices from one probability row. Train: Gumbel-top-K on log p (sampling
/// without replacement). Infer: the K largest, ties to the lowest index. K is clamped to n.
std::vector<std::size_t> sample_candidates(std::span<const double> p, std::size_t k, SampleMode mode,
                                           RngStream& stream);

/// Row b of `p` uses stream.fork(b). Returns B x K' indices row-major, K' = min(K, n).
std::vector<std::size_t> sample_batch(const Tensor& p, std::size_t k, SampleMode mode, const RngStream& stream);

struct SamplerConfig {
  std::size_t clusters = 5;
  std::size_t dim = 100;
  double gamma = 1.0;
  std::size_t combiner_hidden = 16;
  AutoencoderConfig autoencoder;
};

struct ClusterSamplerState {
  nn::Mlp encoder;           // g^S, pretrained then fine-tuned jointly
  nn::Mlp decoder;           // phi^S, pretraining only
  Tensor centroids;          // [C x d]
  nn::Mlp weight_generator;  // m_p -> d -> C
  nn::Mlp combiner;          // 1 -> hidden -> 1, applied pointwise
  double gamma = 1.0;
  double pretrain_loss = 0.0;

  std::size_t clusters() const { return centroids.dim(0); }
  /// Parameters optimized in the supervised stage (the decoder is excluded).
  void collect(ParamList& out) const;
};

/// Every tensor allocated with its final shape and random (untrained) values; centroids are zero.
ClusterSamplerState sampler_skeleton(std::size_t secondary_width, std::size_t primary_width,
                                     const SamplerConfig& config, std::uint64_t seed);

/// Random generator/combiner, autoencoder pretraining on `secondary`, k-means centroids.
ClusterSamplerState init_sampler(const Tensor& secondary, std::size_t primary_width, const SamplerConfig& config,
                                 std::uint64_t seed);

struct SamplerOutput {
  Tensor q;  // [n x C]
  Tensor w;  // [B x C]
  Tensor p;  // [B x n]
};

/// Full probability pipeline for a batch of primary rows against every secondary record.
SamplerOutput sampler_forward(const ClusterSamplerState& sampler, const Tensor& x_p, const Tensor& secondary);

}  // namespace leal
