#include "leal/cluster_sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "leal/errors.hpp"
#include "leal/kmeans.hpp"

namespace leal {
namespace {

constexpr std::uint64_t kEncoderInitTag = 0x61;
constexpr std::uint64_t kSamplerInitTag = 0x62;
constexpr std::uint64_t kKMeansTag = 0x63;
constexpr std::uint64_t kAutoencoderShuffleTag = 0x64;

Tensor reconstruction_loss(const nn::Mlp& enc, const nn::Mlp& dec, const Tensor& x) {
  return mean(square(sub(mlp_forward(dec, mlp_forward(enc, x)), x)));
}

}  // namespace

nn::MlpSpec encoder_spec(std::size_t input_width, const AutoencoderConfig& c) {
  if (c.depth == 0) throw std::invalid_argument("autoencoder depth must be at least 1");
  std::vector<std::size_t> widths{input_width};
  for (std::size_t i = 0; i < c.depth; ++i) widths.push_back(c.dim);
  return {widths, true};
}

nn::MlpSpec decoder_spec(std::size_t input_width, const AutoencoderConfig& c) {
  if (c.depth == 0) throw std::invalid_argument("autoencoder depth must be at least 1");
  std::vector<std::size_t> widths;
  for (std::size_t i = 0; i < c.depth; ++i) widths.push_back(c.dim);
  widths.push_back(input_width);
  return {widths, true};
}

AutoencoderResult pretrain_autoencoder(const Tensor& secondary, const AutoencoderConfig& config,
                                       std::uint64_t seed) {
  if (secondary.ndim() != 2 || secondary.dim(0) == 0)
    throw std::invalid_argument("pretrain_autoencoder: secondary matrix is empty");
  if (config.batch_size == 0) throw std::invalid_argument("pretrain_autoencoder: batch_size must be positive");
  const std::size_t n = secondary.dim(0), m = secondary.dim(1);

  auto init = RngStream(seed, StreamLabel::init).fork(kEncoderInitTag);
  AutoencoderResult r;
  r.encoder = nn::Mlp::init(encoder_spec(m, config), init);
  r.decoder = nn::Mlp::init(decoder_spec(m, config), init);
  ParamList params;
  r.encoder.collect("encoder", params);
  r.decoder.collect("decoder", params);
  nn::AdamW opt(params, {.lr = config.lr, .weight_decay = config.weight_decay});

  const auto shuffle = RngStream(seed, StreamLabel::shuffle).fork(kAutoencoderShuffleTag);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    auto order = shuffle.fork(epoch).permutation(n);
    double total = 0.0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t stop = std::min(n, start + config.batch_size);
      std::span<const std::size_t> rows(order.data() + start, stop - start);
      const Tensor x = index_rows(secondary, rows);
      Tape tape;
      Tensor loss;
      {
        auto scope = tape.record();
        loss = reconstruction_loss(r.encoder, r.decoder, x);
      }
      if (!std::isfinite(loss.item())) {
        std::ostringstream msg;
        msg << "autoencoder diverged at epoch " << epoch << " (loss " << loss.item() << ", lr " << config.lr
            << "); lower the learning rate";
        throw NumericError(msg.str());
      }
      opt.zero_grad();
      tape.backward(loss);
      opt.step();
      total += loss.item() * static_cast<double>(stop - start);
    }
    const double epoch_loss = total / static_cast<double>(n);
    best = std::min(best, epoch_loss);
    r.epoch_loss.push_back(epoch_loss);
    r.best_so_far.push_back(best);
  }
  r.final_loss = reconstruction_loss(r.encoder, r.decoder, secondary).item();
  if (!std::isfinite(r.final_loss))
    throw NumericError("autoencoder produced a non-finite loss (lr " + std::to_string(config.lr) + ")");
  return r;
}

Tensor init_centroids_kmeans(const Tensor& h, std::size_t clusters, RngStream& stream) {
  auto result = kmeans(h.detach(), clusters, stream);
  return result.centroids.set_requires_grad(true);
}

Tensor in_cluster_probs(const Tensor& h, const Tensor& centroids, double gamma) {
  if (!(gamma > 0.0)) throw std::invalid_argument("in_cluster_probs: gamma must be positive");
  const Tensor d2 = pairwise_sq_dist(h, centroids);
  const Tensor kernel = pow_scalar(add_scalar(mul_scalar(d2, 1.0 / gamma), 1.0), -(gamma + 1.0) / 2.0);
  return div(kernel, sum_axis(kernel, 1, true));
}

Tensor cluster_weights(const Tensor& x_p, const nn::Mlp& generator) {
  return softmax(mlp_forward(generator, x_p), x_p.ndim() - 1);
}

Tensor sampling_probs(const Tensor& q, const Tensor& w, const nn::Mlp& combiner) {
  if (q.ndim() != 2 || w.ndim() != 2 || q.dim(1) != w.dim(1))
    throw DimensionError("sampling_probs: q " + shape_str(q.shape()) + " and w " + shape_str(w.shape()) +
                         " must share the cluster axis");
  const Tensor scores = matmul(w, transpose(q));  // [B x n]
  return softmax(pointwise_mlp(combiner, scores), 1);
}

std::vector<std::size_t> sample_candidates(std::span<const double> p, std::size_t k, SampleMode mode,
                                           RngStream& stream) {
  if (k == 0) throw std::invalid_argument("sample_candidates: K must be at least 1");
  if (p.empty()) throw std::invalid_argument("sample_candidates: empty probability vector");
  double total = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw NumericError("sample_candidates: probabilities must be finite and >= 0");
    total += v;
  }
  if (total <= 0.0) throw NumericError("sample_candidates: all probabilities are zero");
  k = std::min(k, p.size());

  std::vector<double> key(p.size());
  if (mode == SampleMode::infer) {
    std::copy(p.begin(), p.end(), key.begin());
  } else {
    // Gumbel-top-K: argsort of log p + Gumbel noise is a without-replacement draw.
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double u = stream.uniform();
      key[i] = p[i] > 0.0 ? std::log(p[i]) - std::log(-std::log(u)) : -std::numeric_limits<double>::infinity();
    }
  }
  std::vector<std::size_t> idx(p.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) { return key[a] > key[b] || (key[a] == key[b] && a < b); });
  idx.resize(k);
  return idx;
}

std::vector<std::size_t> sample_batch(const Tensor& p, std::size_t k, SampleMode mode, const RngStream& stream) {
  if (p.ndim() != 2) throw DimensionError("sample_batch: p must be [B x n], got " + shape_str(p.shape()));
  const std::size_t b = p.dim(0), n = p.dim(1);
  std::vector<std::size_t> out;
  out.reserve(b * std::min(k, n));
  for (std::size_t row = 0; row < b; ++row) {
    auto s = stream.fork(row);
    auto picked = sample_candidates(p.data().subspan(row * n, n), k, mode, s);
    out.insert(out.end(), picked.begin(), picked.end());
  }
  return out;
}

void ClusterSamplerState::collect(ParamList& out) const {
  encoder.collect("sampler.encoder", out);
  out.push_back({"sampler.centroids", centroids});
  weight_generator.collect("sampler.weight_generator", out);
  combiner.collect("sampler.combiner", out);
}

ClusterSamplerState sampler_skeleton(std::size_t secondary_width, std::size_t primary_width,
                                     const SamplerConfig& config, std::uint64_t seed) {
  if (config.clusters == 0) throw std::invalid_argument("sampler: clusters must be at least 1");
  if (config.combiner_hidden == 0) throw std::invalid_argument("sampler: combiner_hidden must be at least 1");
  ClusterSamplerState s;
  s.gamma = config.gamma;
  auto ae_config = config.autoencoder;
  ae_config.dim = config.dim;
  auto enc_init = RngStream(seed, StreamLabel::init).fork(kEncoderInitTag);
  s.encoder = nn::Mlp::init(encoder_spec(secondary_width, ae_config), enc_init);
  s.decoder = nn::Mlp::init(decoder_spec(secondary_width, ae_config), enc_init);
  s.centroids = Tensor::zeros({config.clusters, config.dim}, true);
  auto init = RngStream(seed, StreamLabel::init).fork(kSamplerInitTag);
  s.weight_generator = nn::Mlp::init({{primary_width, config.dim, config.clusters}, false}, init);
  s.combiner = nn::Mlp::init({{1, config.combiner_hidden, 1}, false}, init);
  return s;
}

ClusterSamplerState init_sampler(const Tensor& secondary, std::size_t primary_width, const SamplerConfig& config,
                                 std::uint64_t seed) {
  auto s = sampler_skeleton(secondary.dim(1), primary_width, config, seed);
  auto ae_config = config.autoencoder;
  ae_config.dim = config.dim;
  auto ae = pretrain_autoencoder(secondary, ae_config, seed);
  s.encoder = std::move(ae.encoder);
  s.decoder = std::move(ae.decoder);
  s.pretrain_loss = ae.final_loss;

  auto km = RngStream(seed, StreamLabel::init).fork(kKMeansTag);
  s.centroids = init_centroids_kmeans(mlp_forward(s.encoder, secondary), config.clusters, km);
  return s;
}

SamplerOutput sampler_forward(const ClusterSamplerState& s, const Tensor& x_p, const Tensor& secondary) {
  SamplerOutput out;
  out.q = in_cluster_probs(mlp_forward(s.encoder, secondary), s.centroids, s.gamma);
  out.w = cluster_weights(x_p, s.weight_generator);
  out.p = sampling_probs(out.q, out.w, s.combiner);
  return out;
}

}  // namespace leal
