#include "leal/alignment_model.hpp"

#include <stdexcept>
#include <string>

namespace leal {
namespace {

nn::Mlp init_ffn(std::size_t d, std::size_t hidden, RngStream& rng) {
  return nn::Mlp::init({{d, hidden, d}, false}, rng);
}

}  // namespace

void AlignmentModelState::collect(ParamList& out) const {
  primary_encoder.collect("model.primary_encoder", out);
  if (!config.tie_secondary_encoder) secondary_encoder.collect("model.secondary_encoder", out);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto prefix = "model.blocks." + std::to_string(i);
    const auto& b = blocks[i];
    b.self_primary.collect(prefix + ".self_primary", out);
    b.ffn_primary.collect(prefix + ".ffn_primary", out);
    b.self_secondary.collect(prefix + ".self_secondary", out);
    b.ffn_secondary.collect(prefix + ".ffn_secondary", out);
    b.cross.collect(prefix + ".cross", out);
    b.ffn_cross.collect(prefix + ".ffn_cross", out);
  }
  head.collect("model.head", out);
}

AlignmentModelState init_alignment_model(std::size_t primary_width, std::size_t secondary_width,
                                         std::size_t outputs, const AlignmentConfig& config, RngStream& rng) {
  if (config.dim == 0) throw std::invalid_argument("model: dim must be positive");
  if (config.depth == 0) throw std::invalid_argument("model: depth must be at least 1");
  if (outputs == 0) throw std::invalid_argument("model: need at least one output");
  AlignmentModelState m;
  m.config = config;
  const std::size_t d = config.dim;
  const std::size_t hidden = config.ffn_hidden == 0 ? d : config.ffn_hidden;
  m.primary_encoder = nn::Mlp::init({{primary_width, d, d}, false}, rng);
  if (!config.tie_secondary_encoder) m.secondary_encoder = nn::Mlp::init({{secondary_width, d, d}, false}, rng);
  for (std::size_t i = 0; i < config.depth; ++i) {
    AlignmentBlock b;
    b.self_primary = nn::MultiHeadAttention::init(d, config.heads, rng);
    b.ffn_primary = init_ffn(d, hidden, rng);
    b.self_secondary = nn::MultiHeadAttention::init(d, config.heads, rng);
    b.ffn_secondary = init_ffn(d, hidden, rng);
    b.cross = nn::MultiHeadAttention::init(d, config.heads, rng);
    b.ffn_cross = init_ffn(d, hidden, rng);
    m.blocks.push_back(std::move(b));
  }
  m.head = nn::Linear::init(d, outputs, rng);
  return m;
}

Tensor encode_records(const nn::Mlp& encoder, const Tensor& x) {
  if (x.ndim() != 2)
    throw DimensionError("encode_records: expected [batch x width], got " + shape_str(x.shape()));
  return mlp_forward(encoder, x);
}

SoftAlignment soft_align(const nn::MultiHeadAttention& attention, const Tensor& z_p, const Tensor& z_s) {
  const bool single = z_p.ndim() == 1;
  const Tensor zp = single ? reshape(z_p, {1, z_p.dim(0)}) : z_p;
  const Tensor zs = z_s.ndim() == 2 ? reshape(z_s, {1, z_s.dim(0), z_s.dim(1)}) : z_s;
  if (zp.ndim() != 2 || zs.ndim() != 3 || zp.dim(0) != zs.dim(0) || zp.dim(1) != zs.dim(2))
    throw DimensionError("soft_align: z_p " + shape_str(z_p.shape()) + " incompatible with z_s " +
                         shape_str(z_s.shape()));
  if (zs.dim(1) == 0) throw std::invalid_argument("soft_align: no candidates (K = 0)");
  const std::size_t b = zp.dim(0), d = zp.dim(1), k = zs.dim(1);
  const Tensor q = reshape(zp, {b, 1, d});
  auto att = nn::multi_head_attention(attention, q, zs, zs);
  SoftAlignment out;
  out.z_tilde = add(zp, reshape(att.output, {b, d}));
  out.lambda_by_head = att.weights;
  out.lambda = mul_scalar(sum_axis(reshape(att.weights, {b, attention.heads, k}), 1),
                          1.0 / static_cast<double>(attention.heads));
  if (single) out.z_tilde = reshape(out.z_tilde, {d});
  return out;
}

Tensor predict_head(const nn::Linear& head, const Tensor& z_tilde) { return head.forward(z_tilde); }

AlignOutput align_candidates(const AlignmentModelState& model, const nn::Mlp* tied_encoder, const Tensor& x_p,
                             const Tensor& x_s, std::size_t k, const std::optional<Tensor>& scale) {
  if (x_p.ndim() != 2 || x_s.ndim() != 2 || k == 0 || x_s.dim(0) != x_p.dim(0) * k)
    throw DimensionError("align_candidates: x_p " + shape_str(x_p.shape()) + " and x_s " + shape_str(x_s.shape()) +
                         " do not describe " + std::to_string(k) + " candidates per row");
  const nn::Mlp& f_s = model.config.tie_secondary_encoder ? *tied_encoder : model.secondary_encoder;
  if (model.config.tie_secondary_encoder && tied_encoder == nullptr)
    throw std::invalid_argument("align_candidates: tied secondary encoder requested but none given");
  const std::size_t b = x_p.dim(0), d = model.dim();

  Tensor p = reshape(encode_records(model.primary_encoder, x_p), {b, 1, d});
  Tensor s = reshape(encode_records(f_s, x_s), {b, k, d});
  if (scale) s = mul(s, reshape(*scale, {b, k, 1}));

  AlignOutput out;
  for (const auto& blk : model.blocks) {
    p = add(p, nn::multi_head_attention(blk.self_primary, p, p, p).output);
    p = add(p, mlp_forward(blk.ffn_primary, p));
    s = add(s, nn::multi_head_attention(blk.self_secondary, s, s, s).output);
    s = add(s, mlp_forward(blk.ffn_secondary, s));
    auto aligned = soft_align(blk.cross, reshape(p, {b, d}), s);
    p = reshape(aligned.z_tilde, {b, 1, d});
    p = add(p, mlp_forward(blk.ffn_cross, p));
    out.lambda.push_back(aligned.lambda);
    out.lambda_heads.push_back(aligned.lambda_by_head);
  }
  out.prediction = predict_head(model.head, reshape(p, {b, d}));
  return out;
}

ForwardResult model_forward(const Tensor& x_p, const Tensor& secondary, const ClusterSamplerState& sampler,
                            const AlignmentModelState& model, const ForwardOptions& options,
                            const RngStream& stream) {
  auto probs = sampler_forward(sampler, x_p, secondary);
  ForwardResult r;
  r.p = probs.p;
  const std::size_t b = x_p.dim(0), n = secondary.dim(0);
  if (options.frozen) {
    r.candidates = options.frozen->candidates;
    r.k = options.frozen->k;
  } else {
    r.candidates = sample_batch(probs.p, options.k, options.mode, stream);
    r.k = r.candidates.size() / b;
  }
  const Tensor x_s = index_rows(secondary, r.candidates);

  std::optional<Tensor> scale;
  if (options.straight_through && options.mode == SampleMode::train) {
    std::vector<std::size_t> offsets(r.candidates.size());
    for (std::size_t i = 0; i < offsets.size(); ++i) offsets[i] = (i / r.k) * n + r.candidates[i];
    const Tensor picked = take(probs.p, offsets, {b, r.k});
    const Tensor denominator =
        options.frozen ? take(options.frozen->p.detach(), offsets, {b, r.k}) : picked.detach();
    scale = div(picked, denominator);
  }
  auto aligned = align_candidates(model, &sampler.encoder, x_p, x_s, r.k, scale);
  r.prediction = aligned.prediction;
  r.lambda = std::move(aligned.lambda);
  r.lambda_heads = std::move(aligned.lambda_heads);
  return r;
}

}  // namespace leal
