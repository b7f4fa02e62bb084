#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "leal/alignment_model.hpp"
#include "leal/grad_check.hpp"

using namespace leal;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, RngStream& rng, double scale = 1.0) {
  std::vector<double> v(r * c);
  for (auto& x : v) x = scale * rng.normal();
  return Tensor::from({r, c}, v);
}

struct Toy {
  Tensor xp, xs, y;
  ClusterSamplerState sampler;
  AlignmentModelState model;
};

// n_p = n_s = 8, d = 8, C = 2, L = 1, three classes.
Toy make_toy(std::uint64_t seed, std::size_t clusters = 2) {
  RngStream rng(seed, StreamLabel::synth);
  Toy t;
  t.xp = random_matrix(8, 3, rng);
  t.xs = random_matrix(8, 4, rng);
  t.y = Tensor::from({8}, {0, 1, 2, 0, 1, 2, 0, 1});
  t.sampler = init_sampler(t.xs, 3, {.clusters = clusters, .dim = 8, .autoencoder = {.epochs = 5}}, seed);
  auto init = RngStream(seed, StreamLabel::init);
  t.model = init_alignment_model(3, 4, 3, {.dim = 8, .heads = 2, .depth = 1}, init);
  return t;
}

}  // namespace

TEST(EncodeRecords, ZeroWeightsGiveBiasRows) {
  nn::Mlp enc;
  enc.spec = {{3, 2}, false};
  enc.layers = {nn::Linear::zeros(3, 2)};
  enc.layers[0].bias.mutable_data()[0] = 0.5;
  enc.layers[0].bias.mutable_data()[1] = -2.0;
  RngStream rng(1, StreamLabel::synth);
  auto z = encode_records(enc, random_matrix(4, 3, rng));
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(z.at({i, 0}), 0.5);
    EXPECT_EQ(z.at({i, 1}), -2.0);
  }
  EXPECT_THROW(encode_records(enc, random_matrix(2, 4, rng)), DimensionError);
}

TEST(EncodeRecords, BatchIndependenceAndGradients) {
  RngStream rng(2, StreamLabel::synth);
  auto enc = nn::Mlp::init({{3, 5, 4}, false}, rng);
  const Tensor two = random_matrix(2, 3, rng);
  const Tensor one = Tensor::from({1, 3}, {two.at({0, 0}), two.at({0, 1}), two.at({0, 2})});
  auto a = encode_records(enc, two), b = encode_records(enc, one);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(a.at({0, j}), b.at({0, j}));

  ParamList params;
  enc.collect("enc", params);
  const Tensor w = random_matrix(2, 4, rng);
  auto res = grad_check([&] { return sum(mul(encode_records(enc, two), w)); }, params);
  EXPECT_LT(res.max_rel_error, 1e-6);
}

TEST(SoftAlign, IdenticalCandidatesGiveUniformWeights) {
  auto att = nn::MultiHeadAttention::identity(2, 1);
  const Tensor zp = Tensor::from({2}, {0.3, -1});
  const Tensor zs = Tensor::from({3, 2}, {1, 2, 1, 2, 1, 2});
  auto r = soft_align(att, zp, zs);
  for (double v : r.lambda.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(r.z_tilde.at({0}), 1.3, 1e-15);
  EXPECT_NEAR(r.z_tilde.at({1}), 1.0, 1e-15);
}

TEST(SoftAlign, HandEvaluatedWeights) {
  auto att = nn::MultiHeadAttention::identity(2, 1);
  auto r = soft_align(att, Tensor::from({2}, {1, 0}), Tensor::from({2, 2}, {1, 0, 0, 1}));
  const double e = std::exp(1.0 / std::sqrt(2.0));
  EXPECT_NEAR(r.lambda.at({0, 0}), e / (e + 1), 1e-15);
  EXPECT_NEAR(r.lambda.at({0, 0}), 0.6698, 1e-4);
  EXPECT_NEAR(r.lambda.at({0, 1}), 0.3302, 1e-4);
  EXPECT_NEAR(r.z_tilde.at({0}), 1 + e / (e + 1), 1e-15);
}

TEST(SoftAlign, SingleCandidateAndEmpty) {
  RngStream rng(3, StreamLabel::init);
  auto att = nn::MultiHeadAttention::identity(4, 2);
  const Tensor zp = Tensor::from({4}, {1, 2, 3, 4});
  const Tensor zs = Tensor::from({1, 4}, {-1, 0.5, 0, 2});
  auto r = soft_align(att, zp, zs);
  EXPECT_EQ(r.lambda.at({0, 0}), 1.0);
  EXPECT_EQ(r.z_tilde.at({3}), 6.0);
  EXPECT_THROW(soft_align(att, zp, Tensor::zeros({0, 4})), std::invalid_argument);
}

TEST(PredictHead, ZeroAndMeanExtractor) {
  RngStream rng(4, StreamLabel::synth);
  const Tensor z = random_matrix(3, 4, rng);
  const Tensor zero_logits = predict_head(nn::Linear::zeros(4, 5), z);
  for (double v : zero_logits.values()) EXPECT_EQ(v, 0.0);
  auto mean_head = nn::Linear::zeros(4, 1);
  for (auto& w : mean_head.weight.mutable_data()) w = 0.25;
  const Tensor crafted = Tensor::from({1, 4}, {1, 2, 3, 6});
  EXPECT_DOUBLE_EQ(predict_head(mean_head, crafted).item(), 3.0);
  auto head = nn::Linear::init(4, 2, rng);
  auto all = predict_head(head, z);
  auto first = predict_head(head, index_rows(z, std::vector<std::size_t>{0}));
  EXPECT_EQ(all.at({0, 1}), first.at({0, 1}));
}

TEST(ModelForward, ExhaustiveCandidatesWhenKCoversTable) {
  auto t = make_toy(5, 1);
  const RngStream s(1, StreamLabel::sample);
  for (auto mode : {SampleMode::train, SampleMode::infer}) {
    auto r = model_forward(t.xp, t.xs, t.sampler, t.model, {.mode = mode, .k = 100}, s);
    ASSERT_EQ(r.k, 8u);
    for (std::size_t b = 0; b < 8; ++b) {
      std::set<std::size_t> got(r.candidates.begin() + b * 8, r.candidates.begin() + (b + 1) * 8);
      EXPECT_EQ(got.size(), 8u);
    }
  }
}

TEST(ModelForward, InferenceIsBitIdentical) {
  auto t = make_toy(6);
  const RngStream s(1, StreamLabel::sample);
  auto a = model_forward(t.xp, t.xs, t.sampler, t.model, {.mode = SampleMode::infer, .k = 3}, s);
  auto b = model_forward(t.xp, t.xs, t.sampler, t.model, {.mode = SampleMode::infer, .k = 3}, RngStream(2, StreamLabel::sample));
  EXPECT_EQ(a.prediction.values(), b.prediction.values());
  EXPECT_EQ(a.candidates, b.candidates);
}

TEST(ModelForward, LambdaRowsSumToOne) {
  auto t = make_toy(7);
  t.model = [&] {
    auto init = RngStream(7, StreamLabel::init);
    return init_alignment_model(3, 4, 3, {.dim = 8, .heads = 4, .depth = 3}, init);
  }();
  auto r = model_forward(t.xp, t.xs, t.sampler, t.model, {.k = 4}, RngStream(1, StreamLabel::sample));
  ASSERT_EQ(r.lambda.size(), 3u);
  for (const auto& l : r.lambda)
    for (std::size_t b = 0; b < 8; ++b) {
      double s = 0;
      for (std::size_t k = 0; k < 4; ++k) s += l.at({b, k});
      EXPECT_NEAR(s, 1.0, 1e-10);
    }
  EXPECT_EQ(r.lambda_heads[0].shape(), (Shape{8, 4, 1, 4}));
}

TEST(ModelForward, CandidatePermutationEquivariance) {
  auto t = make_toy(8);
  const std::size_t k = 4;
  std::vector<std::size_t> rows, permuted;
  RngStream rng(8, StreamLabel::sample);
  for (std::size_t b = 0; b < 8; ++b) {
    auto c = rng.permutation(8);
    c.resize(k);
    auto perm = rng.permutation(k);
    for (std::size_t j = 0; j < k; ++j) rows.push_back(c[j]);
    for (std::size_t j = 0; j < k; ++j) permuted.push_back(c[perm[j]]);
    // keep the mapping to compare lambda below
    for (std::size_t j = 0; j < k; ++j) rows.push_back(perm[j]);
  }
  std::vector<std::size_t> cand, order;
  for (std::size_t b = 0; b < 8; ++b) {
    cand.insert(cand.end(), rows.begin() + b * 2 * k, rows.begin() + b * 2 * k + k);
    order.insert(order.end(), rows.begin() + b * 2 * k + k, rows.begin() + (b + 1) * 2 * k);
  }
  auto a = align_candidates(t.model, nullptr, t.xp, index_rows(t.xs, cand), k);
  auto p = align_candidates(t.model, nullptr, t.xp, index_rows(t.xs, permuted), k);
  for (std::size_t i = 0; i < a.prediction.numel(); ++i)
    EXPECT_NEAR(a.prediction.values()[i], p.prediction.values()[i], 1e-10);
  for (std::size_t b = 0; b < 8; ++b)
    for (std::size_t j = 0; j < k; ++j)
      EXPECT_NEAR(p.lambda[0].at({b, j}), a.lambda[0].at({b, order[b * k + j]}), 1e-10);
}

TEST(ModelForward, FullGradientCheckOnToyInstance) {
  auto t = make_toy(9);
  ParamList params;
  t.sampler.collect(params);
  t.model.collect(params);
  const RngStream s(9, StreamLabel::sample);
  const ForwardOptions opts{.mode = SampleMode::train, .k = 2};
  const auto base = model_forward(t.xp, t.xs, t.sampler, t.model, opts, s);
  auto frozen = opts;
  frozen.frozen = &base;
  auto res = grad_check(
      [&] {
        auto r = model_forward(t.xp, t.xs, t.sampler, t.model, frozen, s);
        return nn::compute_loss(nn::Task::classification, r.prediction, t.y);
      },
      params, 1e-6);
  EXPECT_LT(res.max_rel_error, 1e-4) << res.worst_param << "[" << res.worst_index << "]";
  EXPECT_EQ(res.coordinates, count_scalars(params));
}

TEST(ModelForward, TiedSecondaryEncoderUsesSamplerEncoder) {
  auto t = make_toy(10);
  auto init = RngStream(10, StreamLabel::init);
  auto tied = init_alignment_model(3, 4, 3, {.dim = 8, .heads = 2, .depth = 1, .tie_secondary_encoder = true}, init);
  ParamList untied_params, tied_params;
  t.model.collect(untied_params);
  tied.collect(tied_params);
  EXPECT_LT(tied_params.size(), untied_params.size());
  auto r = model_forward(t.xp, t.xs, t.sampler, tied, {.mode = SampleMode::infer, .k = 2}, RngStream(1, StreamLabel::sample));
  EXPECT_TRUE(all_finite(r.prediction));
  EXPECT_THROW(align_candidates(tied, nullptr, t.xp, index_rows(t.xs, std::vector<std::size_t>(8, 0)), 1),
               std::invalid_argument);
}
