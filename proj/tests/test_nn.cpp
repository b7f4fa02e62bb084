#include <gtest/gtest.h>

#include <cmath>

#include "leal/errors.hpp"
#include "leal/grad_check.hpp"
#include "leal/nn.hpp"

using namespace leal;
using namespace leal::nn;

namespace {

Tensor random_tensor(Shape shape, RngStream& rng, double scale = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(-scale, scale);
  return Tensor::from(std::move(shape), std::move(v));
}

void randomize(const ParamList& params, RngStream& rng) {
  for (const auto& p : params) {
    for (double& x : Tensor(p.value).mutable_data()) x = rng.uniform(-1.0, 1.0);
  }
}

}  // namespace

TEST(Mlp, SingleIdentityLayer) {
  RngStream rng(0, StreamLabel::init);
  Mlp mlp = Mlp::init({{2, 2}, false}, rng);
  std::copy_n(std::vector<double>{1, 0, 0, 1}.begin(), 4, mlp.layers[0].weight.mutable_data().begin());
  std::fill(mlp.layers[0].bias.mutable_data().begin(), mlp.layers[0].bias.mutable_data().end(), 0.0);
  EXPECT_EQ(mlp_forward(mlp, Tensor::from({1, 2}, {1, 2})).values(), (std::vector<double>{1, 2}));
}

TEST(Mlp, ZeroWeightsGiveFinalBias) {
  RngStream rng(0, StreamLabel::init);
  Mlp mlp = Mlp::init({{3, 4, 2}, true}, rng);
  for (auto& layer : mlp.layers) std::fill(layer.weight.mutable_data().begin(), layer.weight.mutable_data().end(), 0.0);
  const std::vector<double> bias(mlp.layers[1].bias.data().begin(), mlp.layers[1].bias.data().end());
  auto y = mlp_forward(mlp, Tensor::from({2, 3}, {1, 2, 3, -4, 5, 6}));
  EXPECT_EQ(y.shape(), (Shape{2, 2}));
  for (std::size_t r = 0; r < 2; ++r) {
    EXPECT_DOUBLE_EQ(y.at({r, 0}), bias[0]);
    EXPECT_DOUBLE_EQ(y.at({r, 1}), bias[1]);
  }
}

TEST(Mlp, ScalarHandEvaluation) {
  // Hidden: w=2, b=1; output: w=4, b=0.5. x=-3 -> relu(-5)=0 -> 0.5; x=2 -> relu(5)=5 -> 20.5.
  Mlp mlp;
  mlp.spec = {{1, 1, 1}, false};
  mlp.layers = {Linear{Tensor::from({1, 1}, {2}), Tensor::from({1}, {1})},
                Linear{Tensor::from({1, 1}, {4}), Tensor::from({1}, {0.5})}};
  EXPECT_DOUBLE_EQ(mlp_forward(mlp, Tensor::from({1, 1}, {-3})).item(), 0.5);
  EXPECT_DOUBLE_EQ(mlp_forward(mlp, Tensor::from({1, 1}, {2})).item(), 20.5);
  EXPECT_DOUBLE_EQ(pointwise_mlp(mlp, Tensor::from({2}, {-3, 2})).data()[1], 20.5);
}

TEST(Mlp, WidthMismatch) {
  RngStream rng(0, StreamLabel::init);
  Mlp mlp = Mlp::init({{3, 2}, false}, rng);
  EXPECT_THROW(mlp_forward(mlp, Tensor::zeros({1, 4})), DimensionError);
  EXPECT_THROW(Mlp::init({{3}, false}, rng), std::invalid_argument);
}

TEST(Mlp, PointwiseMatchesGeneric) {
  RngStream rng(4, StreamLabel::init);
  Mlp mlp = Mlp::init({{1, 16, 1}, false}, rng);
  auto x = random_tensor({7}, rng, 3.0);
  auto fused = pointwise_mlp(mlp, x);
  auto generic = mlp_forward(mlp, reshape(x, {7, 1}));
  for (std::size_t i = 0; i < 7; ++i) EXPECT_NEAR(fused.data()[i], generic.data()[i], 1e-14);
}

TEST(LayerNorm, ConstantRowCollapsesToShift) {
  auto y = layer_norm(Tensor::from({1, 3}, {5, 5, 5}), Tensor::full({3}, 1.0), Tensor::zeros({3}));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, PopulationZScores) {
  // (x - 2) / sqrt(2/3 + 1e-5): direct evaluation.
  const double expected = 1.0 / std::sqrt(2.0 / 3.0 + 1e-5);
  auto y = layer_norm(Tensor::from({1, 3}, {1, 2, 3}), Tensor::full({3}, 1.0), Tensor::zeros({3}));
  EXPECT_NEAR(y.data()[0], -expected, 1e-12);
  EXPECT_NEAR(y.data()[1], 0.0, 1e-12);
  EXPECT_NEAR(y.data()[2], expected, 1e-12);
  EXPECT_NEAR(y.data()[2], 1.2247, 1e-4);
}

TEST(LayerNorm, ZeroGainGivesShift) {
  auto y = layer_norm(Tensor::from({1, 3}, {1, 2, 3}), Tensor::zeros({3}), Tensor::full({3}, 7.0));
  for (double v : y.data()) EXPECT_EQ(v, 7.0);
}

TEST(Attention, EqualKeysGiveUniformWeights) {
  auto mha = MultiHeadAttention::identity(2, 1);
  auto q = Tensor::from({1, 1, 2}, {0.3, -1.2});
  auto k = Tensor::from({1, 3, 2}, {1, 2, 1, 2, 1, 2});
  auto res = multi_head_attention(mha, q, k, k);
  for (double w : res.weights.data()) EXPECT_NEAR(w, 1.0 / 3.0, 1e-15);
}

TEST(Attention, ScaledDotProductByHand) {
  // logits [1/sqrt(2), 0] -> softmax.
  const double e = std::exp(1.0 / std::sqrt(2.0));
  auto mha = MultiHeadAttention::identity(2, 1);
  auto q = Tensor::from({1, 1, 2}, {1, 0});
  auto k = Tensor::from({1, 2, 2}, {1, 0, 0, 1});
  auto res = multi_head_attention(mha, q, k, k);
  EXPECT_NEAR(res.weights.data()[0], e / (e + 1), 1e-15);
  EXPECT_NEAR(res.weights.data()[1], 1 / (e + 1), 1e-15);
  EXPECT_NEAR(res.weights.data()[0], 0.6698, 1e-4);
  EXPECT_NEAR(res.output.data()[0], e / (e + 1), 1e-15);
  EXPECT_NEAR(res.output.data()[1], 1 / (e + 1), 1e-15);
}

TEST(Attention, SingleKey) {
  RngStream rng(2, StreamLabel::init);
  auto mha = MultiHeadAttention::init(4, 2, rng);
  auto q = random_tensor({1, 1, 4}, rng);
  auto k = random_tensor({1, 1, 4}, rng);
  auto res = multi_head_attention(mha, q, k, k);
  for (double w : res.weights.data()) EXPECT_EQ(w, 1.0);
  auto projected = mha.output.forward(mha.value.forward(k));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(res.output.data()[i], projected.data()[i], 1e-14);
}

TEST(Attention, HeadsMustDivideWidth) {
  RngStream rng(2, StreamLabel::init);
  EXPECT_THROW(MultiHeadAttention::init(10, 4, rng), ConfigError);
  EXPECT_THROW(MultiHeadAttention::identity(3, 2), ConfigError);
}

TEST(Attention, RowsSumToOneAndShiftInvariant) {
  RngStream rng(5, StreamLabel::sample);
  auto mha = MultiHeadAttention::identity(4, 2);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = 1 + rng.below(3), nq = 1 + rng.below(3), nk = 1 + rng.below(6);
    auto q = random_tensor({b, nq, 4}, rng, 3.0);
    auto k = random_tensor({b, nk, 4}, rng, 3.0);
    auto res = multi_head_attention(mha, q, k, k);
    // Adding the same vector to every key adds a per-query constant to all logits.
    auto shifted = add(k, random_tensor({4}, rng, 5.0));
    auto res2 = multi_head_attention(mha, q, shifted, k);
    const std::size_t rows = res.weights.numel() / nk;
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0;
      for (std::size_t j = 0; j < nk; ++j) {
        s += res.weights.data()[r * nk + j];
        EXPECT_NEAR(res.weights.data()[r * nk + j], res2.weights.data()[r * nk + j], 1e-10);
      }
      EXPECT_NEAR(s, 1.0, 1e-10);
    }
  }
}

TEST(Loss, UniformLogitsGiveLogClasses) {
  EXPECT_NEAR(compute_loss(Task::classification, Tensor::from({1, 2}, {0, 0}), Tensor::from({1}, {0})).item(),
              std::log(2.0), 1e-15);
  EXPECT_NEAR(compute_loss(Task::classification, Tensor::full({3, 5}, 1.7), Tensor::from({3}, {0, 4, 2})).item(),
              std::log(5.0), 1e-14);
}

TEST(Loss, RegressionPerfectFit) {
  auto t = Tensor::from({3}, {1.5, -2, 4});
  EXPECT_EQ(compute_loss(Task::regression, reshape(t, {3, 1}), t).item(), 0.0);
}

TEST(Loss, CrossEntropyByHand) {
  const double expected = -std::log(1.0 / (std::exp(2.0) + 1.0));
  const double got = compute_loss(Task::classification, Tensor::from({1, 2}, {2, 0}), Tensor::from({1}, {1})).item();
  EXPECT_NEAR(got, expected, 1e-14);
  EXPECT_NEAR(got, 2.1269, 1e-4);
}

TEST(Loss, ClassOutOfRange) {
  EXPECT_THROW(compute_loss(Task::classification, Tensor::zeros({1, 2}), Tensor::from({1}, {2})), std::out_of_range);
  EXPECT_THROW(compute_loss(Task::classification, Tensor::zeros({1, 2}), Tensor::from({1}, {-1})), std::out_of_range);
}

TEST(Loss, CrossEntropyNonNegative) {
  RngStream rng(8, StreamLabel::sample);
  for (int i = 0; i < 100; ++i) {
    auto logits = random_tensor({4, 3}, rng, 10.0);
    auto target = Tensor::from({4}, {double(rng.below(3)), double(rng.below(3)), double(rng.below(3)), double(rng.below(3))});
    EXPECT_GE(compute_loss(Task::classification, logits, target).item(), 0.0);
  }
}

TEST(AdamW, ZeroGradZeroDecayIsNoop) {
  auto p = Tensor::from({2}, {1.0, -3.0}, true);
  autograd::grad_sink(p);
  AdamW opt({{"p", p}}, {0.001, 0.9, 0.999, 1e-8, 0.0});
  opt.step();
  EXPECT_EQ(p.values(), (std::vector<double>{1.0, -3.0}));
}

TEST(AdamW, SingleStep) {
  // m = 0.1, v = 0.001, bias-corrected to 1 and 1: p = 1 - 0.001 * 1 / (1 + 1e-8).
  auto p = Tensor::from({1}, {1.0}, true);
  autograd::grad_sink(p)[0] = 1.0;
  AdamW opt({{"p", p}}, {0.001, 0.9, 0.999, 1e-8, 0.0});
  opt.step();
  EXPECT_NEAR(p.data()[0], 1.0 - 0.001 / (1.0 + 1e-8), 1e-15);
  EXPECT_NEAR(p.data()[0], 0.999, 1e-8);
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(AdamW, DecoupledDecay) {
  auto p = Tensor::from({1}, {1.0}, true);
  autograd::grad_sink(p);
  AdamW opt({{"p", p}}, {0.001, 0.9, 0.999, 1e-8, 0.01});
  opt.step();
  EXPECT_NEAR(p.data()[0], 0.99999, 1e-15);
}

TEST(AdamW, ZeroLearningRateIsBitIdentical) {
  RngStream rng(3, StreamLabel::init);
  auto p = random_tensor({10}, rng);
  p.set_requires_grad(true);
  const auto before = p.values();
  AdamW opt({{"p", p}}, {0.0, 0.9, 0.999, 1e-8, 0.01});
  for (int i = 0; i < 5; ++i) {
    auto g = autograd::grad_sink(p);
    for (double& x : g) x = rng.normal();
    opt.step();
    opt.zero_grad();
  }
  EXPECT_EQ(p.values(), before);
}

TEST(AdamW, NanGradientNamesParameter) {
  auto p = Tensor::from({1}, {1.0}, true);
  autograd::grad_sink(p)[0] = std::nan("");
  AdamW opt({{"encoder.layers.0.weight", p}}, {});
  try {
    opt.step();
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("encoder.layers.0.weight"), std::string::npos);
  }
}

// Every layer passes grad_check < 1e-6 at 10 random parameter points.
TEST(GradCheck, Layers) {
  RngStream rng(21, StreamLabel::init);
  for (int trial = 0; trial < 10; ++trial) {
    auto x = random_tensor({3, 4}, rng);
    auto seq = random_tensor({2, 3, 4}, rng);
    auto keys = random_tensor({2, 5, 4}, rng);

    Mlp mlp = Mlp::init({{4, 6, 3}, true}, rng);
    ParamList mp;
    mlp.collect("mlp", mp);
    randomize(mp, rng);
    EXPECT_LT(grad_check([&] { return sum(square(mlp_forward(mlp, x))); }, mp).max_rel_error, 1e-6);

    auto mha = MultiHeadAttention::init(4, 2, rng);
    ParamList ap;
    mha.collect("mha", ap);
    EXPECT_LT(grad_check([&] {
                auto r = multi_head_attention(mha, seq, keys, keys);
                return add(sum(square(r.output)), sum(square(r.weights)));
              }, ap).max_rel_error,
              1e-6);

    Mlp scalar = Mlp::init({{1, 16, 1}, false}, rng);
    ParamList sp;
    scalar.collect("combiner", sp);
    auto s = random_tensor({2, 6}, rng, 2.0);
    s.set_requires_grad(true);
    sp.push_back({"input", s});
    auto mix = random_tensor({6}, rng);
    EXPECT_LT(grad_check([&] { return sum(softmax(pointwise_mlp(scalar, s), 1) * mix); }, sp)
                  .max_rel_error,
              1e-6);

    auto logits = random_tensor({4, 3}, rng, 2.0);
    logits.set_requires_grad(true);
    EXPECT_LT(grad_check([&] { return compute_loss(Task::classification, logits, Tensor::from({4}, {0, 2, 1, 2})); },
                         {{"logits", logits}})
                  .max_rel_error,
              1e-6);
  }
}
