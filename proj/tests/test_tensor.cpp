#include <gtest/gtest.h>

#include <cmath>
#include <thread>

#include "leal/grad_check.hpp"
#include "leal/rng.hpp"
#include "leal/tensor.hpp"

using namespace leal;

namespace {

Tensor random_tensor(Shape shape, RngStream& rng, bool requires_grad = true) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

}  // namespace

TEST(Matmul, IdentityRight) {
  auto a = Tensor::from({2, 2}, {1, 2, 3, 4});
  auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  EXPECT_EQ(matmul(a, eye).values(), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Matmul, IdentityLeft) {
  auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  auto b = Tensor::from({2, 1}, {5, 7});
  auto c = matmul(eye, b);
  EXPECT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(c.values(), (std::vector<double>{5, 7}));
}

TEST(Matmul, RowSums) {
  auto a = Tensor::from({2, 2}, {1, 2, 3, 4});
  auto ones = Tensor::from({2, 1}, {1, 1});
  EXPECT_EQ(matmul(a, ones).values(), (std::vector<double>{3, 7}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  auto a = Tensor::zeros({2, 3});
  auto b = Tensor::zeros({2, 2});
  try {
    matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
    EXPECT_NE(msg.find("[2x2]"), std::string::npos);
  }
}

TEST(Softmax, Uniform) {
  auto y = softmax(Tensor::from({3}, {0, 0, 0}), 0);
  for (double v : y.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, ShiftByLogTwo) {
  for (double c : {-50.0, 0.0, 3.5, 700.0}) {
    auto y = softmax(Tensor::from({2}, {c, c + std::log(2.0)}), 0);
    EXPECT_NEAR(y.data()[0], 1.0 / 3.0, 1e-12);
    EXPECT_NEAR(y.data()[1], 2.0 / 3.0, 1e-12);
  }
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  // Arbitrary-precision value: [1/(1+e^-1000), e^-1000/(1+e^-1000)] = [1 - 5.08e-435, 5.08e-435];
  // both round to the nearest double exactly as below.
  auto y = softmax(Tensor::from({2}, {1000, 0}), 0);
  EXPECT_EQ(y.data()[0], 1.0);
  EXPECT_EQ(y.data()[1], 0.0);
  EXPECT_TRUE(all_finite(y));
}

TEST(Softmax, AxisOutOfRange) {
  EXPECT_THROW(softmax(Tensor::zeros({2, 2}), 2), DimensionError);
}

TEST(Softmax, PropertySumsAndShiftInvariance) {
  RngStream rng(7, StreamLabel::sample);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t rows = 1 + rng.below(5), cols = 1 + rng.below(9);
    std::vector<double> v(rows * cols);
    for (double& x : v) x = rng.uniform(-30, 30);
    auto x = Tensor::from({rows, cols}, v);
    const double shift = rng.uniform(-100, 100);
    auto y = softmax(x, 1);
    auto ys = softmax(add_scalar(x, shift), 1);
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < cols; ++c) {
        s += y.at({r, c});
        EXPECT_GE(y.at({r, c}), 0.0);
        EXPECT_LT(std::abs(y.at({r, c}) - ys.at({r, c})), 1e-12);
      }
      EXPECT_LT(std::abs(s - 1.0), 1e-12);
    }
  }
}

TEST(Backward, SumOfSquares) {
  auto x = Tensor::from({2}, {1, 2}, true);
  Tape tape;
  {
    auto scope = tape.record();
    tape.backward(sum(square(x)));
  }
  EXPECT_EQ(x.grad(), (std::vector<double>{2, 4}));
}

TEST(Backward, ConstantOutputGivesZeroGrad) {
  auto x = Tensor::from({2}, {1, 2}, true);
  Tape tape;
  {
    auto scope = tape.record();
    tape.backward(Tensor::scalar(3.0));
  }
  EXPECT_EQ(x.grad(), (std::vector<double>{0, 0}));
}

TEST(Backward, SoftmaxFirstComponent) {
  // Central-difference oracle at x = [0, 0]: d/dx0 = 0.25, d/dx1 = -0.25.
  const auto f = [](double a, double b) { return std::exp(a) / (std::exp(a) + std::exp(b)); };
  const double h = 1e-6;
  const double d0 = (f(h, 0) - f(-h, 0)) / (2 * h);
  const double d1 = (f(0, h) - f(0, -h)) / (2 * h);
  auto x = Tensor::from({2}, {0, 0}, true);
  Tape tape;
  {
    auto scope = tape.record();
    auto y = softmax(x, 0);
    tape.backward(take(y, std::vector<std::size_t>{0}, {}));
  }
  EXPECT_NEAR(x.grad()[0], d0, 1e-9);
  EXPECT_NEAR(x.grad()[1], d1, 1e-9);
  EXPECT_NEAR(x.grad()[0], 0.25, 1e-12);
  EXPECT_NEAR(x.grad()[1], -0.25, 1e-12);
}

TEST(Backward, RepeatedCallsAccumulate) {
  auto x = Tensor::from({2}, {1, 2}, true);
  Tape tape;
  auto scope = tape.record();
  auto y = sum(square(x));
  tape.backward(y);
  tape.backward(y);
  EXPECT_EQ(x.grad(), (std::vector<double>{4, 8}));
  x.zero_grad();
  tape.backward(y);
  EXPECT_EQ(x.grad(), (std::vector<double>{2, 4}));
}

TEST(Backward, NonScalarOutputRejected) {
  auto x = Tensor::from({2}, {1, 2}, true);
  Tape tape;
  auto scope = tape.record();
  auto y = square(x);
  EXPECT_THROW(tape.backward(y), DimensionError);
}

TEST(Backward, NothingRecordedWithoutActiveTape) {
  auto x = Tensor::from({2}, {1, 2}, true);
  auto y = sum(square(x));
  EXPECT_FALSE(y.requires_grad());
}

TEST(Backward, DiamondGraphVisitsEachNodeOnce) {
  // y = (x*x) + (x*x) reuses the same node twice; dy/dx = 4x.
  auto x = Tensor::from({1}, {3}, true);
  Tape tape;
  {
    auto scope = tape.record();
    auto sq = square(x);
    tape.backward(sum(add(sq, sq)));
  }
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(GradCheck, SumIsExact) {
  RngStream rng(1, StreamLabel::init);
  auto x = random_tensor({5}, rng);
  EXPECT_LT(grad_check([](const Tensor& t) { return sum(t); }, x, 1e-5), 1e-10);
}

TEST(GradCheck, SumOfSquares) {
  auto x = Tensor::from({3}, {1, 2, 3});
  EXPECT_LT(grad_check([](const Tensor& t) { return sum(square(t)); }, x, 1e-5), 1e-8);
}

TEST(GradCheck, RejectsBadEps) {
  auto x = Tensor::from({1}, {1});
  EXPECT_THROW(grad_check([](const Tensor& t) { return sum(t); }, x, 0.1), std::invalid_argument);
}

TEST(GradCheck, NonFiniteObjectiveThrows) {
  auto x = Tensor::from({1}, {0.0});
  EXPECT_THROW(grad_check([](const Tensor& t) { return sum(log(t)); }, x, 1e-6), std::runtime_error);
}

// Every differentiable op passes a finite-difference check at 10 random points.
TEST(GradCheck, AllOpsAtRandomPoints) {
  RngStream rng(11, StreamLabel::init);
  const std::vector<std::pair<std::string, std::function<Tensor(const Tensor&)>>> cases = {
      {"matmul_left", [](const Tensor& x) { return sum(square(matmul(reshape(x, {2, 3}), Tensor::from({3, 2}, {1, -2, 0.5, 3, -1, 2})))); }},
      {"matmul_right", [](const Tensor& x) { return sum(square(matmul(Tensor::from({2, 2}, {1, 2, -3, 1}), reshape(x, {2, 3})))); }},
      {"bmm", [](const Tensor& x) { auto a = reshape(x, {2, 1, 3}); return sum(square(bmm(a, a, true))); }},
      {"bmm_plain", [](const Tensor& x) { auto a = reshape(x, {1, 2, 3}); return sum(bmm(a, permute(a, {0, 2, 1}))); }},
      {"add_broadcast", [](const Tensor& x) { return sum(square(add(reshape(x, {2, 3}), Tensor::from({3}, {1, 2, 3})))); }},
      {"mul_broadcast", [](const Tensor& x) { auto m = reshape(x, {2, 3}); return sum(mul(m, take(m, std::vector<std::size_t>{0, 4}, {2, 1}))); }},
      {"div", [](const Tensor& x) { return sum(div(x, add_scalar(square(x), 1.0))); }},
      {"exp_log", [](const Tensor& x) { return sum(log(add_scalar(exp(x), 1.0))); }},
      {"pow", [](const Tensor& x) { return sum(pow_scalar(add_scalar(square(x), 0.5), -1.5)); }},
      {"relu", [](const Tensor& x) { return sum(square(relu(x))); }},
      {"softmax_axis0", [](const Tensor& x) { return sum(square(softmax(reshape(x, {2, 3}), 0))); }},
      {"softmax_axis1", [](const Tensor& x) { return sum(mul(softmax(reshape(x, {2, 3}), 1), Tensor::from({3}, {1, -2, 3}))); }},
      {"log_softmax", [](const Tensor& x) { return sum(mul(log_softmax(reshape(x, {3, 2}), 1), Tensor::from({2}, {0.3, -1}))); }},
      {"sum_axis", [](const Tensor& x) { return sum(square(sum_axis(reshape(x, {2, 3}), 1, true))); }},
      {"mean", [](const Tensor& x) { return square(mean(x)); }},
      {"permute", [](const Tensor& x) { return sum(mul(permute(reshape(x, {1, 2, 3}), {2, 0, 1}), Tensor::from({3, 1, 2}, {1, 2, 3, 4, 5, 6}))); }},
      {"index_rows", [](const Tensor& x) { return sum(square(index_rows(reshape(x, {3, 2}), std::vector<std::size_t>{2, 0, 2}))); }},
      {"pairwise_sq_dist", [](const Tensor& x) { auto m = reshape(x, {3, 2}); return sum(square(pairwise_sq_dist(m, index_rows(m, std::vector<std::size_t>{1})))); }},
  };
  for (const auto& [name, f] : cases) {
    for (int trial = 0; trial < 10; ++trial) {
      auto x = random_tensor({6}, rng);
      EXPECT_LT(grad_check(f, x, 1e-6), 1e-6) << name << " trial " << trial;
    }
  }
}

TEST(Rng, DeterministicPerSeedAndLabel) {
  RngStream a(42, StreamLabel::shuffle), b(42, StreamLabel::shuffle), c(42, StreamLabel::sample);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    EXPECT_NE(x, c.next_u64());
  }
}

TEST(Rng, ForksAreIndependentOfParentProgress) {
  RngStream a(3, StreamLabel::sample);
  RngStream early = a.fork(9);
  for (int i = 0; i < 10; ++i) a.next_u64();
  RngStream late = a.fork(9);
  EXPECT_EQ(early.next_u64(), late.next_u64());
}

TEST(Rng, SameValuesAcrossThreads) {
  std::vector<double> main_values, thread_values;
  RngStream s(5, StreamLabel::synth);
  for (int i = 0; i < 50; ++i) main_values.push_back(s.normal());
  std::thread t([&] {
    RngStream s2(5, StreamLabel::synth);
    for (int i = 0; i < 50; ++i) thread_values.push_back(s2.normal());
  });
  t.join();
  EXPECT_EQ(main_values, thread_values);
}

TEST(Rng, UniformMomentsAndPermutation) {
  RngStream s(1, StreamLabel::synth);
  double total = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = s.uniform();
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
    total += u;
  }
  EXPECT_NEAR(total / n, 0.5, 0.005);
  auto perm = s.permutation(50);
  std::sort(perm.begin(), perm.end());
  for (std::size_t i = 0; i < perm.size(); ++i) EXPECT_EQ(perm[i], i);
}
