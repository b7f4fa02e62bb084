#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include <Eigen/Dense>

#include "leal/analysis.hpp"
#include "leal/errors.hpp"

using namespace leal;

namespace {

// Independent oracle: residual MSE of y on the columns of x by the normal equations.
double ols_mse(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  const Eigen::VectorXd coef = (x.transpose() * x).ldlt().solve(x.transpose() * y);
  return (y - x * coef).squaredNorm() / static_cast<double>(y.size());
}

Eigen::MatrixXd eig(const Tensor& t) {
  Eigen::MatrixXd m(t.dim(0), t.dim(1));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) m(i, j) = t.at({i, j});
  return m;
}

Eigen::VectorXd eigv(const Tensor& t) {
  Eigen::VectorXd v(t.numel());
  for (std::size_t i = 0; i < t.numel(); ++i) v(i) = t.data()[i];
  return v;
}

std::vector<std::size_t> identity(std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  return p;
}

}  // namespace

TEST(EvalMetrics, Examples) {
  EXPECT_DOUBLE_EQ(eval_metrics({0, 1, 2}, {0, 1, 2}, nn::Task::classification), 1.0);
  EXPECT_DOUBLE_EQ(eval_metrics({1.5, -2}, {1.5, -2}, nn::Task::regression), 0.0);
  EXPECT_DOUBLE_EQ(eval_metrics({0, 0}, {0, 1}, nn::Task::classification), 0.5);
  EXPECT_DOUBLE_EQ(eval_metrics({0, 0}, {3, 4}, nn::Task::regression), std::sqrt(12.5));
  EXPECT_THROW(eval_metrics({}, {}, nn::Task::regression), std::invalid_argument);
  EXPECT_THROW(eval_metrics({1}, {1, 2}, nn::Task::regression), std::invalid_argument);
}

TEST(AlignmentTheorem, PrimaryOnlySignal) {
  auto t = make_theorem_instance(50, 2, 2, 0.0, 1);
  // Rebuild y from X^P alone.
  const auto xp = eig(t.xp);
  const Eigen::VectorXd y = xp * Eigen::Vector2d(1.5, -0.5);
  t.y = Tensor::from({50}, std::vector<double>(y.data(), y.data() + 50));
  auto r = verify_alignment_theorem(t, 10, 2);
  EXPECT_NEAR(r.mse_aligned, 0.0, 1e-20);
  EXPECT_NEAR(r.mse_misaligned_closed_form, 0.0, 1e-20);
  EXPECT_TRUE(r.holds);
}

TEST(AlignmentTheorem, SecondaryOnlySignalOrthogonalDesign) {
  // X^P and X^S occupy disjoint row supports, so they are exactly orthogonal.
  const std::size_t n = 8;
  std::vector<double> xp(n, 0.0), xs(n, 0.0);
  for (std::size_t i = 0; i < 4; ++i) xp[i] = i % 2 ? 1.0 : -1.0;
  for (std::size_t i = 4; i < 8; ++i) xs[i] = i < 6 ? 1.0 : -1.0;
  TheoremInstance t;
  t.xp = Tensor::from({n, 1}, xp);
  t.xs = Tensor::from({n, 1}, xs);
  t.perm = identity(n);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = 2.0 * xs[i];
  t.y = Tensor::from({n}, y);
  auto r = verify_alignment_theorem(t, 20, 3);
  EXPECT_NEAR(r.mse_aligned, 0.0, 1e-15);
  EXPECT_NEAR(r.mse_aligned_direct, 0.0, 1e-15);
  double var = 0.0;  // y has mean zero and X^P explains none of it
  for (double v : y) var += v * v;
  EXPECT_NEAR(r.mse_misaligned_closed_form, var / n, 1e-12);
  EXPECT_GT(r.mse_misaligned_closed_form, 0.0);
  EXPECT_TRUE(r.holds);
}

TEST(AlignmentTheorem, HoldsOnRandomInstancesAgainstOracle) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto t = make_theorem_instance(200, 3, 3, 0.1, seed);
    auto r = verify_alignment_theorem(t, 20, seed);
    ASSERT_TRUE(r.holds) << "seed " << seed;

    const auto xp = eig(t.xp), xs = eig(t.xs);
    const auto y = eigv(t.y);
    Eigen::MatrixXd aligned(200, 6);
    for (std::size_t i = 0; i < 200; ++i) aligned.row(i) << xp.row(i), xs.row(t.perm[i]);
    EXPECT_NEAR(r.mse_aligned, ols_mse(aligned, y), 1e-10) << seed;
    EXPECT_NEAR(r.mse_aligned_direct, ols_mse(aligned, y), 1e-10) << seed;
    EXPECT_NEAR(r.mse_misaligned_closed_form, ols_mse(xp, y), 1e-10) << seed;
  }
}

TEST(AlignmentTheorem, MonteCarloConsistent) {
  auto t = make_theorem_instance(200, 3, 3, 0.1, 42);
  auto r = verify_alignment_theorem(t, 200, 7);
  EXPECT_TRUE(r.mc_consistent);
  EXPECT_GT(r.mc_standard_error, 0.0);
  EXPECT_LE(r.mse_misaligned_mc, r.mse_misaligned_closed_form + 1e-12);  // extra columns never hurt
}

TEST(AlignmentTheorem, Normalizations) {
  for (auto how : {ColumnNormalization::centered, ColumnNormalization::standardized, ColumnNormalization::unit_norm}) {
    auto t = make_theorem_instance(100, 2, 2, 0.05, 5, how);
    const auto xp = eig(t.xp);
    for (Eigen::Index j = 0; j < xp.cols(); ++j) {
      EXPECT_NEAR(xp.col(j).mean(), 0.0, 1e-12);
      if (how == ColumnNormalization::unit_norm) EXPECT_NEAR(xp.col(j).norm(), 1.0, 1e-12);
      if (how == ColumnNormalization::standardized) EXPECT_NEAR(xp.col(j).squaredNorm() / 100, 1.0, 1e-12);
    }
    auto r = verify_alignment_theorem(t, 5, 1);
    EXPECT_TRUE(r.holds);
    EXPECT_EQ(r.to_json()["normalization"], to_string(how));
  }
  EXPECT_EQ(normalization_from_string("unit_norm"), ColumnNormalization::unit_norm);
  EXPECT_THROW(normalization_from_string("zscore"), ConfigError);
}

TEST(AlignmentTheorem, RankDeficientDesign) {
  auto t = make_theorem_instance(30, 2, 2, 0.1, 1);
  std::vector<double> xp(t.xp.values());
  for (std::size_t i = 0; i < 30; ++i) xp[i * 2 + 1] = 2.0 * xp[i * 2];
  t.xp = Tensor::from({30, 2}, xp);
  EXPECT_THROW(verify_alignment_theorem(t, 5, 1), std::domain_error);
  EXPECT_THROW(make_theorem_instance(6, 3, 3, 0.1, 1), std::invalid_argument);
}

TEST(Motivation, AlignedBeatsMisaligned) {
  auto r = motivation_experiment(5000, 1);
  EXPECT_LT(r.aligned_mse, r.misaligned_mse);
  EXPECT_LT(r.aligned_mse, 0.8 * r.misaligned_mse);
  // Gradient descent approaches the closed-form optimum from above.
  EXPECT_GE(r.aligned_curve.back(), r.aligned_mse - 1e-12);
  EXPECT_NEAR(r.aligned_curve.back(), r.aligned_mse, 1e-3);
  EXPECT_NEAR(r.misaligned_curve.back(), r.misaligned_mse, 1e-3);
}

TEST(Motivation, ConstantSecondFeatureCarriesNoInformation) {
  auto r = motivation_experiment(500, 3, true);
  EXPECT_EQ(r.aligned_mse, r.misaligned_mse);
}

TEST(Motivation, CsvIsDeterministic) {
  auto a = motivation_experiment(300, 9), b = motivation_experiment(300, 9);
  EXPECT_EQ(motivation_loss_csv(a), motivation_loss_csv(b));
  EXPECT_EQ(motivation_boundary_csv(a), motivation_boundary_csv(b));
  EXPECT_EQ(motivation_loss_csv(a).substr(0, 37), "iteration,aligned_mse,misaligned_mse\n");
  EXPECT_THROW(motivation_experiment(50, 1), std::invalid_argument);
}

TEST(InformationFraction, FunctionOfSecondary) {
  std::vector<std::size_t> y, p, s;
  for (std::size_t i = 0; i < 400; ++i) {
    s.push_back(i % 4);
    p.push_back((i / 4) % 2);
    y.push_back(s.back() % 2);
  }
  auto e = information_fraction(y, {p}, {s});
  EXPECT_NEAR(e.value, 1.0, 1e-12);
  EXPECT_NEAR(e.h_y_given_ps, 0.0, 1e-12);
}

TEST(InformationFraction, IndependentSecondary) {
  std::vector<std::size_t> y, p, s;
  for (std::size_t i = 0; i < 800; ++i) {
    y.push_back(i % 2);
    p.push_back((i / 2) % 2);
    s.push_back((i / 4) % 2);  // balanced across every (y, p) cell
  }
  auto e = information_fraction(y, {p}, {s});
  EXPECT_NEAR(e.value, 0.0, 1e-12);
  EXPECT_NEAR(e.h_y_given_p, 1.0, 1e-12);
}

TEST(InformationFraction, Xor) {
  // Each of the 4 (p, s) combinations appears equally often: H(y | p) = 1 bit.
  std::vector<std::size_t> y, p, s;
  for (std::size_t i = 0; i < 80; ++i) {
    p.push_back(i % 2);
    s.push_back((i / 2) % 2);
    y.push_back(p.back() ^ s.back());
  }
  auto e = information_fraction(y, {p}, {s});
  EXPECT_NEAR(e.h_y_given_p, 1.0, 1e-12);
  EXPECT_NEAR(e.value, 1.0, 1e-12);
  EXPECT_EQ(e.joint_support, 4u);
  EXPECT_FALSE(e.support_warning);
}

TEST(InformationFraction, ErrorsAndWarnings) {
  std::vector<std::size_t> p{0, 1, 0, 1}, s{0, 0, 1, 1};
  EXPECT_THROW(information_fraction(p, {p}, {s}), std::domain_error);  // y determined by X^P
  auto e = information_fraction({0, 1, 1, 0}, {p}, {s});
  EXPECT_TRUE(e.support_warning);
  EXPECT_THROW(information_fraction({0, 1}, {p}, {s}), DimensionError);
}

TEST(InformationFraction, Bounds) {
  RngStream rng(3, StreamLabel::synth);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::size_t> y, p, s;
    for (int i = 0; i < 200; ++i) {
      y.push_back(rng.below(3));
      p.push_back(rng.below(3));
      s.push_back(rng.below(4));
    }
    auto e = information_fraction(y, {p}, {s});
    EXPECT_GE(e.value, 0.0);
    EXPECT_LE(e.value, 1.0);
    EXPECT_LE(e.h_y_given_ps, e.h_y_given_p);
  }
}

TEST(Discretize, EqualWidth) {
  EXPECT_EQ(discretize({0.0, 0.24, 0.5, 0.76, 1.0}, 4), (std::vector<std::size_t>{0, 0, 2, 3, 3}));
  EXPECT_EQ(discretize({2.0, 2.0}, 3), (std::vector<std::size_t>{0, 0}));
  EXPECT_THROW(discretize({1.0}, 0), std::invalid_argument);
}

TEST(Approximation, ReachesThreshold) {
  auto r = approximation_smoke_test(5000, 1e-2, 0);
  EXPECT_LT(r.final_mse, 1e-2);
  EXPECT_GT(r.steps_to_threshold, 0u);
  EXPECT_LE(r.steps_to_threshold, 5000u);
}

TEST(LogLogSlope, Examples) {
  EXPECT_NEAR(log_log_slope({1, 2, 4}, {3, 12, 48}), 2.0, 1e-12);
  EXPECT_NEAR(log_log_slope({5, 10, 20}, {7, 7, 7}), 0.0, 1e-12);
  EXPECT_THROW(log_log_slope({1, 2}, {1, -1}), std::domain_error);
  EXPECT_THROW(log_log_slope({1}, {1}), std::invalid_argument);
}
