#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "leal/nn.hpp"
#include "leal/tensor.hpp"
#include "leal/training.hpp"

namespace leal {

/// Accuracy (fraction of equal entries) for classification, RMSE for regression.
double eval_metrics(const std::vector<double>& predictions, const std::vector<double>& targets, nn::Task task);

// ---------------------------------------------------------------------------
// Alignment theorem: least-squares loss with the true alignment never exceeds the
// loss of the best misaligned fit.
// ---------------------------------------------------------------------------

enum class ColumnNormalization { centered, standardized, unit_norm };

std::string to_string(ColumnNormalization n);
ColumnNormalization normalization_from_string(const std::string& s);

/// y = X^P alpha + R X^S beta + sigma * eps. `xs` is stored in secondary order; row i of
/// the aligned design is xs[perm[i]].
struct TheoremInstance {
  Tensor xp, xs, y;
  std::vector<double> alpha, beta;
  std::vector<std::size_t> perm;
  double sigma = 0.0;
  ColumnNormalization normalization = ColumnNormalization::centered;
};

TheoremInstance make_theorem_instance(std::size_t n, std::size_t mp, std::size_t ms, double sigma,
                                      std::uint64_t seed,
                                      ColumnNormalization normalization = ColumnNormalization::centered);

struct TheoremReport {
  double mse_aligned = 0.0;
  double mse_aligned_direct = 0.0;  // cross-check by a direct QR solve of [X^P, R X^S]
  double mse_misaligned_closed_form = 0.0;
  double mse_misaligned_mc = 0.0;
  double mc_standard_error = 0.0;
  std::size_t n_perms = 0;
  bool holds = false;           // mse_aligned <= closed form
  bool mc_consistent = false;   // mc mean >= mse_aligned - 3 SE
  ColumnNormalization normalization = ColumnNormalization::centered;

  nlohmann::json to_json() const;
};

/// Residual MSEs (RSS / n, no intercept) of y on the aligned design, on X^P alone (the
/// misaligned optimum, where the secondary coefficients vanish) and on n_perms random
/// misalignments. The aligned loss is computed as the primary loss minus the explained
/// part of the residualized secondary block, so the inequality is exact in floating point.
/// Throws std::domain_error on a rank-deficient design.
TheoremReport verify_alignment_theorem(const TheoremInstance& instance, std::size_t n_perms, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Two-table motivation task: x1 in one table, x2 in the other, y = 1[x1 + x2 > 0].
// ---------------------------------------------------------------------------

struct MotivationResult {
  double aligned_mse = 0.0;
  double misaligned_mse = 0.0;
  std::vector<double> aligned_coef, misaligned_coef;  // intercept, x1, x2
  /// Full-batch gradient descent curves converging to the two least-squares optima.
  std::vector<double> aligned_curve, misaligned_curve;
  /// Points (x1, x2) on each fitted 0.5 decision boundary.
  std::vector<std::array<double, 3>> boundary;  // x1, x2 aligned, x2 misaligned
};

MotivationResult motivation_experiment(std::size_t n, std::uint64_t seed, bool constant_x2 = false,
                                       std::size_t gd_steps = 200);

/// "iteration,aligned_mse,misaligned_mse" rows.
std::string motivation_loss_csv(const MotivationResult& r);
/// "x1,x2_aligned,x2_misaligned" rows.
std::string motivation_boundary_csv(const MotivationResult& r);

// ---------------------------------------------------------------------------
// Information fraction IF = I(y; X^S | X^P) / H(y | X^P) from plug-in entropies.
// ---------------------------------------------------------------------------

struct IfEstimate {
  double value = 0.0;  // clamped to [0, 1]
  double h_y_given_p = 0.0;
  double h_y_given_ps = 0.0;  // bits
  std::size_t samples = 0;
  std::size_t joint_support = 0;
  bool support_warning = false;  // fewer than 10 samples per observed joint cell

  nlohmann::json to_json() const;
};

/// Columns are discrete codes. Throws std::domain_error when H(y | X^P) = 0.
IfEstimate information_fraction(const std::vector<std::size_t>& y,
                                const std::vector<std::vector<std::size_t>>& xp_columns,
                                const std::vector<std::vector<std::size_t>>& xs_columns);

/// Equal-width binning into `bins` codes over [min, max].
std::vector<std::size_t> discretize(const std::vector<double>& values, std::size_t bins);

// ---------------------------------------------------------------------------
// Approximation smoke test for the sampler's score pathway.
// ---------------------------------------------------------------------------

struct ApproximationResult {
  double final_mse = 0.0;
  std::size_t steps = 0;
  std::size_t steps_to_threshold = 0;  // first step below the threshold, 0 if never
  std::vector<double> curve;           // MSE every 100 steps
};

/// Fits combiner(w(p) . q(g(s))) to h(p, s) = p^2 (1 - s) on a 4 x 4 grid over [0, 1]^2.
ApproximationResult approximation_smoke_test(std::size_t max_steps, double threshold, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Epoch time as a function of K.
// ---------------------------------------------------------------------------

struct TimingReport {
  std::vector<std::size_t> ks;
  std::vector<double> mean_seconds, std_seconds;  // over measured epochs, warm-up excluded
  double slope = 0.0;                             // d log(time) / d log(K)
  bool increasing = false;

  nlohmann::json to_json() const;
};

/// Trains `epochs` + 1 epochs at every K (early stopping off) and fits the log-log slope.
TimingReport timing_scaling(const DatasetBundle& bundle, const std::vector<std::size_t>& ks, LealConfig config,
                            std::size_t epochs = 3);

/// Least-squares slope of log(y) on log(x).
double log_log_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace leal
