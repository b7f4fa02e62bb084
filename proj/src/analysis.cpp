#include "leal/analysis.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>

#include "leal/errors.hpp"

namespace leal {
namespace {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Matrix to_eigen(const Tensor& t) {
  if (t.ndim() != 2) throw DimensionError("expected a matrix, got " + shape_str(t.shape()));
  return Eigen::Map<const RowMajor>(t.data().data(), static_cast<Eigen::Index>(t.dim(0)),
                                    static_cast<Eigen::Index>(t.dim(1)));
}

Tensor from_eigen(const Matrix& m) {
  RowMajor r = m;
  return Tensor::from({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                      std::vector<double>(r.data(), r.data() + r.size()));
}

Vector to_vector(const Tensor& t) {
  return Eigen::Map<const Vector>(t.data().data(), static_cast<Eigen::Index>(t.numel()));
}

void normalize_columns(Matrix& x, ColumnNormalization how) {
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    auto col = x.col(j);
    col.array() -= col.mean();
    if (how == ColumnNormalization::standardized) {
      const double sd = std::sqrt(col.squaredNorm() / static_cast<double>(x.rows()));
      if (sd > 0) col /= sd;
    } else if (how == ColumnNormalization::unit_norm) {
      const double norm = col.norm();
      if (norm > 0) col /= norm;
    }
  }
}

Matrix gather(const Matrix& x, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

/// Residual of y after least squares on the columns of x; throws on rank deficiency.
Vector ls_residual(const Matrix& x, const Vector& y, const char* what) {
  if (x.cols() == 0) return y;
  Eigen::ColPivHouseholderQR<Matrix> qr(x);
  if (qr.rank() < x.cols())
    throw std::domain_error(std::string(what) + " design is rank deficient (rank " + std::to_string(qr.rank()) +
                            " of " + std::to_string(x.cols()) + " columns); regenerate the instance");
  return y - x * qr.solve(y);
}

Matrix ls_residual(const Matrix& x, const Matrix& y, const char* what) {
  if (x.cols() == 0) return y;
  Eigen::ColPivHouseholderQR<Matrix> qr(x);
  if (qr.rank() < x.cols())
    throw std::domain_error(std::string(what) + " design is rank deficient; regenerate the instance");
  return y - x * qr.solve(y);
}

double mse_on(const Matrix& x, const Vector& y, const char* what) {
  return ls_residual(x, y, what).squaredNorm() / static_cast<double>(y.size());
}

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double entropy_bits(const std::map<std::vector<std::size_t>, std::size_t>& counts, std::size_t n) {
  double h = 0.0;
  for (const auto& [key, c] : counts) {
    const double p = static_cast<double>(c) / static_cast<double>(n);
    h -= p * std::log2(p);
  }
  return h;
}

}  // namespace

double eval_metrics(const std::vector<double>& predictions, const std::vector<double>& targets, nn::Task task) {
  if (predictions.size() != targets.size())
    throw std::invalid_argument("eval_metrics: " + std::to_string(predictions.size()) + " predictions for " +
                                std::to_string(targets.size()) + " targets");
  if (predictions.empty()) throw std::invalid_argument("eval_metrics: empty input");
  const double n = static_cast<double>(predictions.size());
  if (task == nn::Task::classification) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) hits += predictions[i] == targets[i];
    return static_cast<double>(hits) / n;
  }
  double sq = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) sq += (predictions[i] - targets[i]) * (predictions[i] - targets[i]);
  return std::sqrt(sq / n);
}

// ---------------------------------------------------------------------------
// Alignment theorem
// ---------------------------------------------------------------------------

std::string to_string(ColumnNormalization n) {
  switch (n) {
    case ColumnNormalization::centered: return "centered";
    case ColumnNormalization::standardized: return "standardized";
    case ColumnNormalization::unit_norm: return "unit_norm";
  }
  return "centered";
}

ColumnNormalization normalization_from_string(const std::string& s) {
  if (s == "centered") return ColumnNormalization::centered;
  if (s == "standardized") return ColumnNormalization::standardized;
  if (s == "unit_norm") return ColumnNormalization::unit_norm;
  throw ConfigError("normalization", "expected centered, standardized or unit_norm, got '" + s + "'");
}

TheoremInstance make_theorem_instance(std::size_t n, std::size_t mp, std::size_t ms, double sigma,
                                      std::uint64_t seed, ColumnNormalization normalization) {
  if (n <= mp + ms) throw std::invalid_argument("theorem instance needs n > m_p + m_s");
  if (!(sigma >= 0.0)) throw std::invalid_argument("theorem instance needs sigma >= 0");
  RngStream rng(seed, StreamLabel::synth);
  const auto rows = static_cast<Eigen::Index>(n);
  Matrix xp(rows, static_cast<Eigen::Index>(mp)), xs_aligned(rows, static_cast<Eigen::Index>(ms));
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < xp.cols(); ++j) xp(i, j) = rng.normal();
    for (Eigen::Index j = 0; j < xs_aligned.cols(); ++j) xs_aligned(i, j) = rng.normal();
  }
  normalize_columns(xp, normalization);
  normalize_columns(xs_aligned, normalization);

  TheoremInstance t;
  t.sigma = sigma;
  t.normalization = normalization;
  for (std::size_t j = 0; j < mp; ++j) t.alpha.push_back(rng.normal());
  for (std::size_t j = 0; j < ms; ++j) t.beta.push_back(rng.normal());
  t.perm = rng.permutation(n);

  Vector y = xp * Eigen::Map<const Vector>(t.alpha.data(), static_cast<Eigen::Index>(mp)) +
             xs_aligned * Eigen::Map<const Vector>(t.beta.data(), static_cast<Eigen::Index>(ms));
  for (Eigen::Index i = 0; i < rows; ++i) y(i) += sigma * rng.normal();

  // Secondary order: aligned row i lives at xs[perm[i]].
  Matrix xs(rows, xs_aligned.cols());
  for (std::size_t i = 0; i < n; ++i) xs.row(static_cast<Eigen::Index>(t.perm[i])) = xs_aligned.row(static_cast<Eigen::Index>(i));
  t.xp = from_eigen(xp);
  t.xs = from_eigen(xs);
  t.y = Tensor::from({n}, std::vector<double>(y.data(), y.data() + y.size()));
  return t;
}

nlohmann::json TheoremReport::to_json() const {
  return {{"mse_aligned", mse_aligned},
          {"mse_aligned_direct", mse_aligned_direct},
          {"mse_misaligned_closed_form", mse_misaligned_closed_form},
          {"mse_misaligned_mc", mse_misaligned_mc},
          {"mc_standard_error", mc_standard_error},
          {"n_perms", n_perms},
          {"holds", holds},
          {"mc_consistent", mc_consistent},
          {"normalization", to_string(normalization)}};
}

TheoremReport verify_alignment_theorem(const TheoremInstance& t, std::size_t n_perms, std::uint64_t seed) {
  if (n_perms == 0) throw std::invalid_argument("verify_alignment_theorem: n_perms must be at least 1");
  const Matrix xp = to_eigen(t.xp);
  const Matrix xs = to_eigen(t.xs);
  const Vector y = to_vector(t.y);
  const std::size_t n = static_cast<std::size_t>(y.size());
  if (static_cast<std::size_t>(xp.rows()) != n || static_cast<std::size_t>(xs.rows()) != n || t.perm.size() != n)
    throw DimensionError("verify_alignment_theorem: row counts disagree");
  if (n <= static_cast<std::size_t>(xp.cols() + xs.cols()))
    throw std::invalid_argument("verify_alignment_theorem: needs n > m_p + m_s");

  TheoremReport r;
  r.normalization = t.normalization;
  r.n_perms = n_perms;

  // Primary-only fit: the misaligned optimum, where the secondary coefficients vanish.
  const Vector resid_p = ls_residual(xp, y, "primary");
  const double rss_p = resid_p.squaredNorm();
  r.mse_misaligned_closed_form = rss_p / static_cast<double>(n);

  // Nested least squares: RSS_aligned = RSS_p - r' Z (Z'Z)^-1 Z' r with Z = M_p R X^S.
  const Matrix xs_aligned = gather(xs, t.perm);
  const Matrix z = ls_residual(xp, xs_aligned, "primary");
  Eigen::LLT<Matrix> llt(z.transpose() * z);
  if (llt.info() != Eigen::Success)
    throw std::domain_error("aligned design is rank deficient; regenerate the instance");
  const Vector u = llt.matrixL().solve(z.transpose() * resid_p);
  const double explained = u.squaredNorm();
  r.mse_aligned = std::max(0.0, rss_p - explained) / static_cast<double>(n);

  Matrix design(xp.rows(), xp.cols() + xs.cols());
  design << xp, xs_aligned;
  r.mse_aligned_direct = mse_on(design, y, "aligned");
  r.holds = r.mse_aligned <= r.mse_misaligned_closed_form;

  RngStream rng(seed, StreamLabel::sample);
  std::vector<double> mses;
  for (std::size_t k = 0; k < n_perms; ++k) {
    design << xp, gather(xs, rng.permutation(n));
    mses.push_back(mse_on(design, y, "misaligned"));
  }
  const double mean = std::accumulate(mses.begin(), mses.end(), 0.0) / static_cast<double>(n_perms);
  double var = 0.0;
  for (double v : mses) var += (v - mean) * (v - mean);
  var = n_perms > 1 ? var / static_cast<double>(n_perms - 1) : 0.0;
  r.mse_misaligned_mc = mean;
  r.mc_standard_error = std::sqrt(var / static_cast<double>(n_perms));
  r.mc_consistent = r.mse_misaligned_mc >= r.mse_aligned - 3.0 * r.mc_standard_error;
  return r;
}

// ---------------------------------------------------------------------------
// Motivation task
// ---------------------------------------------------------------------------

MotivationResult motivation_experiment(std::size_t n, std::uint64_t seed, bool constant_x2, std::size_t gd_steps) {
  if (n < 100) throw std::invalid_argument("motivation_experiment: n must be at least 100");
  RngStream rng(seed, StreamLabel::synth);
  const auto rows = static_cast<Eigen::Index>(n);
  Vector x1(rows), x2(rows), y(rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    x1(i) = rng.normal();
    x2(i) = constant_x2 ? 0.5 : rng.normal();
    y(i) = x1(i) + x2(i) > 0 ? 1.0 : 0.0;
  }
  const auto perm = rng.permutation(n);
  Vector x2_shuffled(rows);
  for (std::size_t i = 0; i < n; ++i) x2_shuffled(static_cast<Eigen::Index>(i)) = x2(static_cast<Eigen::Index>(perm[i]));

  auto design = [&](const Vector& second) {
    Matrix d(rows, 3);
    d.col(0).setOnes();
    d.col(1) = x1;
    d.col(2) = second;
    return d;
  };
  // Minimum-norm least squares copes with the degenerate constant column.
  auto fit = [&](const Matrix& d, std::vector<double>& coef) {
    const Vector c = d.completeOrthogonalDecomposition().solve(y);
    coef.assign(c.data(), c.data() + c.size());
    return (y - d * c).squaredNorm() / static_cast<double>(n);
  };
  // Full-batch gradient descent from zero, to draw the convergence curves.
  auto descend = [&](const Matrix& d) {
    std::vector<double> curve;
    Vector c = Vector::Zero(3);
    const double step = 0.1;
    for (std::size_t s = 0; s <= gd_steps; ++s) {
      const Vector resid = d * c - y;
      curve.push_back(resid.squaredNorm() / static_cast<double>(n));
      c -= step * 2.0 / static_cast<double>(n) * (d.transpose() * resid);
    }
    return curve;
  };

  MotivationResult r;
  const Matrix aligned = design(x2), misaligned = design(x2_shuffled);
  r.aligned_mse = fit(aligned, r.aligned_coef);
  r.misaligned_mse = fit(misaligned, r.misaligned_coef);
  r.aligned_curve = descend(aligned);
  r.misaligned_curve = descend(misaligned);

  auto boundary_x2 = [](const std::vector<double>& c, double v) {
    return std::abs(c[2]) > 1e-12 ? (0.5 - c[0] - c[1] * v) / c[2] : std::nan("");
  };
  for (int i = 0; i <= 60; ++i) {
    const double v = -3.0 + 0.1 * i;
    r.boundary.push_back({v, boundary_x2(r.aligned_coef, v), boundary_x2(r.misaligned_coef, v)});
  }
  return r;
}

std::string motivation_loss_csv(const MotivationResult& r) {
  std::ostringstream out;
  out << "iteration,aligned_mse,misaligned_mse\n";
  for (std::size_t i = 0; i < r.aligned_curve.size(); ++i)
    out << i << ',' << fmt(r.aligned_curve[i]) << ',' << fmt(r.misaligned_curve[i]) << '\n';
  return out.str();
}

std::string motivation_boundary_csv(const MotivationResult& r) {
  std::ostringstream out;
  out << "x1,x2_aligned,x2_misaligned\n";
  for (const auto& b : r.boundary) out << fmt(b[0]) << ',' << fmt(b[1]) << ',' << fmt(b[2]) << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------
// Information fraction
// ---------------------------------------------------------------------------

nlohmann::json IfEstimate::to_json() const {
  return {{"value", value},
          {"h_y_given_p", h_y_given_p},
          {"h_y_given_ps", h_y_given_ps},
          {"samples", samples},
          {"joint_support", joint_support},
          {"support_warning", support_warning}};
}

IfEstimate information_fraction(const std::vector<std::size_t>& y,
                                const std::vector<std::vector<std::size_t>>& xp_columns,
                                const std::vector<std::vector<std::size_t>>& xs_columns) {
  const std::size_t n = y.size();
  if (n == 0) throw std::invalid_argument("information_fraction: no samples");
  for (const auto* cols : {&xp_columns, &xs_columns})
    for (const auto& c : *cols)
      if (c.size() != n) throw DimensionError("information_fraction: column length differs from y");

  std::map<std::vector<std::size_t>, std::size_t> p, yp, ps, yps;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> key;
    for (const auto& c : xp_columns) key.push_back(c[i]);
    ++p[key];
    key.push_back(y[i]);
    ++yp[key];
    key.pop_back();
    for (const auto& c : xs_columns) key.push_back(c[i]);
    ++ps[key];
    key.push_back(y[i]);
    ++yps[key];
  }
  IfEstimate e;
  e.samples = n;
  e.joint_support = yps.size();
  e.support_warning = n < 10 * e.joint_support;
  e.h_y_given_p = std::max(0.0, entropy_bits(yp, n) - entropy_bits(p, n));
  // Conditioning on more variables cannot raise the plug-in entropy; clamp away rounding.
  e.h_y_given_ps = std::clamp(entropy_bits(yps, n) - entropy_bits(ps, n), 0.0, e.h_y_given_p);
  if (e.h_y_given_p <= 1e-12)
    throw std::domain_error("information fraction undefined: y is determined by the primary features");
  e.value = std::clamp((e.h_y_given_p - e.h_y_given_ps) / e.h_y_given_p, 0.0, 1.0);
  return e;
}

std::vector<std::size_t> discretize(const std::vector<double>& values, std::size_t bins) {
  if (bins == 0) throw std::invalid_argument("discretize: bins must be at least 1");
  if (values.empty()) return {};
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double width = (*hi - *lo) / static_cast<double>(bins);
  std::vector<std::size_t> out(values.size(), 0);
  if (!(width > 0)) return out;
  for (std::size_t i = 0; i < values.size(); ++i)
    out[i] = std::min(bins - 1, static_cast<std::size_t>((values[i] - *lo) / width));
  return out;
}

// ---------------------------------------------------------------------------
// Approximation smoke test
// ---------------------------------------------------------------------------

ApproximationResult approximation_smoke_test(std::size_t max_steps, double threshold, std::uint64_t seed) {
  constexpr std::size_t grid = 4, clusters = 4, dim = 8, hidden = 16;
  std::vector<double> axis(grid), target;
  for (std::size_t i = 0; i < grid; ++i) axis[i] = static_cast<double>(i) / (grid - 1);
  for (double p : axis)
    for (double s : axis) target.push_back(p * p * (1.0 - s));
  const Tensor xp = Tensor::from({grid, 1}, axis);
  const Tensor xs = Tensor::from({grid, 1}, axis);
  const Tensor h = Tensor::from({grid, grid}, target);

  auto init = RngStream(seed, StreamLabel::init);
  const auto generator = nn::Mlp::init({{1, hidden, clusters}, false}, init);
  const auto encoder = nn::Mlp::init({{1, hidden, dim}, false}, init);
  const auto combiner = nn::Mlp::init({{1, hidden, 1}, false}, init);
  auto km = init.fork(0x63);
  const Tensor centroids = init_centroids_kmeans(mlp_forward(encoder, xs), clusters, km);

  ParamList params;
  generator.collect("generator", params);
  encoder.collect("encoder", params);
  combiner.collect("combiner", params);
  params.push_back({"centroids", centroids});
  nn::AdamW opt(params, {.lr = 1e-2, .weight_decay = 0.0});

  auto predict = [&] {
    const Tensor q = in_cluster_probs(mlp_forward(encoder, xs), centroids, 1.0);
    const Tensor w = cluster_weights(xp, generator);
    return pointwise_mlp(combiner, matmul(w, transpose(q)));  // [grid_p x grid_s]
  };

  ApproximationResult r;
  for (std::size_t step = 1; step <= max_steps; ++step) {
    Tape tape;
    Tensor loss;
    {
      auto scope = tape.record();
      loss = mean(square(sub(predict(), h)));
    }
    opt.zero_grad();
    tape.backward(loss);
    opt.step();
    r.steps = step;
    const double mse = mean(square(sub(predict(), h))).item();
    if (!std::isfinite(mse)) throw NumericError("approximation smoke test diverged at step " + std::to_string(step));
    r.final_mse = mse;
    if (step % 100 == 0) r.curve.push_back(mse);
    if (mse < threshold && r.steps_to_threshold == 0) {
      r.steps_to_threshold = step;
      break;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Timing
// ---------------------------------------------------------------------------

double log_log_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("log_log_slope: needs two or more pairs");
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0) || !(y[i] > 0)) throw std::domain_error("log_log_slope: values must be positive");
    lx.push_back(std::log(x[i]));
    ly.push_back(std::log(y[i]));
  }
  const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / static_cast<double>(lx.size());
  const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / static_cast<double>(ly.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxy += (lx[i] - mx) * (ly[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
  }
  if (sxx == 0.0) throw std::domain_error("log_log_slope: x values are all equal");
  return sxy / sxx;
}

nlohmann::json TimingReport::to_json() const {
  return {{"k", ks}, {"mean_epoch_seconds", mean_seconds}, {"std_epoch_seconds", std_seconds},
          {"slope", slope}, {"increasing", increasing}};
}

TimingReport timing_scaling(const DatasetBundle& bundle, const std::vector<std::size_t>& ks, LealConfig config,
                            std::size_t epochs) {
  if (ks.size() < 3) throw std::invalid_argument("timing_scaling: needs at least three K values");
  if (epochs < 1) throw std::invalid_argument("timing_scaling: needs at least one measured epoch");
  TimingReport r;
  r.ks = ks;
  config.max_epochs = epochs + 1;
  config.patience = config.max_epochs;  // never stops early
  for (std::size_t k : ks) {
    config.k = k;
    const auto report = train_leal(bundle, config).report;
    std::vector<double> secs;
    for (std::size_t i = 1; i < report.epochs.size(); ++i) secs.push_back(report.epochs[i].seconds);
    const double mean = std::accumulate(secs.begin(), secs.end(), 0.0) / static_cast<double>(secs.size());
    double var = 0.0;
    for (double s : secs) var += (s - mean) * (s - mean);
    r.mean_seconds.push_back(mean);
    r.std_seconds.push_back(secs.size() > 1 ? std::sqrt(var / static_cast<double>(secs.size() - 1)) : 0.0);
  }
  std::vector<double> kd(ks.begin(), ks.end());
  r.slope = log_log_slope(kd, r.mean_seconds);
  r.increasing = true;
  for (std::size_t i = 1; i < ks.size(); ++i)
    if (!(r.mean_seconds[i] > r.mean_seconds[i - 1]) || !(ks[i] > ks[i - 1])) r.increasing = false;
  return r;
}

}  // namespace leal
