#include "leal/kmeans.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>

namespace leal {
namespace {

double sq_dist(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t k = 0; k < d; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return s;
}

// Nearest centroid of every point; returns the total squared distance.
double assign(const std::vector<double>& x, const std::vector<double>& c, std::size_t n, std::size_t clusters,
              std::size_t d, std::vector<std::size_t>& out) {
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t j = 0; j < clusters; ++j) {
      const double dist = sq_dist(&x[i * d], &c[j * d], d);
      if (dist < best) {
        best = dist;
        arg = j;
      }
    }
    out[i] = arg;
    total += best;
  }
  return total;
}

}  // namespace

KMeansResult kmeans(const Tensor& points, std::size_t clusters, RngStream& stream,
                    std::size_t max_iterations) {
  if (points.ndim() != 2) throw DimensionError("kmeans: points must be 2-D, got " + shape_str(points.shape()));
  const std::size_t n = points.dim(0), d = points.dim(1);
  if (clusters == 0) throw std::invalid_argument("kmeans: need at least one cluster");
  if (n < clusters)
    throw std::invalid_argument("kmeans: " + std::to_string(n) + " points cannot form " +
                                std::to_string(clusters) + " clusters");
  const auto& x = points.values();

  // k-means++: first seed uniform, then proportional to squared distance to the nearest seed.
  std::vector<double> c(clusters * d);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::vector<bool> chosen(n, false);
  std::size_t pick = stream.below(n);
  for (std::size_t j = 0; j < clusters; ++j) {
    if (j > 0) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) total += chosen[i] ? 0.0 : nearest[i];
      if (total > 0.0) {
        double target = stream.uniform() * total;
        pick = n;
        for (std::size_t i = 0; i < n; ++i) {
          if (chosen[i] || nearest[i] == 0.0) continue;
          pick = i;
          target -= nearest[i];
          if (target <= 0.0) break;
        }
      } else {
        // Every remaining point coincides with a seed: take the k-th unchosen one uniformly.
        std::size_t k = stream.below(n - j);
        for (pick = 0; chosen[pick] || k-- > 0; ++pick) {
        }
      }
    }
    chosen[pick] = true;
    std::copy_n(&x[pick * d], d, &c[j * d]);
    for (std::size_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], sq_dist(&x[i * d], &c[j * d], d));
  }

  KMeansResult r;
  r.assignment.assign(n, 0);
  r.initial_sse = assign(x, c, n, clusters, d, r.assignment);
  r.sse = r.initial_sse;
  std::vector<std::size_t> next(n);
  std::vector<double> sums(clusters * d);
  std::vector<std::size_t> counts(clusters);
  while (r.iterations < max_iterations) {
    ++r.iterations;
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[r.assignment[i]];
      for (std::size_t k = 0; k < d; ++k) sums[r.assignment[i] * d + k] += x[i * d + k];
    }
    for (std::size_t j = 0; j < clusters; ++j)
      if (counts[j] > 0)
        for (std::size_t k = 0; k < d; ++k) c[j * d + k] = sums[j * d + k] / static_cast<double>(counts[j]);
    r.sse = assign(x, c, n, clusters, d, next);
    if (next == r.assignment) {
      r.converged = true;
      break;
    }
    r.assignment.swap(next);
  }
  r.centroids = Tensor::from({clusters, d}, std::move(c));
  return r;
}

}  // namespace leal
