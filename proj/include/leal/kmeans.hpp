#pragma once

#include <cstddef>
#include <vector>

#include "leal/rng.hpp"
#include "leal/tensor.hpp"

namespace leal {

struct KMeansResult {
  Tensor centroids;  // [C x d]
  std::vector<std::size_t> assignment;
  double sse = 0.0;          // after Lloyd
  double initial_sse = 0.0;  // of the k-means++ seeding
  std::size_t iterations = 0;
  bool converged = false;  // assignments stopped changing before the cap
};

/// k-means++ seeding followed by Lloyd iterations until assignments are stable or
/// `max_iterations` is reached. An emptied cluster keeps its previous centroid.
KMeansResult kmeans(const Tensor& points, std::size_t clusters, RngStream& stream,
                    std::size_t max_iterations = 100);

}  // namespace leal
