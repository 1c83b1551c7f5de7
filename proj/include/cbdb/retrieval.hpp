#ifndef CBDB_RETRIEVAL_HPP_
#define CBDB_RETRIEVAL_HPP_

#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "cbdb/elastic_loss.hpp"
#include "cbdb/tensor.hpp"

namespace cbdb {

struct EvalMetrics {
  std::map<int, double> rank_k;  // k -> CMC hit rate
  double mean_ap = 0.0;
  std::size_t num_valid_queries = 0;
};

/// Squared Euclidean distances between rows of a [nq,D] and b [ng,D].
Tensor cross_sq_dist(const Tensor& a, const Tensor& b);

/// Single-query protocol over a precomputed [nq, ng] distance matrix.
/// Gallery entries sharing both id and camera with the query are removed
/// before ranking; queries left without a true match are not counted. Ties
/// in distance keep gallery order. AP is the mean of precision at each hit.
EvalMetrics evaluate_distances(const Tensor& dist, std::span<const int> query_ids,
                               std::span<const int> query_cams, std::span<const int> gallery_ids,
                               std::span<const int> gallery_cams, std::span<const int> ks);

/// Ranks gallery by squared distance to each query. Both sets need cameras.
EvalMetrics evaluate(const DescriptorBatch& query, const DescriptorBatch& gallery,
                     std::span<const int> ks);

struct RerankParams {
  int k1 = 20;
  int k2 = 6;
  double lambda = 0.3;

  // Shrinks k1/k2 to what a problem with `total` = nq + ng items supports.
  RerankParams clamped(std::size_t total) const;
};

/// k-reciprocal re-ranking. Neighbourhoods and Gaussian weights are computed
/// on row-max-normalised distances; the final blend uses the inputs as given:
///   out = lambda * q_g + (1 - lambda) * jaccard.
/// Throws ConfigError unless 1 <= k1 < nq+ng and 1 <= k2 <= nq+ng.
Tensor k_reciprocal_rerank(const Tensor& q_g, const Tensor& q_q, const Tensor& g_g,
                           const RerankParams& params = {});

}  // namespace cbdb

#endif  // CBDB_RETRIEVAL_HPP_
