#ifndef CBDB_ELASTIC_LOSS_HPP_
#define CBDB_ELASTIC_LOSS_HPP_

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "cbdb/tensor.hpp"

namespace cbdb {

/// N embedding rows with identity labels and, for evaluation, camera labels.
struct DescriptorBatch {
  Tensor vectors;  // [N, D]
  std::vector<int> ids;
  std::vector<int> cameras;  // empty when unused

  std::size_t size() const { return ids.size(); }
  void validate() const;
};

/// Hardest positive / negative for one anchor, in squared-distance units.
struct HardPair {
  double max_pos_dist = 0.0;
  double min_neg_dist = 0.0;
  std::size_t hardest_pos_index = 0;
  std::size_t hardest_neg_index = 0;
  bool valid = false;  // false iff the anchor has no positive or no negative
};

using HardPairs = std::vector<HardPair>;

struct ElasticParams {
  double eta = 3.0;
  bool detach_weight = false;
  // Replaces sigma(delta) by a constant and treats it as detached. Setting it
  // to 1 turns the elastic loss into the plain batch-hard triplet loss.
  std::optional<double> fixed_weight;
};

struct LossResult {
  double loss = 0.0;
  Tensor grad;                  // d loss / d vectors, [N, D]
  std::size_t valid_anchors = 0;
  std::vector<double> weights;  // per anchor weight used (0 for invalid anchors)
};

/// d(i,j) = sum_d (v_i[d] - v_j[d])^2. Symmetric with an exactly zero diagonal.
Tensor pairwise_sq_dist(const Tensor& vectors);

/// Per-anchor batch-hard mining. Self-pairs never count as positives; ties
/// go to the lowest index.
HardPairs batch_hard_mine(const Tensor& dist, std::span<const int> ids);

struct ElasticWeight {
  double delta = 0.0;
  double w = 0.5;
};

/// delta = max_pos / (min_neg + 1), w = 1 / (1 + exp(-delta)); w lies in [1/2, 1).
ElasticWeight elastic_weight(double max_pos, double min_neg);

/// Mean over valid anchors of [eta + max_pos - min_neg]_+. Gradients flow
/// through the mined pairs only.
LossResult hard_triplet_loss(const Tensor& vectors, const HardPairs& pairs, double eta);

/// Mean over valid anchors of w(delta) * [eta + max_pos - min_neg]_+.
LossResult elastic_triplet_loss(const Tensor& vectors, const HardPairs& pairs,
                                const ElasticParams& params);

struct BranchLossResult {
  double loss = 0.0;
  std::vector<Tensor> grads;  // one per branch
  std::size_t valid_units = 0;
};

/// Elastic loss summed over branches, each mined on its own distance matrix,
/// normalised by the number of valid (anchor, branch) units.
BranchLossResult batch_elastic_loss(std::span<const DescriptorBatch> branches,
                                    const ElasticParams& params);

// Same as above over raw descriptor tensors sharing one label vector.
BranchLossResult batch_elastic_loss(std::span<const Tensor> branches, std::span<const int> ids,
                                    const ElasticParams& params);

}  // namespace cbdb

#endif  // CBDB_ELASTIC_LOSS_HPP_
