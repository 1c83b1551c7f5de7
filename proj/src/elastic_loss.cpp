#include "cbdb/elastic_loss.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "cbdb/errors.hpp"

namespace cbdb {

void DescriptorBatch::validate() const {
  if (vectors.rank() != 2 || vectors.dim(0) != ids.size()) {
    throw DimensionError("DescriptorBatch: vectors " + shape_to_string(vectors.shape()) + " vs " +
                         std::to_string(ids.size()) + " ids");
  }
  if (!cameras.empty() && cameras.size() != ids.size()) {
    throw DimensionError("DescriptorBatch: " + std::to_string(cameras.size()) + " cameras vs " +
                         std::to_string(ids.size()) + " ids");
  }
  if (!vectors.all_finite()) throw NumericError("DescriptorBatch: non-finite descriptor");
}

Tensor pairwise_sq_dist(const Tensor& vectors) {
  if (vectors.rank() != 2) {
    throw DimensionError("pairwise_sq_dist: expected [N,D], got " +
                         shape_to_string(vectors.shape()));
  }
  const std::size_t n = vectors.dim(0), d = vectors.dim(1);
  Tensor dist({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    const auto vi = vectors.row(i);
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto vj = vectors.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = vi[k] - vj[k];
        acc += diff * diff;
      }
      dist.at(i, j) = acc;
      dist.at(j, i) = acc;
    }
  }
  return dist;
}

HardPairs batch_hard_mine(const Tensor& dist, std::span<const int> ids) {
  const std::size_t n = ids.size();
  if (dist.rank() != 2 || dist.dim(0) != n || dist.dim(1) != n) {
    throw DimensionError("batch_hard_mine: dist " + shape_to_string(dist.shape()) + " vs " +
                         std::to_string(n) + " ids");
  }
  HardPairs pairs(n);
  for (std::size_t a = 0; a < n; ++a) {
    HardPair& hp = pairs[a];
    bool has_pos = false, has_neg = false;
    hp.max_pos_dist = -1.0;
    hp.min_neg_dist = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a) continue;
      const double d = dist.at(a, j);
      if (ids[j] == ids[a]) {
        if (d > hp.max_pos_dist) {
          hp.max_pos_dist = d;
          hp.hardest_pos_index = j;
        }
        has_pos = true;
      } else {
        if (d < hp.min_neg_dist) {
          hp.min_neg_dist = d;
          hp.hardest_neg_index = j;
        }
        has_neg = true;
      }
    }
    hp.valid = has_pos && has_neg;
    if (!has_pos) hp.max_pos_dist = 0.0;
    if (!has_neg) hp.min_neg_dist = 0.0;
  }
  return pairs;
}

ElasticWeight elastic_weight(double max_pos, double min_neg) {
  if (!(max_pos >= 0.0) || !(min_neg >= 0.0) || !std::isfinite(max_pos) ||
      !std::isfinite(min_neg)) {
    throw ConfigError("elastic_weight: distances must be finite and non-negative");
  }
  ElasticWeight ew;
  ew.delta = max_pos / (min_neg + 1.0);
  // delta >= 0, so exp(-delta) is in (0, 1] and cannot overflow. For delta
  // beyond ~37 the sigmoid rounds to 1.0; keep it strictly below 1.
  ew.w = std::min(1.0 / (1.0 + std::exp(-ew.delta)), std::nextafter(1.0, 0.0));
  return ew;
}

namespace {

// Per-anchor value and its partials w.r.t. the two mined squared distances.
struct AnchorTerm {
  double value = 0.0;
  double d_pos = 0.0;
  double d_neg = 0.0;
  double weight = 0.0;
};

AnchorTerm elastic_term(const HardPair& hp, const ElasticParams& params) {
  AnchorTerm t;
  const double hinge = params.eta + hp.max_pos_dist - hp.min_neg_dist;
  ElasticWeight ew;
  if (params.fixed_weight) {
    t.weight = *params.fixed_weight;
  } else {
    ew = elastic_weight(hp.max_pos_dist, hp.min_neg_dist);
    t.weight = ew.w;
  }
  if (hinge <= 0.0) return t;
  t.value = t.weight * hinge;
  t.d_pos = t.weight;
  t.d_neg = -t.weight;
  if (!params.fixed_weight && !params.detach_weight) {
    // dw/d(delta) = w(1 - w) = e/(1+e)^2 with e = exp(-delta);
    // d(delta)/d(pos) = 1/(neg+1); d(delta)/d(neg) = -pos/(neg+1)^2
    const double e = std::exp(-ew.delta);
    const double dw = e / ((1.0 + e) * (1.0 + e));
    const double denom = hp.min_neg_dist + 1.0;
    t.d_pos += dw * hinge / denom;
    t.d_neg += -dw * hinge * hp.max_pos_dist / (denom * denom);
  }
  return t;
}

// grad += scale * (d_pos * d||a-p||^2 + d_neg * d||a-n||^2)
void scatter_pair_grads(const Tensor& vectors, std::size_t a, const HardPair& hp, double d_pos,
                        double d_neg, double scale, Tensor& grad) {
  const std::size_t d = vectors.dim(1);
  const auto va = vectors.row(a);
  const auto vp = vectors.row(hp.hardest_pos_index);
  const auto vn = vectors.row(hp.hardest_neg_index);
  auto ga = grad.row(a);
  auto gp = grad.row(hp.hardest_pos_index);
  auto gn = grad.row(hp.hardest_neg_index);
  for (std::size_t k = 0; k < d; ++k) {
    const double cp = 2.0 * scale * d_pos * (va[k] - vp[k]);
    const double cn = 2.0 * scale * d_neg * (va[k] - vn[k]);
    ga[k] += cp + cn;
    gp[k] -= cp;
    gn[k] -= cn;
  }
}

void check_pairs(const Tensor& vectors, const HardPairs& pairs, const char* who) {
  if (vectors.rank() != 2 || vectors.dim(0) != pairs.size()) {
    throw DimensionError(std::string(who) + ": vectors " + shape_to_string(vectors.shape()) +
                         " vs " + std::to_string(pairs.size()) + " anchors");
  }
}

std::size_t count_valid(const HardPairs& pairs) {
  std::size_t n = 0;
  for (const auto& hp : pairs) n += hp.valid ? 1 : 0;
  return n;
}

}  // namespace

LossResult hard_triplet_loss(const Tensor& vectors, const HardPairs& pairs, double eta) {
  check_pairs(vectors, pairs, "hard_triplet_loss");
  LossResult res{0.0, Tensor(vectors.shape()), count_valid(pairs), {}};
  if (res.valid_anchors == 0) {
    throw DegenerateBatchError("hard_triplet_loss: no anchor has both a positive and a negative");
  }
  res.weights.assign(pairs.size(), 0.0);
  const double inv = 1.0 / static_cast<double>(res.valid_anchors);
  for (std::size_t a = 0; a < pairs.size(); ++a) {
    const HardPair& hp = pairs[a];
    if (!hp.valid) continue;
    res.weights[a] = 1.0;
    const double hinge = eta + hp.max_pos_dist - hp.min_neg_dist;
    if (hinge <= 0.0) continue;
    res.loss += hinge * inv;
    scatter_pair_grads(vectors, a, hp, 1.0, -1.0, inv, res.grad);
  }
  return res;
}

LossResult elastic_triplet_loss(const Tensor& vectors, const HardPairs& pairs,
                                const ElasticParams& params) {
  check_pairs(vectors, pairs, "elastic_triplet_loss");
  if (!(params.eta > 0.0)) throw ConfigError("elastic loss: eta must be positive");
  LossResult res{0.0, Tensor(vectors.shape()), count_valid(pairs), {}};
  if (res.valid_anchors == 0) {
    throw DegenerateBatchError(
        "elastic_triplet_loss: no anchor has both a positive and a negative");
  }
  res.weights.assign(pairs.size(), 0.0);
  const double inv = 1.0 / static_cast<double>(res.valid_anchors);
  for (std::size_t a = 0; a < pairs.size(); ++a) {
    const HardPair& hp = pairs[a];
    if (!hp.valid) continue;
    const AnchorTerm t = elastic_term(hp, params);
    res.weights[a] = t.weight;
    if (t.value == 0.0 && t.d_pos == 0.0) continue;
    res.loss += t.value * inv;
    scatter_pair_grads(vectors, a, hp, t.d_pos, t.d_neg, inv, res.grad);
  }
  return res;
}

BranchLossResult batch_elastic_loss(std::span<const Tensor> branches, std::span<const int> ids,
                                    const ElasticParams& params) {
  if (branches.empty()) throw ConfigError("batch_elastic_loss: need at least one branch");
  if (!(params.eta > 0.0)) throw ConfigError("elastic loss: eta must be positive");
  std::vector<HardPairs> mined;
  mined.reserve(branches.size());
  std::size_t units = 0;
  for (const Tensor& b : branches) {
    if (b.rank() != 2 || b.dim(0) != ids.size()) {
      throw DimensionError("batch_elastic_loss: branch " + shape_to_string(b.shape()) + " vs " +
                           std::to_string(ids.size()) + " ids");
    }
    mined.push_back(batch_hard_mine(pairwise_sq_dist(b), ids));
    units += count_valid(mined.back());
  }
  if (units == 0) {
    throw DegenerateBatchError("batch_elastic_loss: no valid (anchor, branch) unit");
  }
  BranchLossResult res;
  res.valid_units = units;
  const double inv = 1.0 / static_cast<double>(units);
  for (std::size_t i = 0; i < branches.size(); ++i) {
    Tensor grad(branches[i].shape());
    for (std::size_t a = 0; a < ids.size(); ++a) {
      const HardPair& hp = mined[i][a];
      if (!hp.valid) continue;
      const AnchorTerm t = elastic_term(hp, params);
      if (t.value == 0.0 && t.d_pos == 0.0) continue;
      res.loss += t.value * inv;
      scatter_pair_grads(branches[i], a, hp, t.d_pos, t.d_neg, inv, grad);
    }
    res.grads.push_back(std::move(grad));
  }
  return res;
}

BranchLossResult batch_elastic_loss(std::span<const DescriptorBatch> branches,
                                    const ElasticParams& params) {
  if (branches.empty()) throw ConfigError("batch_elastic_loss: need at least one branch");
  std::vector<Tensor> vectors;
  vectors.reserve(branches.size());
  for (const auto& b : branches) {
    b.validate();
    if (b.ids != branches.front().ids) {
      throw ConfigError("batch_elastic_loss: branches disagree on identity labels");
    }
    vectors.push_back(b.vectors);
  }
  return batch_elastic_loss(vectors, branches.front().ids, params);
}

}  // namespace cbdb
