#include "cbdb/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cbdb/errors.hpp"

namespace cbdb {

Tensor cross_sq_dist(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw DimensionError("cross_sq_dist: " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
  const std::size_t na = a.dim(0), nb = b.dim(0), d = a.dim(1);
  Tensor dist({na, nb});
  for (std::size_t i = 0; i < na; ++i) {
    const auto ai = a.row(i);
    for (std::size_t j = 0; j < nb; ++j) {
      const auto bj = b.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = ai[k] - bj[k];
        acc += diff * diff;
      }
      dist.at(i, j) = acc;
    }
  }
  return dist;
}

EvalMetrics evaluate_distances(const Tensor& dist, std::span<const int> query_ids,
                               std::span<const int> query_cams, std::span<const int> gallery_ids,
                               std::span<const int> gallery_cams, std::span<const int> ks) {
  const std::size_t nq = query_ids.size(), ng = gallery_ids.size();
  if (ng == 0) throw DimensionError("evaluate: empty gallery");
  if (dist.rank() != 2 || dist.dim(0) != nq || dist.dim(1) != ng || query_cams.size() != nq ||
      gallery_cams.size() != ng) {
    throw DimensionError("evaluate: distance " + shape_to_string(dist.shape()) + " vs " +
                         std::to_string(nq) + " queries / " + std::to_string(ng) + " gallery");
  }
  for (int k : ks) {
    if (k < 1) throw ConfigError("evaluate: rank k must be >= 1");
  }

  std::vector<std::size_t> hits_at_k(ks.size(), 0);
  double ap_sum = 0.0;
  std::size_t valid = 0;
  std::vector<std::size_t> order(ng);
  for (std::size_t q = 0; q < nq; ++q) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto row = dist.row(q);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return row[x] < row[y]; });

    std::size_t position = 0;  // 1-based rank among kept gallery items
    std::size_t hits = 0;
    std::size_t first_hit = 0;
    double precision_sum = 0.0;
    for (std::size_t g : order) {
      const bool same_id = gallery_ids[g] == query_ids[q];
      if (same_id && gallery_cams[g] == query_cams[q]) continue;  // junk
      ++position;
      if (!same_id) continue;
      ++hits;
      if (hits == 1) first_hit = position;
      precision_sum += static_cast<double>(hits) / static_cast<double>(position);
    }
    if (hits == 0) continue;
    ++valid;
    ap_sum += precision_sum / static_cast<double>(hits);
    for (std::size_t i = 0; i < ks.size(); ++i) {
      if (first_hit <= static_cast<std::size_t>(ks[i])) ++hits_at_k[i];
    }
  }

  EvalMetrics m;
  m.num_valid_queries = valid;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    m.rank_k[ks[i]] =
        valid ? static_cast<double>(hits_at_k[i]) / static_cast<double>(valid) : 0.0;
  }
  m.mean_ap = valid ? ap_sum / static_cast<double>(valid) : 0.0;
  return m;
}

EvalMetrics evaluate(const DescriptorBatch& query, const DescriptorBatch& gallery,
                     std::span<const int> ks) {
  query.validate();
  gallery.validate();
  if (query.cameras.size() != query.size() || gallery.cameras.size() != gallery.size()) {
    throw DimensionError("evaluate: query and gallery need camera labels");
  }
  if (gallery.size() == 0) throw DimensionError("evaluate: empty gallery");
  return evaluate_distances(cross_sq_dist(query.vectors, gallery.vectors), query.ids,
                            query.cameras, gallery.ids, gallery.cameras, ks);
}

RerankParams RerankParams::clamped(std::size_t total) const {
  RerankParams p = *this;
  const int max_k1 = std::max(1, static_cast<int>(total) - 1);
  p.k1 = std::clamp(p.k1, 1, max_k1);
  p.k2 = std::clamp(p.k2, 1, std::max(1, static_cast<int>(total)));
  return p;
}

Tensor k_reciprocal_rerank(const Tensor& q_g, const Tensor& q_q, const Tensor& g_g,
                           const RerankParams& params) {
  if (q_g.rank() != 2 || q_q.rank() != 2 || g_g.rank() != 2) {
    throw DimensionError("k_reciprocal_rerank: distance matrices must be 2-d");
  }
  const std::size_t nq = q_g.dim(0), ng = q_g.dim(1);
  if (q_q.dim(0) != nq || q_q.dim(1) != nq || g_g.dim(0) != ng || g_g.dim(1) != ng) {
    throw DimensionError("k_reciprocal_rerank: q_g " + shape_to_string(q_g.shape()) + ", q_q " +
                         shape_to_string(q_q.shape()) + ", g_g " + shape_to_string(g_g.shape()));
  }
  const std::size_t all = nq + ng;
  if (params.k1 < 1 || static_cast<std::size_t>(params.k1) >= all || params.k2 < 1 ||
      static_cast<std::size_t>(params.k2) > all) {
    throw ConfigError("k_reciprocal_rerank: need 1 <= k1 < " + std::to_string(all) +
                      " and 1 <= k2 <= " + std::to_string(all));
  }
  if (!(params.lambda >= 0.0 && params.lambda <= 1.0)) {
    throw ConfigError("k_reciprocal_rerank: lambda outside [0,1]");
  }
  const auto k1 = static_cast<std::size_t>(params.k1);
  const auto k2 = static_cast<std::size_t>(params.k2);
  const auto half_k1 = static_cast<std::size_t>(std::nearbyint(static_cast<double>(k1) / 2.0));

  // Joint (query + gallery) distance matrix, each row scaled by its maximum.
  std::vector<double> dist(all * all);
  auto joint = [&](std::size_t i, std::size_t j) -> double {
    if (i < nq) return j < nq ? q_q.at(i, j) : q_g.at(i, j - nq);
    return j < nq ? q_g.at(j, i - nq) : g_g.at(i - nq, j - nq);
  };
  for (std::size_t i = 0; i < all; ++i) {
    double mx = 0.0;
    for (std::size_t j = 0; j < all; ++j) mx = std::max(mx, joint(i, j));
    const double scale = mx > 0.0 ? 1.0 / mx : 1.0;
    for (std::size_t j = 0; j < all; ++j) dist[i * all + j] = joint(i, j) * scale;
  }

  std::vector<std::vector<std::size_t>> rank(all, std::vector<std::size_t>(all));
  for (std::size_t i = 0; i < all; ++i) {
    auto& r = rank[i];
    std::iota(r.begin(), r.end(), std::size_t{0});
    const double* row = &dist[i * all];
    std::stable_sort(r.begin(), r.end(),
                     [row](std::size_t x, std::size_t y) { return row[x] < row[y]; });
  }

  // Forward neighbours within the first k+1 of rank[i] that also list i there.
  auto reciprocal = [&](std::size_t i, std::size_t k) {
    std::vector<std::size_t> out;
    for (std::size_t f = 0; f <= k; ++f) {
      const std::size_t cand = rank[i][f];
      const auto& back = rank[cand];
      if (std::find(back.begin(), back.begin() + static_cast<std::ptrdiff_t>(k + 1), i) !=
          back.begin() + static_cast<std::ptrdiff_t>(k + 1)) {
        out.push_back(cand);
      }
    }
    return out;
  };

  std::vector<double> v(all * all, 0.0);
  for (std::size_t i = 0; i < all; ++i) {
    const std::vector<std::size_t> base = reciprocal(i, k1);
    std::vector<std::size_t> expanded = base;
    for (std::size_t cand : base) {
      const std::vector<std::size_t> cand_set = reciprocal(cand, half_k1);
      std::size_t common = 0;
      for (std::size_t c : cand_set) {
        if (std::find(base.begin(), base.end(), c) != base.end()) ++common;
      }
      if (static_cast<double>(common) > 2.0 / 3.0 * static_cast<double>(cand_set.size())) {
        expanded.insert(expanded.end(), cand_set.begin(), cand_set.end());
      }
    }
    std::sort(expanded.begin(), expanded.end());
    expanded.erase(std::unique(expanded.begin(), expanded.end()), expanded.end());
    double total = 0.0;
    for (std::size_t j : expanded) total += std::exp(-dist[i * all + j]);
    for (std::size_t j : expanded) v[i * all + j] = std::exp(-dist[i * all + j]) / total;
  }

  if (k2 != 1) {
    std::vector<double> vqe(all * all, 0.0);
    for (std::size_t i = 0; i < all; ++i) {
      for (std::size_t t = 0; t < k2; ++t) {
        const double* src = &v[rank[i][t] * all];
        for (std::size_t j = 0; j < all; ++j) vqe[i * all + j] += src[j];
      }
      for (std::size_t j = 0; j < all; ++j) vqe[i * all + j] /= static_cast<double>(k2);
    }
    v.swap(vqe);
  }

  Tensor out({nq, ng});
  std::vector<double> overlap(all);
  for (std::size_t q = 0; q < nq; ++q) {
    std::fill(overlap.begin(), overlap.end(), 0.0);
    for (std::size_t j = 0; j < all; ++j) {
      const double vq = v[q * all + j];
      if (vq == 0.0) continue;
      for (std::size_t g = 0; g < all; ++g) {
        const double vg = v[g * all + j];
        if (vg != 0.0) overlap[g] += std::min(vq, vg);
      }
    }
    for (std::size_t g = 0; g < ng; ++g) {
      const double m = overlap[nq + g];
      const double jaccard = 1.0 - m / (2.0 - m);
      out.at(q, g) = jaccard * (1.0 - params.lambda) + q_g.at(q, g) * params.lambda;
    }
  }
  return out;
}

}  // namespace cbdb
