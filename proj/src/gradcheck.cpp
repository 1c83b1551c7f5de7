#include "cbdb/gradcheck.hpp"

#include <algorithm>
#include <random>

#include "cbdb/elastic_loss.hpp"
#include "cbdb/model.hpp"
#include "cbdb/numerics.hpp"

namespace cbdb {

namespace {

constexpr double kLossTolerance = 1e-6;
constexpr double kEndToEndTolerance = 1e-5;

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

std::size_t random_dim(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// P identities x K samples, labels in order.
std::vector<int> pk_labels(std::size_t p, std::size_t k) {
  std::vector<int> ids;
  for (std::size_t i = 0; i < p; ++i) ids.insert(ids.end(), k, static_cast<int>(i));
  return ids;
}

GradcheckResult finish(std::string name, std::size_t trials, double worst, double tol) {
  return {std::move(name), trials, worst, tol, worst < tol};
}

// Frozen-weight elastic objective written with explicit loops: the mining and
// the hinge are recomputed from scratch at every probe point.
double frozen_weight_objective(const Tensor& x, std::span<const int> ids,
                               const std::vector<double>& weights, double eta) {
  const std::size_t n = x.dim(0), d = x.dim(1);
  auto sq = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += (x.at(i, k) - x.at(j, k)) * (x.at(i, k) - x.at(j, k));
    return s;
  };
  double total = 0.0;
  std::size_t valid = 0;
  for (std::size_t a = 0; a < n; ++a) {
    double max_pos = -1.0, min_neg = -1.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a) continue;
      const double dist = sq(a, j);
      if (ids[j] == ids[a]) {
        max_pos = std::max(max_pos, dist);
      } else if (min_neg < 0.0 || dist < min_neg) {
        min_neg = dist;
      }
    }
    if (max_pos < 0.0 || min_neg < 0.0) continue;
    ++valid;
    total += weights[a] * std::max(0.0, eta + max_pos - min_neg);
  }
  return total / static_cast<double>(valid);
}

}  // namespace

GradcheckResult check_linear(std::size_t trials, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t n = random_dim(rng, 1, 8), din = random_dim(rng, 1, 8),
                      dout = random_dim(rng, 1, 8);
    const Tensor x = random_tensor({n, din}, rng);
    ParamTensor w(random_tensor({din, dout}, rng));
    ParamTensor b(random_tensor({dout}, rng));
    const Tensor g = random_tensor({n, dout}, rng);
    const LinearGrads an = linear_backward(x, w, g);

    const Tensor nx = finite_diff_grad(
        [&](const Tensor& xp) { return dot(linear_forward(xp, w, b), g); }, x);
    const Tensor nw = finite_diff_grad(
        [&](const Tensor& wp) { return dot(linear_forward(x, ParamTensor(wp), b), g); }, w.value);
    const Tensor nb = finite_diff_grad(
        [&](const Tensor& bp) { return dot(linear_forward(x, w, ParamTensor(bp)), g); }, b.value);
    worst = std::max({worst, relative_error(an.grad_x.data(), nx.data()),
                      relative_error(an.grad_w.data(), nw.data()),
                      relative_error(an.grad_b.data(), nb.data())});
  }
  return finish("linear", trials, worst, kLossTolerance);
}

GradcheckResult check_relu(std::size_t trials, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const Tensor x = random_tensor({random_dim(rng, 1, 8), random_dim(rng, 1, 8)}, rng);
    const Tensor g = random_tensor(x.shape(), rng);
    const Tensor an = relu_backward(x, g);
    const Tensor nu =
        finite_diff_grad([&](const Tensor& xp) { return dot(relu_forward(xp), g); }, x);
    worst = std::max(worst, relative_error(an.data(), nu.data()));
  }
  return finish("relu", trials, worst, kLossTolerance);
}

GradcheckResult check_softmax_ce(std::size_t trials, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t n = random_dim(rng, 1, 8), c = random_dim(rng, 2, 8);
    const Tensor logits = random_tensor({n, c}, rng, 2.0);
    std::vector<int> labels(n);
    for (int& l : labels) l = static_cast<int>(random_dim(rng, 0, c - 1));
    const auto an = softmax_cross_entropy(logits, labels);
    const Tensor nu = finite_diff_grad(
        [&](const Tensor& z) { return softmax_cross_entropy(z, labels).loss; }, logits);
    worst = std::max(worst, relative_error(an.grad_logits.data(), nu.data()));
  }
  return finish("softmax_cross_entropy", trials, worst, kLossTolerance);
}

GradcheckResult check_hard_triplet(std::size_t trials, std::uint64_t seed) {
  Rng rng(seed);
  const auto ids = pk_labels(4, 4);
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const Tensor x = random_tensor({16, 8}, rng, 0.5);
    const auto an = hard_triplet_loss(x, batch_hard_mine(pairwise_sq_dist(x), ids), 3.0);
    const Tensor nu = finite_diff_grad(
        [&](const Tensor& xp) {
          return hard_triplet_loss(xp, batch_hard_mine(pairwise_sq_dist(xp), ids), 3.0).loss;
        },
        x);
    worst = std::max(worst, relative_error(an.grad.data(), nu.data()));
  }
  return finish("hard_triplet", trials, worst, kLossTolerance);
}

GradcheckResult check_elastic(std::size_t trials, std::uint64_t seed, bool detach_weight) {
  Rng rng(seed);
  const auto ids = pk_labels(4, 4);
  ElasticParams params;
  params.detach_weight = detach_weight;
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const Tensor x = random_tensor({16, 8}, rng, 0.5);
    const auto an = elastic_triplet_loss(x, batch_hard_mine(pairwise_sq_dist(x), ids), params);
    Tensor nu;
    if (detach_weight) {
      nu = finite_diff_grad(
          [&](const Tensor& xp) {
            return frozen_weight_objective(xp, ids, an.weights, params.eta);
          },
          x);
    } else {
      nu = finite_diff_grad(
          [&](const Tensor& xp) {
            return elastic_triplet_loss(xp, batch_hard_mine(pairwise_sq_dist(xp), ids), params)
                .loss;
          },
          x);
    }
    worst = std::max(worst, relative_error(an.grad.data(), nu.data()));
  }
  return finish(detach_weight ? "elastic_detached" : "elastic", trials, worst, kLossTolerance);
}

GradcheckResult check_batch_elastic(std::size_t trials, std::uint64_t seed) {
  Rng rng(seed);
  const auto ids = pk_labels(4, 4);
  const ElasticParams params;
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    std::vector<Tensor> branches;
    for (int b = 0; b < 3; ++b) branches.push_back(random_tensor({16, 8}, rng, 0.5));
    const auto an = batch_elastic_loss(branches, ids, params);
    for (std::size_t b = 0; b < branches.size(); ++b) {
      const Tensor nu = finite_diff_grad(
          [&](const Tensor& xp) {
            std::vector<Tensor> probe = branches;
            probe[b] = xp;
            return batch_elastic_loss(probe, ids, params).loss;
          },
          branches[b]);
      worst = std::max(worst, relative_error(an.grads[b].data(), nu.data()));
    }
  }
  return finish("batch_elastic", trials, worst, kLossTolerance);
}

GradcheckResult check_end_to_end(std::size_t trials, std::uint64_t seed) {
  CbdbConfig cfg;
  cfg.height = 4;
  cfg.width = 2;
  cfg.in_channels = 3;
  cfg.feat_channels = 5;
  cfg.embed_dim = 4;
  cfg.m = 2;
  cfg.drop = Cbdb{2};
  cfg.num_classes = 2;
  cfg.batch_p = 2;
  cfg.batch_k = 2;
  const std::vector<int> labels = {0, 0, 1, 1};
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    ModelParams params = ModelParams::init(cfg, rng);
    // Non-zero biases so no ReLU sits exactly on its kink.
    for (auto& [name, p] : params.named()) {
      if (p->value.rank() == 1) p->value = random_tensor(p->shape(), rng, 0.1);
    }
    const Tensor images = random_tensor({4, cfg.height, cfg.width, cfg.in_channels}, rng);
    const auto masks = make_branch_masks(cfg, 4, rng);
    const ForwardOutput out = forward_train(images, labels, params, cfg, masks);
    params.zero_grad();
    backward(out, params, cfg);

    for (auto& [name, p] : params.named()) {
      const Tensor analytic = p->grad;
      const Tensor saved = p->value;
      const Tensor nu = finite_diff_grad(
          [&](const Tensor& v) {
            p->value = v;
            const double loss = forward_train(images, labels, params, cfg, masks).total_loss;
            p->value = saved;
            return loss;
          },
          saved);
      worst = std::max(worst, relative_error(analytic.data(), nu.data()));
    }
  }
  return finish("end_to_end", trials, worst, kEndToEndTolerance);
}

std::vector<GradcheckResult> run_all_gradchecks(std::size_t trials, std::uint64_t seed) {
  return {check_linear(trials, seed),          check_relu(trials, seed + 1),
          check_softmax_ce(trials, seed + 2),  check_hard_triplet(trials, seed + 3),
          check_elastic(trials, seed + 4, false), check_elastic(trials, seed + 5, true),
          check_batch_elastic(trials, seed + 6), check_end_to_end(trials, seed + 7)};
}

nlohmann::json to_json(const std::vector<GradcheckResult>& results) {
  nlohmann::json suites = nlohmann::json::array();
  bool all = true;
  for (const auto& r : results) {
    suites.push_back({{"name", r.name},
                      {"trials", r.trials},
                      {"max_rel_error", r.max_rel_error},
                      {"tolerance", r.tolerance},
                      {"passed", r.passed}});
    all = all && r.passed;
  }
  return {{"passed", all}, {"suites", suites}};
}

}  // namespace cbdb
