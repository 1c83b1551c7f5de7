#ifndef CBDB_MODEL_HPP_
#define CBDB_MODEL_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cbdb/dropmask.hpp"
#include "cbdb/elastic_loss.hpp"
#include "cbdb/numerics.hpp"
#include "cbdb/synth.hpp"
#include "cbdb/tensor.hpp"

namespace cbdb {

enum class MetricLoss { kElastic, kTriplet };

struct LrSchedule {
  std::size_t warmup_epochs = 5;
  std::vector<std::size_t> decay_epochs = {25, 35};
  double base_lr = 1e-3;
  double decay_factor = 0.1;

  // Linear ramp base_lr*(e+1)/warmup during warm-up, then one decay_factor per
  // decay epoch already reached.
  double lr_at(std::size_t epoch) const;
};

struct CbdbConfig {
  std::size_t height = 8;
  std::size_t width = 4;
  std::size_t in_channels = 6;
  std::size_t feat_channels = 32;
  std::size_t embed_dim = 16;
  // Branch count for uniform CBDB and for the random baseline strategies.
  std::size_t m = 4;
  std::size_t num_classes = 15;
  double eta = 3.0;
  bool detach_weight = false;
  MetricLoss metric_loss = MetricLoss::kElastic;
  bool use_global_branch = false;
  bool use_resblock = true;
  DropStrategyKind drop = Cbdb{4};
  // Keep only the first `branch_limit` drop branches (0 keeps all).
  std::size_t branch_limit = 0;
  LrSchedule schedule;
  std::size_t epochs = 40;
  std::size_t batch_p = 8;
  std::size_t batch_k = 4;
  std::uint64_t seed = 0;

  void validate() const;
  // Number of masked branches, after branch_limit, excluding the global branch.
  std::size_t drop_branch_count() const;
  std::size_t total_branch_count() const {
    return drop_branch_count() + (use_global_branch ? 1 : 0);
  }
  ElasticParams elastic_params() const;
};

struct ModelParams {
  ParamTensor enc_w1, enc_b1;  // Cin -> Cfeat
  ParamTensor enc_w2, enc_b2;  // Cfeat -> Cfeat
  ParamTensor res_w, res_b;    // shared residual transform, Cfeat -> Cfeat
  ParamTensor emb_w, emb_b;    // Cfeat -> Dembed
  ParamTensor cls_w, cls_b;    // Dembed -> num_classes, shared by branches

  static ModelParams init(const CbdbConfig& config, Rng& rng);

  std::vector<std::pair<std::string, ParamTensor*>> named();
  std::vector<std::pair<std::string, const ParamTensor*>> named() const;
  void zero_grad();
};

struct BranchCache {
  Tensor mask;        // [N*H*W, Cfeat] multiplier
  Tensor masked;      // encoder output times mask
  Tensor res_pre;     // masked * res_w + res_b
  Tensor pooled;      // [N, Cfeat]
};

struct ForwardOutput {
  std::vector<Tensor> branch_descriptors;  // [N, Dembed] each
  std::vector<Tensor> branch_logits;       // [N, num_classes] each
  double elastic_loss = 0.0;
  std::vector<double> ce_losses;           // per branch, batch mean
  double ce_loss = 0.0;                    // sum over branches
  double total_loss = 0.0;

  // caches for backward
  std::size_t batch = 0;
  Tensor cells;      // [N*H*W, Cin]
  Tensor enc_pre1;   // first encoder pre-activation
  Tensor enc_hidden;
  Tensor enc_pre2;
  Tensor features;   // encoder output [N*H*W, Cfeat]
  std::vector<BranchCache> branches;
  std::vector<Tensor> descriptor_grads;  // d total / d descriptor per branch
  std::vector<Tensor> logit_grads;
};

/// Per-cell two-layer encoder. [N,H,W,Cin] -> [N,H,W,Cfeat].
Tensor encode(const Tensor& images, const ModelParams& params);

/// One multiplier tensor [N,H,W,Cfeat] per masked branch (plus an all-ones one
/// for the global branch). Deterministic strategies never touch `rng`.
std::vector<Tensor> make_branch_masks(const CbdbConfig& config, std::size_t batch, Rng& rng);

/// Training forward pass: total = metric loss over all branch descriptors +
/// sum of per-branch mean cross entropy. `labels` index the classifier.
ForwardOutput forward_train(const Tensor& images, std::span<const int> labels,
                            const ModelParams& params, const CbdbConfig& config,
                            std::span<const Tensor> masks);

/// Accumulates d total / d params into the params' grad buffers.
void backward(const ForwardOutput& out, ModelParams& params, const CbdbConfig& config);

/// Mask-free retrieval descriptors f(x): encoder, ResBlock, average pool, embed.
Tensor infer(const Tensor& images, const ModelParams& params, const CbdbConfig& config);

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double elastic_loss = 0.0;
  double ce_loss = 0.0;
  double total_loss = 0.0;
};

struct TrainedModel {
  CbdbConfig config;
  ModelParams params;
  std::vector<EpochLog> log;
};

/// PK-sampled Adam training. Sample ids are mapped to classifier labels by
/// sorted order. Fully determined by config.seed.
TrainedModel train(std::span<const Sample> dataset, const CbdbConfig& config);

}  // namespace cbdb

#endif  // CBDB_MODEL_HPP_
