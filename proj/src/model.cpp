#include "cbdb/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "cbdb/errors.hpp"

namespace cbdb {

double LrSchedule::lr_at(std::size_t epoch) const {
  if (warmup_epochs > 0 && epoch < warmup_epochs) {
    return base_lr * static_cast<double>(epoch + 1) / static_cast<double>(warmup_epochs);
  }
  double lr = base_lr;
  for (std::size_t d : decay_epochs) {
    if (epoch >= d) lr *= decay_factor;
  }
  return lr;
}

void CbdbConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (height == 0 || width == 0 || in_channels == 0 || feat_channels == 0) {
    fail("H, W, Cin and Cfeat must be positive");
  }
  if (embed_dim == 0) fail("embed_dim must be >= 1");
  if (num_classes < 2) fail("num_classes must be >= 2");
  if (m == 0) fail("m must be >= 1");
  if (!(eta > 0.0)) fail("eta must be positive");
  validate_strategy(drop, height, width);
  if (const auto* c = std::get_if<Cbdb>(&drop); c && c->m != m) {
    fail("cbdb strategy m=" + std::to_string(c->m) + " disagrees with m=" + std::to_string(m));
  }
  const std::size_t full = implied_branch_count(drop, height);
  if (branch_limit > (full ? full : m)) fail("branch_limit exceeds the branch count");
  if (batch_p < 2 || batch_k < 2) fail("batch_p and batch_k must be >= 2");
  if (!(schedule.base_lr > 0.0) || !(schedule.decay_factor > 0.0)) {
    fail("base_lr and decay_factor must be positive");
  }
}

std::size_t CbdbConfig::drop_branch_count() const {
  std::size_t n = implied_branch_count(drop, height);
  if (n == 0) n = m;
  return branch_limit ? std::min(branch_limit, n) : n;
}

ElasticParams CbdbConfig::elastic_params() const {
  ElasticParams p;
  p.eta = eta;
  p.detach_weight = detach_weight;
  if (metric_loss == MetricLoss::kTriplet) p.fixed_weight = 1.0;
  return p;
}

ModelParams ModelParams::init(const CbdbConfig& c, Rng& rng) {
  ModelParams p;
  p.enc_w1 = glorot_uniform(c.in_channels, c.feat_channels, rng);
  p.enc_b1 = zeros_param({c.feat_channels});
  p.enc_w2 = glorot_uniform(c.feat_channels, c.feat_channels, rng);
  p.enc_b2 = zeros_param({c.feat_channels});
  p.res_w = glorot_uniform(c.feat_channels, c.feat_channels, rng);
  p.res_b = zeros_param({c.feat_channels});
  p.emb_w = glorot_uniform(c.feat_channels, c.embed_dim, rng);
  p.emb_b = zeros_param({c.embed_dim});
  p.cls_w = glorot_uniform(c.embed_dim, c.num_classes, rng);
  p.cls_b = zeros_param({c.num_classes});
  return p;
}

std::vector<std::pair<std::string, ParamTensor*>> ModelParams::named() {
  return {{"enc_w1", &enc_w1}, {"enc_b1", &enc_b1}, {"enc_w2", &enc_w2}, {"enc_b2", &enc_b2},
          {"res_w", &res_w},   {"res_b", &res_b},   {"emb_w", &emb_w},   {"emb_b", &emb_b},
          {"cls_w", &cls_w},   {"cls_b", &cls_b}};
}

std::vector<std::pair<std::string, const ParamTensor*>> ModelParams::named() const {
  return {{"enc_w1", &enc_w1}, {"enc_b1", &enc_b1}, {"enc_w2", &enc_w2}, {"enc_b2", &enc_b2},
          {"res_w", &res_w},   {"res_b", &res_b},   {"emb_w", &emb_w},   {"emb_b", &emb_b},
          {"cls_w", &cls_w},   {"cls_b", &cls_b}};
}

void ModelParams::zero_grad() {
  for (auto& [name, p] : named()) p->zero_grad();
}

namespace {

void check_images(const Tensor& images, const CbdbConfig& c) {
  const Shape want = {images.rank() == 4 ? images.dim(0) : 0, c.height, c.width, c.in_channels};
  if (images.rank() != 4 || images.shape() != want) {
    throw DimensionError("images " + shape_to_string(images.shape()) + " vs expected [N," +
                         std::to_string(c.height) + "," + std::to_string(c.width) + "," +
                         std::to_string(c.in_channels) + "]");
  }
}

struct EncoderTrace {
  Tensor cells, pre1, hidden, pre2, features;
};

EncoderTrace run_encoder(const Tensor& images, const ModelParams& params) {
  EncoderTrace t;
  const std::size_t cells = images.dim(0) * images.dim(1) * images.dim(2);
  t.cells = images.reshaped({cells, images.dim(3)});
  t.pre1 = linear_forward(t.cells, params.enc_w1, params.enc_b1);
  t.hidden = relu_forward(t.pre1);
  t.pre2 = linear_forward(t.hidden, params.enc_w2, params.enc_b2);
  t.features = relu_forward(t.pre2);
  return t;
}

// out = x + relu(x * res_w + res_b), or x when the block is disabled.
Tensor residual(const Tensor& x, const Tensor& pre, bool enabled) {
  if (!enabled) return x;
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += pre[i] > 0.0 ? pre[i] : 0.0;
  return out;
}

Tensor average_pool(const Tensor& cells, std::size_t batch) {
  const std::size_t per = cells.dim(0) / batch, c = cells.dim(1);
  Tensor pooled({batch, c});
  const double inv = 1.0 / static_cast<double>(per);
  for (std::size_t n = 0; n < batch; ++n) {
    auto out = pooled.row(n);
    for (std::size_t cell = 0; cell < per; ++cell) {
      const auto r = cells.row(n * per + cell);
      for (std::size_t k = 0; k < c; ++k) out[k] += r[k];
    }
    for (double& v : out) v *= inv;
  }
  return pooled;
}

}  // namespace

Tensor encode(const Tensor& images, const ModelParams& params) {
  if (images.rank() != 4 || images.dim(3) != params.enc_w1.value.dim(0)) {
    throw DimensionError("encode: images " + shape_to_string(images.shape()) + " vs encoder " +
                         shape_to_string(params.enc_w1.shape()));
  }
  Tensor f = run_encoder(images, params).features;
  return f.reshaped({images.dim(0), images.dim(1), images.dim(2), f.dim(1)});
}

std::vector<Tensor> make_branch_masks(const CbdbConfig& config, std::size_t batch, Rng& rng) {
  std::vector<Tensor> masks;
  const std::size_t n = config.drop_branch_count();
  for (std::size_t b = 1; b <= n; ++b) {
    masks.push_back(baseline_mask(config.drop, batch, config.height, config.width,
                                  config.feat_channels, rng, b));
  }
  if (config.use_global_branch) {
    masks.emplace_back(Shape{batch, config.height, config.width, config.feat_channels}, 1.0);
  }
  return masks;
}

ForwardOutput forward_train(const Tensor& images, std::span<const int> labels,
                            const ModelParams& params, const CbdbConfig& config,
                            std::span<const Tensor> masks) {
  check_images(images, config);
  const std::size_t batch = images.dim(0);
  if (labels.size() != batch) {
    throw DimensionError("forward_train: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(batch) + " images");
  }
  if (masks.size() != config.total_branch_count()) {
    throw DimensionError("forward_train: " + std::to_string(masks.size()) + " masks for " +
                         std::to_string(config.total_branch_count()) + " branches");
  }

  ForwardOutput out;
  out.batch = batch;
  EncoderTrace enc = run_encoder(images, params);
  const std::size_t cells = enc.features.dim(0), c = config.feat_channels;

  for (const Tensor& mask_nhwc : masks) {
    BranchCache bc;
    bc.mask = mask_nhwc.reshaped({cells, c});
    bc.masked = enc.features;
    for (std::size_t i = 0; i < bc.masked.size(); ++i) bc.masked[i] *= bc.mask[i];
    if (config.use_resblock) bc.res_pre = linear_forward(bc.masked, params.res_w, params.res_b);
    bc.pooled = average_pool(residual(bc.masked, bc.res_pre, config.use_resblock), batch);
    Tensor desc = linear_forward(bc.pooled, params.emb_w, params.emb_b);
    Tensor logits = linear_forward(desc, params.cls_w, params.cls_b);
    CrossEntropyResult ce = softmax_cross_entropy(logits, labels);
    out.ce_losses.push_back(ce.loss);
    out.ce_loss += ce.loss;
    out.logit_grads.push_back(std::move(ce.grad_logits));
    out.branch_descriptors.push_back(std::move(desc));
    out.branch_logits.push_back(std::move(logits));
    out.branches.push_back(std::move(bc));
  }

  BranchLossResult metric =
      batch_elastic_loss(out.branch_descriptors, labels, config.elastic_params());
  out.elastic_loss = metric.loss;
  out.descriptor_grads = std::move(metric.grads);
  out.total_loss = out.elastic_loss + out.ce_loss;

  out.cells = std::move(enc.cells);
  out.enc_pre1 = std::move(enc.pre1);
  out.enc_hidden = std::move(enc.hidden);
  out.enc_pre2 = std::move(enc.pre2);
  out.features = std::move(enc.features);
  return out;
}

void backward(const ForwardOutput& out, ModelParams& params, const CbdbConfig& config) {
  const std::size_t cells = out.features.dim(0), c = out.features.dim(1);
  const std::size_t per = cells / out.batch;
  const double inv = 1.0 / static_cast<double>(per);
  Tensor d_features({cells, c});

  for (std::size_t b = 0; b < out.branches.size(); ++b) {
    const BranchCache& bc = out.branches[b];
    Tensor d_desc = linear_backward_accumulate(out.branch_descriptors[b], params.cls_w,
                                               params.cls_b, out.logit_grads[b]);
    const Tensor& d_metric = out.descriptor_grads[b];
    for (std::size_t i = 0; i < d_desc.size(); ++i) d_desc[i] += d_metric[i];
    const Tensor d_pooled =
        linear_backward_accumulate(bc.pooled, params.emb_w, params.emb_b, d_desc);

    Tensor d_res({cells, c});
    for (std::size_t cell = 0; cell < cells; ++cell) {
      const auto src = d_pooled.row(cell / per);
      auto dst = d_res.row(cell);
      for (std::size_t k = 0; k < c; ++k) dst[k] = src[k] * inv;
    }
    Tensor d_masked = d_res;
    if (config.use_resblock) {
      const Tensor d_pre = relu_backward(bc.res_pre, d_res);
      const Tensor through =
          linear_backward_accumulate(bc.masked, params.res_w, params.res_b, d_pre);
      for (std::size_t i = 0; i < d_masked.size(); ++i) d_masked[i] += through[i];
    }
    for (std::size_t i = 0; i < d_features.size(); ++i) d_features[i] += d_masked[i] * bc.mask[i];
  }

  const Tensor d_pre2 = relu_backward(out.enc_pre2, d_features);
  const Tensor d_hidden =
      linear_backward_accumulate(out.enc_hidden, params.enc_w2, params.enc_b2, d_pre2);
  const Tensor d_pre1 = relu_backward(out.enc_pre1, d_hidden);
  (void)linear_backward_accumulate(out.cells, params.enc_w1, params.enc_b1, d_pre1);
}

Tensor infer(const Tensor& images, const ModelParams& params, const CbdbConfig& config) {
  check_images(images, config);
  const std::size_t batch = images.dim(0);
  EncoderTrace enc = run_encoder(images, params);
  Tensor pre;
  if (config.use_resblock) pre = linear_forward(enc.features, params.res_w, params.res_b);
  const Tensor pooled = average_pool(residual(enc.features, pre, config.use_resblock), batch);
  return linear_forward(pooled, params.emb_w, params.emb_b);
}

TrainedModel train(std::span<const Sample> dataset, const CbdbConfig& config) {
  config.validate();
  if (dataset.empty()) throw ConfigError("train: empty dataset");

  std::map<int, int> label_of;
  for (const auto& s : dataset) label_of.emplace(s.id, 0);
  if (label_of.size() > config.num_classes) {
    throw ConfigError("train: " + std::to_string(label_of.size()) + " identities but only " +
                      std::to_string(config.num_classes) + " classes");
  }
  int next = 0;
  for (auto& [id, label] : label_of) label = next++;
  std::vector<int> labels;
  labels.reserve(dataset.size());
  for (const auto& s : dataset) labels.push_back(label_of[s.id]);

  TrainedModel tm;
  tm.config = config;
  Rng init_rng(config.seed);
  tm.params = ModelParams::init(config, init_rng);
  if (config.epochs == 0) return tm;

  const Tensor all_images = stack_images(dataset);
  const std::size_t per_image = all_images.size() / dataset.size();
  Rng mask_rng(config.seed ^ 0x9E3779B97F4A7C15ULL);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = config.schedule.lr_at(epoch);
    const auto batches = pk_batches(labels, config.batch_p, config.batch_k,
                                    config.seed * 1000003ULL + epoch);
    EpochLog log{epoch, lr, 0.0, 0.0, 0.0};
    for (const auto& idx : batches) {
      Tensor images({idx.size(), config.height, config.width, config.in_channels});
      std::vector<int> batch_labels;
      batch_labels.reserve(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) {
        std::copy_n(all_images.data().begin() + static_cast<std::ptrdiff_t>(idx[i] * per_image),
                    per_image, images.data().begin() + static_cast<std::ptrdiff_t>(i * per_image));
        batch_labels.push_back(labels[idx[i]]);
      }
      const auto masks = make_branch_masks(config, idx.size(), mask_rng);
      const ForwardOutput out = forward_train(images, batch_labels, tm.params, config, masks);
      if (!std::isfinite(out.total_loss)) {
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch));
      }
      tm.params.zero_grad();
      backward(out, tm.params, config);
      for (auto& [name, p] : tm.params.named()) adam_step(*p, lr);
      log.elastic_loss += out.elastic_loss;
      log.ce_loss += out.ce_loss;
      log.total_loss += out.total_loss;
    }
    if (!batches.empty()) {
      const double inv = 1.0 / static_cast<double>(batches.size());
      log.elastic_loss *= inv;
      log.ce_loss *= inv;
      log.total_loss *= inv;
    }
    tm.log.push_back(log);
  }
  return tm;
}

}  // namespace cbdb
