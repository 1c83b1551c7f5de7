#include <gtest/gtest.h>

#include <random>

#include "cbdb/errors.hpp"
#include "cbdb/model.hpp"
#include "cbdb/synth.hpp"

using namespace cbdb;

namespace {

CbdbConfig tiny() {
  CbdbConfig c;
  c.height = 4;
  c.width = 2;
  c.in_channels = 3;
  c.feat_channels = 5;
  c.embed_dim = 4;
  c.m = 2;
  c.drop = Cbdb{2};
  c.num_classes = 2;
  c.batch_p = 2;
  c.batch_k = 2;
  return c;
}

Tensor random_images(const CbdbConfig& c, std::size_t n, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Tensor t({n, c.height, c.width, c.in_channels});
  for (double& v : t.data()) v = nd(rng);
  return t;
}

ModelParams biased_params(const CbdbConfig& c, Rng& rng) {
  ModelParams p = ModelParams::init(c, rng);
  std::normal_distribution<double> nd(0.0, 0.1);
  for (auto& [name, t] : p.named()) {
    if (t->value.rank() == 1) {
      for (double& v : t->value.data()) v = nd(rng);
    }
  }
  return p;
}

const std::vector<int> kLabels = {0, 0, 1, 1};

}  // namespace

TEST(LrSchedule, WarmupAndDecay) {
  LrSchedule s;
  EXPECT_DOUBLE_EQ(s.lr_at(0), 1e-3 / 5.0);
  EXPECT_DOUBLE_EQ(s.lr_at(4), 1e-3);
  EXPECT_DOUBLE_EQ(s.lr_at(10), 1e-3);
  EXPECT_DOUBLE_EQ(s.lr_at(25), 1e-3 * 0.1);
  EXPECT_NEAR(s.lr_at(35), 1e-3 * 0.01, 1e-18);
}

TEST(CbdbConfigTest, Validation) {
  CbdbConfig c;
  EXPECT_NO_THROW(c.validate());
  c.m = 3;
  c.drop = Cbdb{3};
  EXPECT_THROW(c.validate(), ConfigError);
  c = CbdbConfig{};
  c.num_classes = 1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Encode, ZeroParamsGiveZeroMap) {
  const CbdbConfig c = tiny();
  Rng rng(1);
  ModelParams p = ModelParams::init(c, rng);
  for (auto& [name, t] : p.named()) t->value.fill(0.0);
  const Tensor f = encode(random_images(c, 3, rng), p);
  EXPECT_EQ(f.shape(), (Shape{3, 4, 2, 5}));
  for (double v : f.data()) EXPECT_EQ(v, 0.0);
}

TEST(Encode, ScalarNetwork) {
  CbdbConfig c = tiny();
  c.height = c.width = c.in_channels = c.feat_channels = 1;
  Rng rng(1);
  ModelParams p = ModelParams::init(c, rng);
  p.enc_w1.value[0] = 2.0;
  p.enc_b1.value[0] = -1.0;
  p.enc_w2.value[0] = 3.0;
  p.enc_b2.value[0] = 0.5;
  const Tensor f = encode(Tensor({1, 1, 1, 1}, 1.5), p);
  EXPECT_DOUBLE_EQ(f[0], 3.0 * (2.0 * 1.5 - 1.0) + 0.5);
}

TEST(Encode, ShapeMismatchThrows) {
  const CbdbConfig c = tiny();
  Rng rng(1);
  const ModelParams p = ModelParams::init(c, rng);
  EXPECT_THROW(encode(Tensor({1, 4, 2, 7}), p), DimensionError);
}

TEST(ForwardTrain, DescriptorCountTracksBranches) {
  CbdbConfig c = tiny();
  Rng rng(2);
  const ModelParams p = biased_params(c, rng);
  const Tensor x = random_images(c, 4, rng);
  EXPECT_EQ(forward_train(x, kLabels, p, c, make_branch_masks(c, 4, rng))
                .branch_descriptors.size(),
            2u);
  c.use_global_branch = true;
  const ForwardOutput out = forward_train(x, kLabels, p, c, make_branch_masks(c, 4, rng));
  EXPECT_EQ(out.branch_descriptors.size(), 3u);
  EXPECT_EQ(out.ce_losses.size(), 3u);
}

TEST(ForwardTrain, LossIsElasticPlusSummedCrossEntropy) {
  const CbdbConfig c = tiny();
  Rng rng(3);
  const ModelParams p = biased_params(c, rng);
  const ForwardOutput out =
      forward_train(random_images(c, 4, rng), kLabels, p, c, make_branch_masks(c, 4, rng));
  const double elastic =
      batch_elastic_loss(out.branch_descriptors, kLabels, c.elastic_params()).loss;
  double ce = 0.0;
  for (const Tensor& logits : out.branch_logits) ce += softmax_cross_entropy(logits, kLabels).loss;
  EXPECT_EQ(out.elastic_loss, elastic);
  EXPECT_EQ(out.ce_loss, ce);
  EXPECT_EQ(out.total_loss, elastic + ce);
}

TEST(ForwardTrain, ResBlockIsShared) {
  const CbdbConfig c = tiny();
  Rng rng(4);
  ModelParams p = biased_params(c, rng);
  const Tensor x = random_images(c, 4, rng);
  const auto masks = make_branch_masks(c, 4, rng);
  const ForwardOutput a = forward_train(x, kLabels, p, c, masks);
  for (double& v : p.res_w.value.data()) v += 0.05;
  for (double& v : p.res_b.value.data()) v += 0.05;
  const ForwardOutput b = forward_train(x, kLabels, p, c, masks);
  for (std::size_t i = 0; i < a.branch_descriptors.size(); ++i) {
    EXPECT_NE(a.branch_descriptors[i], b.branch_descriptors[i]) << "branch " << i;
  }
}

TEST(ForwardTrain, DroppedRowsDoNotReachTheirBranch) {
  CbdbConfig c = tiny();
  c.m = 4;
  c.drop = Cbdb{4};
  Rng rng(5);
  const ModelParams p = biased_params(c, rng);
  const Tensor x = random_images(c, 4, rng);
  const auto masks = make_branch_masks(c, 4, rng);
  for (std::size_t branch = 0; branch < 4; ++branch) {
    Tensor y = x;
    // branch i drops row i (one row per band at H=4, m=4)
    for (std::size_t n = 0; n < 4; ++n) {
      for (std::size_t w = 0; w < c.width; ++w) {
        for (std::size_t k = 0; k < c.in_channels; ++k) {
          y[((n * c.height + branch) * c.width + w) * c.in_channels + k] = 0.0;
        }
      }
    }
    const ForwardOutput a = forward_train(x, kLabels, p, c, masks);
    const ForwardOutput b = forward_train(y, kLabels, p, c, masks);
    EXPECT_EQ(a.branch_descriptors[branch], b.branch_descriptors[branch]);
    const std::size_t other = (branch + 1) % 4;
    EXPECT_NE(a.branch_descriptors[other], b.branch_descriptors[other]);
  }
}

TEST(ForwardTrain, SwappingSamplesPermutesDescriptors) {
  const CbdbConfig c = tiny();
  Rng rng(6);
  const ModelParams p = biased_params(c, rng);
  const Tensor x = random_images(c, 4, rng);
  Tensor y = x;
  const std::size_t per = c.height * c.width * c.in_channels;
  std::swap_ranges(y.data().begin(), y.data().begin() + static_cast<std::ptrdiff_t>(per),
                   y.data().begin() + static_cast<std::ptrdiff_t>(2 * per));
  const std::vector<int> swapped = {1, 0, 0, 1};
  const auto masks = make_branch_masks(c, 4, rng);
  const ForwardOutput a = forward_train(x, kLabels, p, c, masks);
  const ForwardOutput b = forward_train(y, swapped, p, c, masks);
  for (std::size_t br = 0; br < a.branch_descriptors.size(); ++br) {
    for (std::size_t d = 0; d < c.embed_dim; ++d) {
      EXPECT_EQ(a.branch_descriptors[br].at(0, d), b.branch_descriptors[br].at(2, d));
      EXPECT_EQ(a.branch_descriptors[br].at(2, d), b.branch_descriptors[br].at(0, d));
      EXPECT_EQ(a.branch_descriptors[br].at(1, d), b.branch_descriptors[br].at(1, d));
    }
  }
}

TEST(ForwardTrain, SingleIdentityBatchIsDegenerate) {
  const CbdbConfig c = tiny();
  Rng rng(7);
  const ModelParams p = biased_params(c, rng);
  const std::vector<int> same = {1, 1, 1, 1};
  EXPECT_THROW(forward_train(random_images(c, 4, rng), same, p, c, make_branch_masks(c, 4, rng)),
               DegenerateBatchError);
}

TEST(Infer, MatchesUnmaskedBranch) {
  CbdbConfig c = tiny();
  c.drop = NoDrop{};
  c.m = 1;
  Rng rng(8);
  const ModelParams p = biased_params(c, rng);
  const Tensor x = random_images(c, 4, rng);
  const ForwardOutput out = forward_train(x, kLabels, p, c, make_branch_masks(c, 4, rng));
  const Tensor d = infer(x, p, c);
  EXPECT_EQ(d.shape(), (Shape{4, c.embed_dim}));
  EXPECT_EQ(d, out.branch_descriptors[0]);
  EXPECT_EQ(infer(x, p, c), d);
}

TEST(Backward, MatchesFiniteDifferences) {
  for (bool global : {false, true}) {
    CbdbConfig c = tiny();
    c.use_global_branch = global;
    Rng rng(9);
    ModelParams p = biased_params(c, rng);
    const Tensor x = random_images(c, 4, rng);
    const auto masks = make_branch_masks(c, 4, rng);
    const ForwardOutput out = forward_train(x, kLabels, p, c, masks);
    p.zero_grad();
    backward(out, p, c);
    for (auto& [name, t] : p.named()) {
      const Tensor saved = t->value;
      const Tensor nu = finite_diff_grad(
          [&](const Tensor& v) {
            t->value = v;
            const double l = forward_train(x, kLabels, p, c, masks).total_loss;
            t->value = saved;
            return l;
          },
          saved);
      EXPECT_LT(relative_error(t->grad.data(), nu.data()), 1e-5) << name;
    }
  }
}

TEST(FullScale, SixDescriptorsOf512) {
  CbdbConfig c;
  c.height = 24;
  c.width = 8;
  c.in_channels = 3;
  c.feat_channels = 2048;
  c.embed_dim = 512;
  c.m = 6;
  c.drop = Cbdb{6};
  c.num_classes = 2;
  c.use_resblock = false;  // keeps the 2048x2048 work to the encoder
  Rng rng(10);
  const ModelParams p = ModelParams::init(c, rng);
  const Tensor x = random_images(c, 4, rng);
  EXPECT_EQ(encode(x, p).shape(), (Shape{4, 24, 8, 2048}));
  const ForwardOutput out = forward_train(x, kLabels, p, c, make_branch_masks(c, 4, rng));
  ASSERT_EQ(out.branch_descriptors.size(), 6u);
  for (const Tensor& d : out.branch_descriptors) EXPECT_EQ(d.shape(), (Shape{4, 512}));
}

TEST(Train, ZeroEpochsReturnsInitialParams) {
  SynthConfig sc;
  sc.num_ids = 4;
  sc.num_train_ids = 4;
  sc.samples_per_id = 4;
  const SynthDataset data = generate(sc);
  CbdbConfig c;
  c.num_classes = 4;
  c.batch_p = 2;
  c.epochs = 0;
  c.seed = 12;
  const TrainedModel tm = train(data.train, c);
  Rng rng(12);
  const ModelParams init = ModelParams::init(c, rng);
  for (std::size_t i = 0; i < init.named().size(); ++i) {
    EXPECT_EQ(tm.params.named()[i].second->value, init.named()[i].second->value);
  }
  EXPECT_TRUE(tm.log.empty());
}

TEST(Train, DeterministicAndLossDecreases) {
  SynthConfig sc;
  sc.num_ids = 6;
  sc.num_train_ids = 6;
  sc.samples_per_id = 8;
  const SynthDataset data = generate(sc);
  CbdbConfig c;
  c.num_classes = 6;
  c.batch_p = 3;
  c.epochs = 15;
  c.schedule.decay_epochs = {10};
  c.seed = 3;
  const TrainedModel a = train(data.train, c);
  const TrainedModel b = train(data.train, c);
  for (std::size_t i = 0; i < a.params.named().size(); ++i) {
    EXPECT_EQ(a.params.named()[i].second->value, b.params.named()[i].second->value);
  }
  ASSERT_EQ(a.log.size(), 15u);
  EXPECT_LT(a.log.back().total_loss, a.log.front().total_loss);
}

TEST(Train, TooManyIdentitiesThrows) {
  SynthConfig sc;
  sc.num_ids = 6;
  sc.num_train_ids = 6;
  sc.samples_per_id = 4;
  CbdbConfig c;
  c.num_classes = 3;
  EXPECT_THROW(train(generate(sc).train, c), ConfigError);
  EXPECT_THROW(train(std::vector<Sample>{}, c), ConfigError);
}
