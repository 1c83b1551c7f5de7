#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cbdb/errors.hpp"
#include "cbdb/numerics.hpp"

using namespace cbdb;

namespace {

Tensor random_tensor(Shape s, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Tensor t(std::move(s));
  for (double& v : t.data()) v = nd(rng);
  return t;
}

}  // namespace

TEST(Tensor, ShapeAndAccess) {
  Tensor t = Tensor::from_rows({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(t.dim(0), 2u);
  EXPECT_EQ(t.dim(1), 3u);
  EXPECT_DOUBLE_EQ(t.at(1, 2), 6.0);
  EXPECT_EQ(shape_numel({2, 3, 4}), 24u);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST(Linear, HandMultiply) {
  const Tensor x = Tensor::from_rows({{1, 1}});
  const ParamTensor w(Tensor::from_rows({{1, 2}, {3, 4}}));
  const ParamTensor b(Tensor({2}, 0.0));
  const Tensor y = linear_forward(x, w, b);
  EXPECT_EQ(y, Tensor::from_rows({{4, 6}}));
}

TEST(Linear, ScalarChainRule) {
  const Tensor x = Tensor::from_rows({{2}});
  const ParamTensor w(Tensor::from_rows({{3}}));
  const LinearGrads g = linear_backward(x, w, Tensor::from_rows({{1}}));
  EXPECT_DOUBLE_EQ(g.grad_x.at(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(g.grad_w.at(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(g.grad_b[0], 1.0);
}

TEST(Linear, ShapeMismatchThrows) {
  const Tensor x({2, 3});
  const ParamTensor w(Tensor({4, 2}));
  const ParamTensor b(Tensor({2}));
  EXPECT_THROW(linear_forward(x, w, b), DimensionError);
}

TEST(Relu, ForwardAndSubgradient) {
  const Tensor x = Tensor::from_rows({{-1, 0, 2}});
  EXPECT_EQ(relu_forward(x), Tensor::from_rows({{0, 0, 2}}));
  EXPECT_EQ(relu_backward(x, Tensor::from_rows({{5, 5, 5}})), Tensor::from_rows({{0, 0, 5}}));
}

TEST(SoftmaxCrossEntropy, UniformLogits) {
  const Tensor z({2, 4}, 0.0);
  const std::vector<int> labels = {0, 3};
  const auto r = softmax_cross_entropy(z, labels);
  EXPECT_NEAR(r.loss, std::log(4.0), 1e-15);
  EXPECT_NEAR(r.grad_logits.at(0, 0), (0.25 - 1.0) / 2.0, 1e-15);
  EXPECT_NEAR(r.grad_logits.at(0, 1), 0.25 / 2.0, 1e-15);
}

TEST(SoftmaxCrossEntropy, StableForLargeLogits) {
  const Tensor z = Tensor::from_rows({{1000.0, 0.0}});
  const std::vector<int> labels = {1};
  const auto r = softmax_cross_entropy(z, labels);
  EXPECT_NEAR(r.loss, 1000.0, 1e-9);
  EXPECT_TRUE(r.grad_logits.all_finite());
}

TEST(SoftmaxCrossEntropy, BadLabelThrows) {
  const Tensor z({1, 3}, 0.0);
  const std::vector<int> labels = {3};
  EXPECT_THROW(softmax_cross_entropy(z, labels), ConfigError);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamTensor p(Tensor({1}, 1.0));
  p.grad[0] = 1.0;
  adam_step(p, 0.1);
  EXPECT_NEAR(p.value[0], 0.9, 1e-6);
  EXPECT_EQ(p.step_count, 1u);
  EXPECT_DOUBLE_EQ(p.grad[0], 0.0);
}

TEST(Adam, NonFiniteGradientThrows) {
  ParamTensor p(Tensor({2}, 1.0));
  p.grad[1] = std::nan("");
  EXPECT_THROW(adam_step(p, 0.1), NumericError);
}

TEST(FiniteDiff, QuadraticIsExactUpToRounding) {
  const Tensor x = Tensor::from_values({1.0, -2.0, 0.5});
  const Tensor g = finite_diff_grad(
      [](const Tensor& t) {
        double s = 0.0;
        for (double v : t.data()) s += v * v;
        return s;
      },
      x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(g[i], 2.0 * x[i], 1e-8);
}

TEST(RelativeError, NormWise) {
  const std::vector<double> a = {3.0, 4.0}, b = {3.0, 4.0}, c = {0.0, 0.0};
  EXPECT_DOUBLE_EQ(relative_error(a, b), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(a, c), 1.0);
  EXPECT_DOUBLE_EQ(relative_error(c, c), 0.0);
}

TEST(Linear, GradientsMatchFiniteDifferences) {
  Rng rng(3);
  for (int t = 0; t < 5; ++t) {
    const Tensor x = random_tensor({3, 4}, rng);
    const ParamTensor w(random_tensor({4, 2}, rng));
    const ParamTensor b(random_tensor({2}, rng));
    const Tensor up = random_tensor({3, 2}, rng);
    auto dot = [&](const Tensor& y) {
      double s = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * up[i];
      return s;
    };
    const LinearGrads g = linear_backward(x, w, up);
    const Tensor nx = finite_diff_grad([&](const Tensor& xp) { return dot(linear_forward(xp, w, b)); }, x);
    EXPECT_LT(relative_error(g.grad_x.data(), nx.data()), 1e-6);
  }
}
