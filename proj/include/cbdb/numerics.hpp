#ifndef CBDB_NUMERICS_HPP_
#define CBDB_NUMERICS_HPP_

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "cbdb/tensor.hpp"

namespace cbdb {

// Every random draw in the toolkit comes from one of these, seeded explicitly.
using Rng = std::mt19937_64;

/// Trainable array with its gradient accumulator and Adam moments.
struct ParamTensor {
  Tensor value;
  Tensor grad;
  Tensor adam_m;
  Tensor adam_v;
  std::uint64_t step_count = 0;

  ParamTensor() = default;
  explicit ParamTensor(Tensor init);

  const Shape& shape() const { return value.shape(); }
  void zero_grad() { grad.fill(0.0); }
};

// Glorot-uniform in [-sqrt(6/(fan_in+fan_out)), +sqrt(...)].
ParamTensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);
ParamTensor zeros_param(Shape shape);

// out[n,j] = sum_i x[n,i] * w[i,j] + b[j]
Tensor linear_forward(const Tensor& x, const ParamTensor& w, const ParamTensor& b);

struct LinearGrads {
  Tensor grad_x;
  Tensor grad_w;
  Tensor grad_b;
};

LinearGrads linear_backward(const Tensor& x, const ParamTensor& w, const Tensor& upstream);

// Adds grad_w/grad_b into the parameters' accumulators and returns grad_x.
Tensor linear_backward_accumulate(const Tensor& x, ParamTensor& w, ParamTensor& b,
                                  const Tensor& upstream);

Tensor relu_forward(const Tensor& x);
// Subgradient at exactly 0 is 0.
Tensor relu_backward(const Tensor& x, const Tensor& upstream);

struct CrossEntropyResult {
  double loss = 0.0;
  Tensor grad_logits;
};

/// Mean softmax cross entropy over rows of `logits`, max-subtracted.
/// grad_logits = (softmax - onehot) / N.
CrossEntropyResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update. Increments step_count and clears grad.
/// Throws NumericError if the gradient holds NaN/Inf.
void adam_step(ParamTensor& p, double lr, const AdamOptions& opts = {});

using ScalarFn = std::function<double(const Tensor&)>;

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double h = 1e-5);

/// ||a - b|| / max(||a||, ||b||, floor). Norm-wise, so components that are
/// zero analytically do not blow the ratio up through FD round-off.
double relative_error(std::span<const double> analytic, std::span<const double> numeric,
                      double floor = 1e-12);

}  // namespace cbdb

#endif  // CBDB_NUMERICS_HPP_
