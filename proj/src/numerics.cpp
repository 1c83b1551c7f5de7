#include "cbdb/numerics.hpp"

#include <algorithm>
#include <cmath>

#include "cbdb/errors.hpp"

namespace cbdb {

ParamTensor::ParamTensor(Tensor init)
    : value(std::move(init)),
      grad(value.shape()),
      adam_m(value.shape()),
      adam_v(value.shape()) {}

ParamTensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor t({fan_in, fan_out});
  for (double& v : t.data()) v = dist(rng);
  return ParamTensor(std::move(t));
}

ParamTensor zeros_param(Shape shape) { return ParamTensor(Tensor(std::move(shape))); }

namespace {

void check_linear_shapes(const Tensor& x, const ParamTensor& w, const ParamTensor* b) {
  if (x.rank() != 2 || w.value.rank() != 2 || x.dim(1) != w.value.dim(0)) {
    throw DimensionError("linear: input " + shape_to_string(x.shape()) + " vs weight " +
                         shape_to_string(w.shape()));
  }
  if (b && (b->value.rank() != 1 || b->value.dim(0) != w.value.dim(1))) {
    throw DimensionError("linear: weight " + shape_to_string(w.shape()) + " vs bias " +
                         shape_to_string(b->shape()));
  }
}

}  // namespace

Tensor linear_forward(const Tensor& x, const ParamTensor& w, const ParamTensor& b) {
  check_linear_shapes(x, w, &b);
  const std::size_t n = x.dim(0), din = x.dim(1), dout = w.value.dim(1);
  Tensor out({n, dout});
  const auto& wv = w.value;
  for (std::size_t r = 0; r < n; ++r) {
    auto orow = out.row(r);
    std::copy(b.value.data().begin(), b.value.data().end(), orow.begin());
    const auto xrow = x.row(r);
    for (std::size_t i = 0; i < din; ++i) {
      const double xi = xrow[i];
      if (xi == 0.0) continue;
      const auto wrow = wv.row(i);
      for (std::size_t j = 0; j < dout; ++j) orow[j] += xi * wrow[j];
    }
  }
  return out;
}

LinearGrads linear_backward(const Tensor& x, const ParamTensor& w, const Tensor& upstream) {
  check_linear_shapes(x, w, nullptr);
  const std::size_t n = x.dim(0), din = x.dim(1), dout = w.value.dim(1);
  if (upstream.rank() != 2 || upstream.dim(0) != n || upstream.dim(1) != dout) {
    throw DimensionError("linear_backward: upstream " + shape_to_string(upstream.shape()) +
                         " vs expected [" + std::to_string(n) + "," + std::to_string(dout) + "]");
  }
  LinearGrads g{Tensor({n, din}), Tensor({din, dout}), Tensor({dout})};
  for (std::size_t r = 0; r < n; ++r) {
    const auto xrow = x.row(r);
    const auto grow = upstream.row(r);
    auto gx = g.grad_x.row(r);
    for (std::size_t j = 0; j < dout; ++j) g.grad_b[j] += grow[j];
    for (std::size_t i = 0; i < din; ++i) {
      const auto wrow = w.value.row(i);
      auto gwrow = g.grad_w.row(i);
      double acc = 0.0;
      const double xi = xrow[i];
      for (std::size_t j = 0; j < dout; ++j) {
        acc += grow[j] * wrow[j];
        gwrow[j] += xi * grow[j];
      }
      gx[i] = acc;
    }
  }
  return g;
}

Tensor linear_backward_accumulate(const Tensor& x, ParamTensor& w, ParamTensor& b,
                                  const Tensor& upstream) {
  LinearGrads g = linear_backward(x, w, upstream);
  for (std::size_t i = 0; i < g.grad_w.size(); ++i) w.grad[i] += g.grad_w[i];
  for (std::size_t i = 0; i < g.grad_b.size(); ++i) b.grad[i] += g.grad_b[i];
  return std::move(g.grad_x);
}

Tensor relu_forward(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& x, const Tensor& upstream) {
  require_same_shape(x, upstream, "relu_backward");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? upstream[i] : 0.0;
  return out;
}

CrossEntropyResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("softmax_cross_entropy: logits " + shape_to_string(logits.shape()) +
                         " vs " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  CrossEntropyResult res{0.0, Tensor(logits.shape())};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    const int label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= c) {
      throw ConfigError("softmax_cross_entropy: label " + std::to_string(label) +
                        " outside [0," + std::to_string(c) + ")");
    }
    const auto z = logits.row(r);
    const double zmax = *std::max_element(z.begin(), z.end());
    double denom = 0.0;
    for (double v : z) denom += std::exp(v - zmax);
    const double log_denom = std::log(denom);
    res.loss += (log_denom - (z[label] - zmax)) * inv_n;
    auto g = res.grad_logits.row(r);
    for (std::size_t j = 0; j < c; ++j) {
      const double p = std::exp(z[j] - zmax - log_denom);
      g[j] = (p - (static_cast<int>(j) == label ? 1.0 : 0.0)) * inv_n;
    }
  }
  return res;
}

void adam_step(ParamTensor& p, double lr, const AdamOptions& opts) {
  if (!p.grad.all_finite()) throw NumericError("adam_step: non-finite gradient");
  p.step_count += 1;
  const double t = static_cast<double>(p.step_count);
  const double bc1 = 1.0 - std::pow(opts.beta1, t);
  const double bc2 = 1.0 - std::pow(opts.beta2, t);
  for (std::size_t i = 0; i < p.value.size(); ++i) {
    const double g = p.grad[i];
    p.adam_m[i] = opts.beta1 * p.adam_m[i] + (1.0 - opts.beta1) * g;
    p.adam_v[i] = opts.beta2 * p.adam_v[i] + (1.0 - opts.beta2) * g * g;
    const double m_hat = p.adam_m[i] / bc1;
    const double v_hat = p.adam_v[i] / bc2;
    p.value[i] -= lr * m_hat / (std::sqrt(v_hat) + opts.eps);
  }
  p.zero_grad();
}

Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double h) {
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(probe);
    probe[i] = orig - h;
    const double fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("finite_diff_grad: non-finite function value at coordinate " +
                         std::to_string(i));
    }
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

double relative_error(std::span<const double> analytic, std::span<const double> numeric,
                      double floor) {
  if (analytic.size() != numeric.size()) {
    throw DimensionError("relative_error: lengths " + std::to_string(analytic.size()) + " vs " +
                         std::to_string(numeric.size()));
  }
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double d = analytic[i] - numeric[i];
    diff += d * d;
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), floor});
}

}  // namespace cbdb
