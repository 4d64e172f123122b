#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "posterpp/ops.hpp"
#include "posterpp/rng.hpp"
#include "posterpp/tensor.hpp"

namespace posterpp {

/// Central-difference gradient (f(x + h e_i) - f(x - h e_i)) / 2h of a
/// scalar function, evaluated on a detached copy of `x`.
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                               double h = 1e-5) {
  Tensor probe = x.clone();
  auto v = probe.mutable_values();
  std::vector<double> g(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double orig = v[i];
    v[i] = orig + h;
    const double fp = f(probe);
    v[i] = orig - h;
    const double fm = f(probe);
    v[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return Tensor(x.shape(), std::move(g));
}

/// Central difference of a closure with respect to one element of a tensor
/// that the closure reads (typically a model parameter). Restores the value.
inline double finite_diff_at(const std::function<double()>& f, Tensor& x, std::size_t index,
                             double h = 1e-5) {
  auto v = x.mutable_values();
  const double orig = v[index];
  v[index] = orig + h;
  const double fp = f();
  v[index] = orig - h;
  const double fm = f();
  v[index] = orig;
  return (fp - fm) / (2.0 * h);
}

/// |a - n| / max(|a|, |n|, floor). The floor keeps round-off on near-zero
/// gradients from reading as large relative error.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

inline double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                                 double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    worst = std::max(worst, relative_error(analytic[i], numeric[i], floor));
  }
  return worst;
}

using TensorFn = std::function<Tensor(Context&, const std::vector<Tensor>&)>;

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t checked = 0;  // number of input elements compared
};

/// Compares tape gradients of L = sum(f(inputs) * R), R a fixed random
/// weighting, against central differences for every element of every input
/// whose `differentiable` flag is set (all inputs when the list is empty).
inline GradCheckResult check_gradients(const TensorFn& f, const std::vector<Tensor>& inputs,
                                       std::uint64_t seed = 0, double h = 1e-5,
                                       std::vector<bool> differentiable = {}) {
  if (differentiable.empty()) differentiable.assign(inputs.size(), true);
  Context plain;
  const Tensor probe = f(plain, inputs);
  Rng rng(seed);
  std::vector<double> w(probe.size());
  for (double& e : w) e = rng.normal();
  const Tensor weights(probe.shape(), std::move(w));

  auto loss_of = [&](Context& ctx, const std::vector<Tensor>& ins) {
    return ops::sum(ctx, ops::mul(ctx, f(ctx, ins), weights));
  };

  std::vector<Tensor> leaves;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor t = inputs[i].clone();
    t.set_requires_grad(differentiable[i]);
    leaves.push_back(t);
  }
  Tape tape;
  Context ctx;
  ctx.tape = &tape;
  backward(loss_of(ctx, leaves), tape);

  GradCheckResult res;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!differentiable[i]) continue;
    auto numeric = finite_diff_grad(
        [&](const Tensor& x) {
          std::vector<Tensor> ins = inputs;
          ins[i] = x;
          Context c;
          return loss_of(c, ins).item();
        },
        inputs[i], h);
    const auto analytic = leaves[i].grad();
    res.max_rel_err = std::max(res.max_rel_err, max_relative_error(analytic, numeric.values()));
    res.checked += analytic.size();
  }
  return res;
}

}  // namespace posterpp
