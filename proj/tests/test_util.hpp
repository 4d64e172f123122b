#pragma once

#include <cstdint>
#include <vector>

#include "posterpp/rng.hpp"
#include "posterpp/tensor.hpp"

namespace posterpp::testing {

inline Tensor randn(Rng& rng, Shape shape, double sd = 1.0, bool requires_grad = false) {
  std::vector<double> v(shape_numel(shape));
  for (double& e : v) e = rng.normal(0.0, sd);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

inline Tensor from_rows(const std::vector<std::vector<double>>& rows) {
  std::vector<double> v;
  for (const auto& r : rows) v.insert(v.end(), r.begin(), r.end());
  return Tensor({rows.size(), rows.front().size()}, std::move(v));
}

inline std::vector<double> to_vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace posterpp::testing
