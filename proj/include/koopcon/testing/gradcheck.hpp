#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "koopcon/rng.hpp"
#include "koopcon/tensor.hpp"

namespace koopcon::testing {

// Norm-wise relative error ||a − b|| / max(||a||, ||b||); 0 when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::vector<std::vector<double>> analytic;
  std::vector<std::vector<double>> numeric;
};

// Compares reverse-mode gradients of a scalar function against central
// differences for every element of every input.
inline GradCheckResult gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                                 std::vector<Tensor> inputs, double step = 1e-5) {
  for (Tensor& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor out = fn(inputs);
  backward(out);

  GradCheckResult result;
  for (Tensor& t : inputs) {
    std::vector<double> analytic = t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                                : std::vector<double>(t.numel(), 0.0);
    std::vector<double> numeric(t.numel());
    {
      NoGradGuard guard;
      for (std::size_t i = 0; i < t.numel(); ++i) {
        const double saved = t.data()[i];
        t.data()[i] = saved + step;
        const double plus = fn(inputs).item();
        t.data()[i] = saved - step;
        const double minus = fn(inputs).item();
        t.data()[i] = saved;
        numeric[i] = (plus - minus) / (2.0 * step);
      }
    }
    result.max_relative_error = std::max(result.max_relative_error, relative_error(analytic, numeric));
    result.analytic.push_back(std::move(analytic));
    result.numeric.push_back(std::move(numeric));
  }
  return result;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace koopcon::testing
