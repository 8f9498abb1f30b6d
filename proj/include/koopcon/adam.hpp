#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "koopcon/tensor.hpp"

namespace koopcon {

struct AdamState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step_count = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState for_params(std::span<const Tensor> params, double lr = 1e-3, double beta1 = 0.9,
                              double beta2 = 0.999, double epsilon = 1e-8) {
    AdamState s;
    s.learning_rate = lr;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.epsilon = epsilon;
    for (const Tensor& p : params) {
      s.first_moment.emplace_back(p.numel(), 0.0);
      s.second_moment.emplace_back(p.numel(), 0.0);
    }
    return s;
  }
};

// One bias-corrected Adam update using each parameter's accumulated grad.
// A parameter without a grad buffer is treated as having a zero gradient.
inline void adam_step(std::span<Tensor> params, AdamState& state) {
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw DimensionError("adam_step: state tracks " + std::to_string(state.first_moment.size()) +
                         " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first_moment[i].size() != params[i].numel() || state.second_moment[i].size() != params[i].numel() ||
        (params[i].has_grad() && params[i].grad().size() != params[i].numel())) {
      throw DimensionError("adam_step: moment/grad buffers for parameter " + std::to_string(i) +
                           " do not match shape " + shape_str(params[i].shape()));
    }
  }
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    auto data = p.data();
    const bool has = p.has_grad();
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double g = has ? p.grad()[j] : 0.0;
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      data[j] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

}  // namespace koopcon
