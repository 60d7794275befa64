// SPDX-License-Identifier: Apache-2.0

#include "sr/optim/adamw.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace sr {

double lr_at(const OptimizerConfig& config, std::int64_t step) {
  if (step < 0) throw std::invalid_argument("lr_at: negative step");
  const double peak = config.peak_lr;
  if (step < config.warmup_steps) return peak * static_cast<double>(step) / static_cast<double>(config.warmup_steps);
  if (config.schedule == Schedule::constant) return peak;
  if (step >= config.total_steps) return 0.0;
  const double u = static_cast<double>(step - config.warmup_steps) /
                   static_cast<double>(config.total_steps - config.warmup_steps);
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * u));
}

template <class T>
void adamw_step(std::span<Tensor<T>> params, std::span<const Tensor<T>> grads, OptimizerState<T>& state,
                const OptimizerConfig& config, double lr) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw std::invalid_argument("adamw_step: params, grads and state disagree in length");
  if (lr < 0) throw std::invalid_argument("adamw_step: negative learning rate");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape() || params[i].shape() != state.m[i].shape())
      throw ShapeError("adamw_step: shape mismatch at tensor " + std::to_string(i) + ": " +
                       shape_str(params[i].shape()) + " vs " + shape_str(grads[i].shape()));
    if (!grads[i].all_finite()) throw std::domain_error("adamw_step: non-finite gradient in tensor " + std::to_string(i));
  }
  state.step += 1;
  const double b1 = config.beta1, b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  const double wd = config.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    T* p = params[i].ptr();
    const T* g = grads[i].ptr();
    T* m = state.m[i].ptr();
    T* v = state.v[i].ptr();
    for (std::size_t j = 0; j < params[i].size(); ++j) {
      const double gj = g[j];
      const double mj = b1 * m[j] + (1.0 - b1) * gj;
      const double vj = b2 * v[j] + (1.0 - b2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double m_hat = mj / c1;
      const double v_hat = vj / c2;
      const double pj = p[j];
      p[j] = static_cast<T>(pj - lr * (m_hat / (std::sqrt(v_hat) + config.eps) + wd * pj));
    }
  }
}

template void adamw_step<float>(std::span<Tensor<float>>, std::span<const Tensor<float>>, OptimizerState<float>&,
                                const OptimizerConfig&, double);
template void adamw_step<double>(std::span<Tensor<double>>, std::span<const Tensor<double>>, OptimizerState<double>&,
                                 const OptimizerConfig&, double);

}  // namespace sr
