// SPDX-License-Identifier: Apache-2.0
//
// AdamW with decoupled weight decay and a warmup + cosine/constant schedule.

#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "sr/numerics/tensor.hpp"

namespace sr {

enum class Schedule { cosine, constant };

struct OptimizerConfig {
  double peak_lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.02;
  std::int64_t warmup_steps = 200;
  Schedule schedule = Schedule::constant;
  std::int64_t total_steps = 0;  // cosine only

  void validate() const {
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
      throw std::invalid_argument("optimizer: betas must lie in [0, 1)");
    if (weight_decay < 0) throw std::invalid_argument("optimizer: weight_decay must be >= 0");
    if (peak_lr < 0) throw std::invalid_argument("optimizer: peak_lr must be >= 0");
    if (warmup_steps < 0) throw std::invalid_argument("optimizer: warmup_steps must be >= 0");
    if (schedule == Schedule::cosine && total_steps <= warmup_steps)
      throw std::invalid_argument("optimizer: cosine schedule needs total_steps > warmup_steps");
  }
};

/// Learning rate for update number `step` (the first update is step 1).
/// Linear warmup from 0, then cosine decay to 0 at total_steps or constant.
double lr_at(const OptimizerConfig& config, std::int64_t step);

template <class T>
struct OptimizerState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::int64_t step = 0;

  static OptimizerState zeros_like(std::span<const Tensor<T>> params) {
    OptimizerState s;
    for (const auto& p : params) {
      s.m.emplace_back(p.shape());
      s.v.emplace_back(p.shape());
    }
    return s;
  }
};

/// One AdamW update in place:
///   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
///   p <- p - lr (m_hat / (sqrt(v_hat) + eps) + wd p)
/// Throws on non-finite gradients before touching any state.
template <class T>
void adamw_step(std::span<Tensor<T>> params, std::span<const Tensor<T>> grads, OptimizerState<T>& state,
                const OptimizerConfig& config, double lr);

}  // namespace sr
