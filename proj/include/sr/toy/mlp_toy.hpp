// SPDX-License-Identifier: Apache-2.0
//
// 1-D regression toy: pretrain a small GELU MLP on an "old" interval, then
// finetune on a disjoint "new" interval with an optional penalty
//   R = mean_old (f(x) - f_frozen(x))^2
// which is the KL between unit-variance Gaussian predictives up to a factor.
// Training is full batch in double precision.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sr/numerics/tensor.hpp"
#include "sr/optim/adamw.hpp"

namespace sr {

enum class ToyRegion { old_region, new_region };
enum class ToyStage { pretrain, finetune };

struct ToyConfig {
  int hidden = 64;
  std::size_t points = 256;  // per region
  double noise = 0.05;
  double old_lo = -2.0, old_hi = -0.5;
  double new_lo = 0.5, new_hi = 2.0;
  std::uint64_t data_seed = 0;
  std::int64_t pretrain_steps = 3000;
  std::int64_t finetune_steps = 3000;
  OptimizerConfig optimizer = default_optimizer();
  std::int64_t trace_every = 50;
  double grid_lo = -2.5, grid_hi = 2.5;
  std::size_t grid_points = 201;

  static OptimizerConfig default_optimizer();
  void validate() const;
  nlohmann::json to_json() const;
};

struct ToyDataset {
  std::vector<double> x;
  std::vector<double> y;
  ToyRegion region = ToyRegion::old_region;
};

/// y = sin(3x) + N(0, noise^2), x uniform on the region. Same data for every
/// model seed; only `config.data_seed` changes it.
ToyDataset make_toy_dataset(const ToyConfig& config, ToyRegion region);
double toy_target(double x);

/// 1 -> hidden -> hidden -> 1 with GELU. Tensors: w1 [1,H], b1 [H], w2 [H,H],
/// b2 [H], w3 [H,1], b3 [1].
struct MlpParams {
  int hidden = 0;
  std::vector<Tensor<double>> tensors;

  std::vector<double> predict(std::span<const double> x) const;
  std::size_t count() const;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
MlpParams init_mlp(int hidden, std::uint64_t seed);

double mse(std::span<const double> a, std::span<const double> b);

/// mean_i (f(x_i) - y_i)^2 and its gradient (one tensor per parameter).
double mlp_mse_grad(const MlpParams& params, std::span<const double> x, std::span<const double> y,
                    std::vector<Tensor<double>>& grads);

struct ToyTracePoint {
  std::int64_t step = 0;
  double old_mse = 0;
  double new_mse = 0;
  double drift = 0;  // R against the frozen pretrained model; 0 during pretraining
};

struct ToyResult {
  MlpParams params;
  MlpParams base;  // pretrained model (equals params for the pretrain stage)
  std::vector<ToyTracePoint> trace;
};

/// Pretrain from init_mlp(seed) on the old region.
ToyResult toy_pretrain(const ToyConfig& config, std::uint64_t seed);

/// Finetune `base` on MSE(new) + lambda R(old). With lambda = 0 the penalty is
/// only evaluated for the trace. Throws NonFiniteError on divergence.
ToyResult toy_finetune(const MlpParams& base, const ToyConfig& config, double lambda);

/// Same, but the frozen model behind R may differ from the starting point.
ToyResult toy_finetune(const MlpParams& start, const MlpParams& reference, const ToyConfig& config, double lambda);

/// Pretrain stage alone, or pretrain followed by finetune.
ToyResult toy_train(ToyStage stage, double lambda, std::uint64_t seed, const ToyConfig& config);

/// Linear-interpolation percentile (q in [0, 1]) of unsorted values.
double percentile(std::vector<double> values, double q);

struct ToyBand {
  std::vector<double> x;
  std::vector<std::vector<double>> predictions;  // [seed][grid]
  std::vector<double> p25, p50, p75;
};

std::vector<double> toy_grid(const ToyConfig& config);
ToyBand band_from_predictions(std::vector<double> x, std::vector<std::vector<double>> predictions);

/// Finetuned predictions on the grid for each seed and their pointwise
/// quartiles. Needs at least 4 seeds.
ToyBand toy_band(std::span<const std::uint64_t> seeds, double lambda, const ToyConfig& config);

}  // namespace sr
