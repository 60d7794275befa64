// SPDX-License-Identifier: Apache-2.0

#include "sr/toy/mlp_toy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "sr/numerics/random.hpp"
#include "sr/numerics/tape.hpp"
#include "sr/simd/kernels.hpp"

namespace sr {

OptimizerConfig ToyConfig::default_optimizer() {
  OptimizerConfig o;
  o.peak_lr = 3e-3;
  o.weight_decay = 0;
  o.warmup_steps = 0;
  o.schedule = Schedule::cosine;
  return o;
}

void ToyConfig::validate() const {
  if (hidden < 1) throw std::invalid_argument("toy: hidden must be >= 1");
  if (points < 1) throw std::invalid_argument("toy: points must be >= 1");
  if (noise < 0) throw std::invalid_argument("toy: noise must be >= 0");
  if (!(old_lo < old_hi) || !(new_lo < new_hi)) throw std::invalid_argument("toy: empty region");
  if (!(old_hi < new_lo || new_hi < old_lo)) throw std::invalid_argument("toy: old and new regions overlap");
  if (pretrain_steps < 1 || finetune_steps < 0) throw std::invalid_argument("toy: bad step counts");
  if (trace_every < 1) throw std::invalid_argument("toy: trace_every must be >= 1");
  if (grid_points < 2 || !(grid_lo < grid_hi)) throw std::invalid_argument("toy: bad evaluation grid");
  OptimizerConfig o = optimizer;
  o.total_steps = std::max(pretrain_steps, finetune_steps);
  o.validate();
}

nlohmann::json ToyConfig::to_json() const {
  return {{"hidden", hidden},
          {"points_per_region", points},
          {"noise", noise},
          {"target", "sin(3x)"},
          {"old_region", {old_lo, old_hi}},
          {"new_region", {new_lo, new_hi}},
          {"data_seed", data_seed},
          {"pretrain_steps", pretrain_steps},
          {"finetune_steps", finetune_steps},
          {"peak_lr", optimizer.peak_lr},
          {"schedule", optimizer.schedule == Schedule::cosine ? "cosine" : "constant"},
          {"activation", "gelu"},
          {"penalty", "mean squared prediction difference on old inputs"}};
}

double toy_target(double x) { return std::sin(3.0 * x); }

ToyDataset make_toy_dataset(const ToyConfig& config, ToyRegion region) {
  config.validate();
  const bool old = region == ToyRegion::old_region;
  Rng rng = Rng(config.data_seed).split(old ? 1 : 2);
  const double lo = old ? config.old_lo : config.new_lo, hi = old ? config.old_hi : config.new_hi;
  ToyDataset d;
  d.region = region;
  for (std::size_t i = 0; i < config.points; ++i) {
    const double x = lo + (hi - lo) * rng.uniform();
    d.x.push_back(x);
    d.y.push_back(toy_target(x) + config.noise * rng.normal());
  }
  return d;
}

namespace {

enum { W1, B1, W2, B2, W3, B3 };

// returns gelu(z) and stores its derivative
double gelu(double z, double& grad) {
  const double cdf = 0.5 * (1.0 + std::erf(z * std::numbers::sqrt2 * 0.5));
  grad = cdf + z * std::exp(-0.5 * z * z) * 0.5 * std::numbers::sqrt2 * std::numbers::inv_sqrtpi;
  return z * cdf;
}

struct Cache {
  std::vector<double> d1, a1, d2, a2, out;  // d = gelu'(pre-activation)
};

Cache run_forward(const MlpParams& p, std::span<const double> x) {
  const std::size_t n = x.size(), h = static_cast<std::size_t>(p.hidden);
  const auto& t = p.tensors;
  Cache c;
  c.d1.resize(n * h);
  c.a1.resize(n * h);
  c.d2.resize(n * h);
  c.a2.resize(n * h);
  c.out.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < h; ++j) c.a1[i * h + j] = gelu(x[i] * t[W1][j] + t[B1][j], c.d1[i * h + j]);
  std::vector<double> z(n * h);
  simd::gemm<double>({.m = n, .n = h, .k = h, .lda = h, .ldb = h, .ldc = h}, c.a1.data(), t[W2].ptr(), z.data());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < h; ++j) c.a2[i * h + j] = gelu(z[i * h + j] + t[B2][j], c.d2[i * h + j]);
    c.out[i] = t[B3][0] + simd::dot(&c.a2[i * h], t[W3].ptr(), h);
  }
  return c;
}

// grads += d/dparams of sum_i dout[i] * f(x_i)
void run_backward(const MlpParams& p, std::span<const double> x, const Cache& c, std::span<const double> dout,
                  std::vector<Tensor<double>>& grads) {
  const std::size_t n = x.size(), h = static_cast<std::size_t>(p.hidden);
  const auto& t = p.tensors;
  std::vector<double> dz2(n * h), dz1(n * h);
  for (std::size_t i = 0; i < n; ++i) {
    grads[B3][0] += dout[i];
    simd::axpy(dout[i], &c.a2[i * h], grads[W3].ptr(), h);
    for (std::size_t j = 0; j < h; ++j) dz2[i * h + j] = dout[i] * t[W3][j] * c.d2[i * h + j];
    simd::axpy(1.0, &dz2[i * h], grads[B2].ptr(), h);
  }
  simd::gemm<double>({.trans_a = true, .m = h, .n = h, .k = n, .lda = h, .ldb = h, .ldc = h, .accumulate = true},
                     c.a1.data(), dz2.data(), grads[W2].ptr());
  simd::gemm<double>({.trans_b = true, .m = n, .n = h, .k = h, .lda = h, .ldb = h, .ldc = h}, dz2.data(),
                     t[W2].ptr(), dz1.data());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < h; ++k) {
      const double g = dz1[i * h + k] * c.d1[i * h + k];
      grads[W1][k] += g * x[i];
      grads[B1][k] += g;
    }
}

std::vector<Tensor<double>> zero_grads(const MlpParams& p) {
  std::vector<Tensor<double>> g;
  for (const auto& t : p.tensors) g.emplace_back(t.shape());
  return g;
}

// grads += weight * d/dparams mean_i (f(x_i) - y_i)^2; returns the mse
double mse_grad(const MlpParams& p, std::span<const double> x, std::span<const double> y, double weight,
                std::vector<Tensor<double>>& grads) {
  const Cache c = run_forward(p, x);
  const double m = mse(c.out, y);
  if (weight != 0) {
    std::vector<double> dout(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) dout[i] = weight * 2.0 * (c.out[i] - y[i]) / static_cast<double>(x.size());
    run_backward(p, x, c, dout, grads);
  }
  return m;
}

void check_finite(const MlpParams& p, double loss, const char* where) {
  if (!std::isfinite(loss)) throw NonFiniteError(0, std::string("toy ") + where + " loss");
  for (const auto& t : p.tensors)
    if (!t.all_finite()) throw NonFiniteError(0, std::string("toy ") + where + " parameters");
}

ToyTracePoint trace_point(std::int64_t step, const MlpParams& p, const ToyDataset& old_d, const ToyDataset& new_d,
                          const std::vector<double>* frozen_old) {
  ToyTracePoint tp;
  tp.step = step;
  const auto po = p.predict(old_d.x);
  tp.old_mse = mse(po, old_d.y);
  tp.new_mse = mse(p.predict(new_d.x), new_d.y);
  tp.drift = frozen_old ? mse(po, *frozen_old) : 0.0;
  return tp;
}

// Shared loop. `frozen_old` non-null means finetuning.
ToyResult train(MlpParams params, const ToyConfig& config, std::int64_t steps, double lambda,
                const std::vector<double>* frozen_old) {
  const ToyDataset old_d = make_toy_dataset(config, ToyRegion::old_region);
  const ToyDataset new_d = make_toy_dataset(config, ToyRegion::new_region);
  OptimizerConfig opt = config.optimizer;
  opt.total_steps = steps;
  if (opt.schedule == Schedule::cosine && steps <= opt.warmup_steps) opt.schedule = Schedule::constant;
  auto state = OptimizerState<double>::zeros_like(params.tensors);

  ToyResult r;
  r.trace.push_back(trace_point(0, params, old_d, new_d, frozen_old));
  for (std::int64_t step = 1; step <= steps; ++step) {
    auto grads = zero_grads(params);
    double loss;
    if (!frozen_old) {
      loss = mse_grad(params, old_d.x, old_d.y, 1.0, grads);
    } else {
      loss = mse_grad(params, new_d.x, new_d.y, 1.0, grads);
      if (lambda != 0) loss += lambda * mse_grad(params, old_d.x, *frozen_old, lambda, grads);
    }
    check_finite(params, loss, frozen_old ? "finetune" : "pretrain");
    adamw_step<double>(params.tensors, grads, state, opt, lr_at(opt, step));
    if (step % config.trace_every == 0 || step == steps)
      r.trace.push_back(trace_point(step, params, old_d, new_d, frozen_old));
  }
  check_finite(params, r.trace.back().old_mse + r.trace.back().new_mse, frozen_old ? "finetune" : "pretrain");
  r.params = std::move(params);
  return r;
}

}  // namespace

std::vector<double> MlpParams::predict(std::span<const double> x) const { return run_forward(*this, x).out; }

std::size_t MlpParams::count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

MlpParams init_mlp(int hidden, std::uint64_t seed) {
  if (hidden < 1) throw std::invalid_argument("init_mlp: hidden must be >= 1");
  const std::size_t h = static_cast<std::size_t>(hidden);
  MlpParams p;
  p.hidden = hidden;
  p.tensors = {Tensor<double>(Shape{1, h}), Tensor<double>(Shape{h}),    Tensor<double>(Shape{h, h}),
               Tensor<double>(Shape{h}),    Tensor<double>(Shape{h, 1}), Tensor<double>(Shape{1})};
  const double fan_in[] = {1, 1, double(h), double(h), double(h), double(h)};
  for (std::size_t i = 0; i < p.tensors.size(); ++i) {
    Rng rng = Rng(seed).split(i);
    const double bound = 1.0 / std::sqrt(fan_in[i]);
    for (double& w : p.tensors[i].data()) w = bound * (2.0 * rng.uniform() - 1.0);
  }
  return p;
}

double mse(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw ShapeError("mse: sizes differ or are empty");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

ToyResult toy_pretrain(const ToyConfig& config, std::uint64_t seed) {
  config.validate();
  ToyResult r = train(init_mlp(config.hidden, seed), config, config.pretrain_steps, 0.0, nullptr);
  r.base = r.params;
  return r;
}

ToyResult toy_finetune(const MlpParams& base, const ToyConfig& config, double lambda) {
  return toy_finetune(base, base, config, lambda);
}

ToyResult toy_finetune(const MlpParams& start, const MlpParams& reference, const ToyConfig& config, double lambda) {
  config.validate();
  for (const MlpParams* m : {&start, &reference})
    if (m->hidden != config.hidden || m->tensors.size() != 6)
      throw std::invalid_argument("toy_finetune: model does not match the config");
  if (!(lambda >= 0) || !std::isfinite(lambda)) throw std::invalid_argument("toy_finetune: lambda must be >= 0");
  const std::vector<double> frozen_old = reference.predict(make_toy_dataset(config, ToyRegion::old_region).x);
  ToyResult r = train(start, config, config.finetune_steps, lambda, &frozen_old);
  r.base = reference;
  return r;
}

double mlp_mse_grad(const MlpParams& params, std::span<const double> x, std::span<const double> y,
                    std::vector<Tensor<double>>& grads) {
  grads = zero_grads(params);
  return mse_grad(params, x, y, 1.0, grads);
}

ToyResult toy_train(ToyStage stage, double lambda, std::uint64_t seed, const ToyConfig& config) {
  ToyResult pre = toy_pretrain(config, seed);
  if (stage == ToyStage::pretrain) return pre;
  return toy_finetune(pre.params, config, lambda);
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile: no values");
  if (!(q >= 0 && q <= 1)) throw std::invalid_argument("percentile: q must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double rank = q * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

std::vector<double> toy_grid(const ToyConfig& config) {
  std::vector<double> x(config.grid_points);
  for (std::size_t i = 0; i < x.size(); ++i)
    x[i] = config.grid_lo + (config.grid_hi - config.grid_lo) * static_cast<double>(i) / static_cast<double>(x.size() - 1);
  return x;
}

ToyBand band_from_predictions(std::vector<double> x, std::vector<std::vector<double>> predictions) {
  if (predictions.empty()) throw std::invalid_argument("toy band: no predictions");
  for (const auto& p : predictions)
    if (p.size() != x.size()) throw ShapeError("toy band: prediction length differs from the grid");
  ToyBand b;
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::vector<double> col;
    for (const auto& p : predictions) col.push_back(p[i]);
    b.p25.push_back(percentile(col, 0.25));
    b.p50.push_back(percentile(col, 0.50));
    b.p75.push_back(percentile(col, 0.75));
  }
  b.x = std::move(x);
  b.predictions = std::move(predictions);
  return b;
}

ToyBand toy_band(std::span<const std::uint64_t> seeds, double lambda, const ToyConfig& config) {
  if (seeds.size() < 4) throw std::invalid_argument("toy_band: needs at least 4 seeds");
  const auto grid = toy_grid(config);
  std::vector<std::vector<double>> preds;
  for (std::uint64_t s : seeds) preds.push_back(toy_train(ToyStage::finetune, lambda, s, config).params.predict(grid));
  return band_from_predictions(grid, std::move(preds));
}

}  // namespace sr
