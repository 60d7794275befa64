// SPDX-License-Identifier: Apache-2.0

#include "sr/model/transformer.hpp"

#include <cmath>
#include <stdexcept>

#include "sr/numerics/ops.hpp"
#include "sr/numerics/random.hpp"

namespace sr {

template <class T>
ModelParams<T> zero_params(const ModelConfig& config) {
  config.validate();
  const std::size_t v = static_cast<std::size_t>(config.vocab_size), d = static_cast<std::size_t>(config.d_model);
  const std::size_t n = static_cast<std::size_t>(config.n_heads), h = static_cast<std::size_t>(config.d_head);
  const std::size_t f = static_cast<std::size_t>(config.d_ff);
  ModelParams<T> p;
  p.config = config;
  p.names = {"embed_in", "embed_out"};
  p.tensors = {Tensor<T>(Shape{v, d}), Tensor<T>(Shape{v, d})};
  for (int l = 0; l < config.n_layers; ++l) {
    const std::string prefix = "layers." + std::to_string(l) + ".";
    p.names.push_back(prefix + "qkv");
    p.tensors.emplace_back(Shape{3, n, d, h});
    p.names.push_back(prefix + "out");
    p.tensors.emplace_back(Shape{n, h, d});
    p.names.push_back(prefix + "up");
    p.tensors.emplace_back(Shape{d, f});
    p.names.push_back(prefix + "down");
    p.tensors.emplace_back(Shape{f, d});
  }
  return p;
}

std::vector<double> init_scales(const ModelConfig& config) {
  const double proj = 1.0 / std::sqrt(static_cast<double>(config.d_model));
  const double residual = proj / std::sqrt(2.0 * config.n_layers);
  std::vector<double> scales = {0.02, 0.02};
  for (int l = 0; l < config.n_layers; ++l) scales.insert(scales.end(), {proj, residual, proj, residual});
  return scales;
}

template <class T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams<T> p = zero_params<T>(config);
  const std::vector<double> scales = init_scales(config);
  // std of a standard normal truncated to [-2, 2]
  constexpr double kTruncatedStd = 0.87962566103423978;
  for (std::size_t i = 0; i < p.tensors.size(); ++i) {
    Rng rng = Rng(seed).split(i);
    const double sigma = scales[i] / kTruncatedStd;
    for (T& w : p.tensors[i].data()) {
      double z = rng.normal();
      while (std::abs(z) > 2.0) z = rng.normal();
      w = static_cast<T>(z * sigma);
    }
  }
  return p;
}

template <class T>
std::vector<Var> bind_params(Tape<T>& tape, const ModelParams<T>& params, bool requires_grad) {
  std::vector<Var> vars;
  vars.reserve(params.tensors.size());
  for (const auto& t : params.tensors) vars.push_back(tape.leaf(t, requires_grad));
  return vars;
}

template <class T>
Var forward(Tape<T>& tape, const ModelConfig& config, std::span<const Var> params,
            std::span<const std::int32_t> tokens, std::size_t batch, std::size_t len) {
  if (len > static_cast<std::size_t>(config.max_context))
    throw std::invalid_argument("forward: sequence length " + std::to_string(len) + " exceeds max_context " +
                                std::to_string(config.max_context));
  if (tokens.size() != batch * len) throw ShapeError("forward: token count does not match [batch, len]");
  for (std::int32_t id : tokens)
    if (id < 0 || id >= config.vocab_size)
      throw std::out_of_range("forward: token id " + std::to_string(id) + " outside vocabulary of " +
                              std::to_string(config.vocab_size));
  const std::size_t expected = 2 + 4 * static_cast<std::size_t>(config.n_layers);
  if (params.size() != expected) throw std::invalid_argument("forward: wrong number of parameter tensors");

  const T eps = static_cast<T>(kNormEps);
  const T base = static_cast<T>(kRopeBase);
  using P = ModelParams<T>;
  Var h = ops::embedding(tape, params[P::kEmbedIn], tokens, Shape{batch, len});
  for (int l = 0; l < config.n_layers; ++l) {
    const Var qkv = params[P::slot(l, LayerTensor::qkv)];
    const Var x = ops::rms_norm(tape, h, eps);
    const Var q = ops::rope(tape, ops::rms_norm(tape, ops::head_project(tape, x, qkv, 0), eps), base);
    const Var k = ops::rope(tape, ops::rms_norm(tape, ops::head_project(tape, x, qkv, 1), eps), base);
    const Var v = ops::head_project(tape, x, qkv, 2);
    const Var a = ops::causal_attention(tape, q, k, v);
    h = ops::add(tape, h, ops::matmul(tape, a, params[P::slot(l, LayerTensor::out)], 2));
    const Var m = ops::gelu(tape, ops::matmul(tape, ops::rms_norm(tape, h, eps), params[P::slot(l, LayerTensor::up)]));
    h = ops::add(tape, h, ops::matmul(tape, m, params[P::slot(l, LayerTensor::down)]));
  }
  return ops::matmul_nt(tape, ops::rms_norm(tape, h, eps), params[P::kEmbedOut]);
}

template <class T>
Tensor<T> forward_logits(const ModelParams<T>& params, std::span<const std::int32_t> tokens, std::size_t batch,
                         std::size_t len) {
  Tape<T> tape;
  const auto vars = bind_params(tape, params, false);
  const Var logits = forward(tape, params.config, vars, tokens, batch, len);
  return tape.value(logits);
}

template <class T>
Var ntp_loss(Tape<T>& tape, const ModelConfig& config, std::span<const Var> params, const TokenBatch& batch) {
  if (batch.len < 2) throw std::invalid_argument("ntp_loss: sequences need at least two tokens");
  const auto inputs = batch.inputs();
  const auto targets = batch.targets();
  const auto mask = batch.target_mask<T>();
  const Var logits = forward(tape, config, params, inputs, batch.batch, batch.len - 1);
  return ops::cross_entropy(tape, logits, targets, mask);
}

template <class T>
T ntp_loss_value(const ModelParams<T>& params, const TokenBatch& batch) {
  Tape<T> tape;
  const auto vars = bind_params(tape, params, false);
  return tape.scalar(ntp_loss(tape, params.config, vars, batch));
}

template <class T>
Tensor<T> rms_norm(const Tensor<T>& x) {
  Tape<T> tape;
  return tape.value(ops::rms_norm(tape, tape.constant(x), static_cast<T>(kNormEps)));
}

template <class T>
Tensor<T> rope_apply(const Tensor<T>& x) {
  Tape<T> tape;
  return tape.value(ops::rope(tape, tape.constant(x), static_cast<T>(kRopeBase)));
}

#define SR_INSTANTIATE_MODEL(T)                                                                           \
  template ModelParams<T> zero_params<T>(const ModelConfig&);                                             \
  template ModelParams<T> init_params<T>(const ModelConfig&, std::uint64_t);                              \
  template std::vector<Var> bind_params<T>(Tape<T>&, const ModelParams<T>&, bool);                        \
  template Var forward<T>(Tape<T>&, const ModelConfig&, std::span<const Var>, std::span<const std::int32_t>, \
                          std::size_t, std::size_t);                                                      \
  template Tensor<T> forward_logits<T>(const ModelParams<T>&, std::span<const std::int32_t>, std::size_t,  \
                                       std::size_t);                                                      \
  template Var ntp_loss<T>(Tape<T>&, const ModelConfig&, std::span<const Var>, const TokenBatch&);        \
  template T ntp_loss_value<T>(const ModelParams<T>&, const TokenBatch&);                                 \
  template Tensor<T> rms_norm<T>(const Tensor<T>&);                                                       \
  template Tensor<T> rope_apply<T>(const Tensor<T>&);

SR_INSTANTIATE_MODEL(float)
SR_INSTANTIATE_MODEL(double)

}  // namespace sr
