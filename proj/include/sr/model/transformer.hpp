// SPDX-License-Identifier: Apache-2.0
//
// Decoder-only transformer: token embedding, pre-norm attention with
// per-head QK RMS norm and rotary embeddings, pre-norm GELU MLP, final
// RMS norm, untied output embedding.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sr/model/config.hpp"
#include "sr/model/token_batch.hpp"
#include "sr/numerics/tape.hpp"
#include "sr/numerics/tensor.hpp"

namespace sr {

inline constexpr double kRopeBase = 10000.0;
inline constexpr double kNormEps = 1e-6;

enum class LayerTensor : std::size_t { qkv = 0, out = 1, up = 2, down = 3 };

/// Weights in a fixed order: embed_in [V,d], embed_out [V,d], then per layer
/// qkv [3,n,d,h], out [n,h,d], up [d,f], down [f,d].
template <class T>
struct ModelParams {
  ModelConfig config;
  std::vector<std::string> names;
  std::vector<Tensor<T>> tensors;

  static constexpr std::size_t kEmbedIn = 0;
  static constexpr std::size_t kEmbedOut = 1;
  static std::size_t slot(int layer, LayerTensor which) {
    return 2 + static_cast<std::size_t>(layer) * 4 + static_cast<std::size_t>(which);
  }

  Tensor<T>& at(int layer, LayerTensor which) { return tensors[slot(layer, which)]; }
  const Tensor<T>& at(int layer, LayerTensor which) const { return tensors[slot(layer, which)]; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
  }

  template <class U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    out.config = config;
    out.names = names;
    for (const auto& t : tensors) out.tensors.push_back(t.template cast<U>());
    return out;
  }

  bool operator==(const ModelParams&) const = default;
};

/// Shapes and names in canonical order, zero filled.
template <class T>
ModelParams<T> zero_params(const ModelConfig& config);

/// Configured init standard deviation per tensor, in canonical order.
std::vector<double> init_scales(const ModelConfig& config);

/// Truncated-normal init (cut at 2 sigma, rescaled so the realised std
/// equals the configured scale). Deterministic in (config, seed).
template <class T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed);

/// Binds params as tape leaves.
template <class T>
std::vector<Var> bind_params(Tape<T>& tape, const ModelParams<T>& params, bool requires_grad = true);

/// Logits [batch, len, V] for tokens [batch, len].
template <class T>
Var forward(Tape<T>& tape, const ModelConfig& config, std::span<const Var> params,
            std::span<const std::int32_t> tokens, std::size_t batch, std::size_t len);

template <class T>
Tensor<T> forward_logits(const ModelParams<T>& params, std::span<const std::int32_t> tokens, std::size_t batch,
                         std::size_t len);

/// Masked next-token cross-entropy (nats/token) of a batch.
template <class T>
Var ntp_loss(Tape<T>& tape, const ModelConfig& config, std::span<const Var> params, const TokenBatch& batch);

template <class T>
T ntp_loss_value(const ModelParams<T>& params, const TokenBatch& batch);

/// x / sqrt(mean(x^2) + eps) along the last axis.
template <class T>
Tensor<T> rms_norm(const Tensor<T>& x);

/// Rotary embedding of x [B, T, n, h] with positions 0..T-1.
template <class T>
Tensor<T> rope_apply(const Tensor<T>& x);

}  // namespace sr
