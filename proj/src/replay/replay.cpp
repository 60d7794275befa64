// SPDX-License-Identifier: Apache-2.0

#include "sr/replay/replay.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "sr/numerics/ops.hpp"

namespace sr {

std::string_view to_string(ReplayObjective o) { return o == ReplayObjective::kl ? "kl" : "ntp"; }
std::string_view to_string(ReplaySource s) { return s == ReplaySource::self_generated ? "self_generated" : "stored_real"; }

ReplayObjective parse_replay_objective(std::string_view name) {
  if (name == "kl") return ReplayObjective::kl;
  if (name == "ntp") return ReplayObjective::ntp;
  throw std::invalid_argument("unknown replay objective '" + std::string(name) + "'");
}

ReplaySource parse_replay_source(std::string_view name) {
  if (name == "self_generated") return ReplaySource::self_generated;
  if (name == "stored_real") return ReplaySource::stored_real;
  throw std::invalid_argument("unknown replay source '" + std::string(name) + "'");
}

void ReplayConfig::validate() const {
  if (!(lambda >= 0) || !std::isfinite(lambda)) throw std::invalid_argument("replay: lambda must be finite and >= 0");
  if (!(batch_ratio > 0)) throw std::invalid_argument("replay: batch_ratio must be positive");
  if (!(temperature > 0)) throw std::invalid_argument("replay: temperature must be positive");
  if (mixed_batch && objective != ReplayObjective::ntp)
    throw std::invalid_argument("replay: mixed_batch requires the ntp objective");
}

template <class T>
Tensor<T> FrozenReference<T>::log_probs(std::span<const std::int32_t> tokens, std::size_t batch,
                                        std::size_t len) const {
  return log_softmax(forward_logits(params_, tokens, batch, len));
}

template <class T>
TokenBatch sample_replay(const FrozenReference<T>& ref, std::int32_t corpus_id, std::size_t batch, std::size_t len,
                         Rng& rng, double temperature) {
  if (len < 2) throw std::invalid_argument("sample_replay: length must be >= 2");
  if (corpus_id < 0 || corpus_id >= ref.params().config.vocab_size)
    throw std::out_of_range("sample_replay: corpus id outside the vocabulary");
  if (!(temperature > 0)) throw std::invalid_argument("sample_replay: temperature must be positive");
  TokenBatch out(batch, len);
  std::vector<std::int32_t> prefix(batch, corpus_id);
  std::vector<double> probs;
  for (std::size_t t = 1; t < len; ++t) {
    const Tensor<T> logits = forward_logits(ref.params(), prefix, batch, t);
    const std::size_t vocab = logits.dim(2);
    probs.resize(vocab);
    std::vector<std::int32_t> grown;
    grown.reserve(batch * (t + 1));
    for (std::size_t b = 0; b < batch; ++b) {
      const T* row = logits.ptr() + (b * t + t - 1) * vocab;
      const double mx = static_cast<double>(*std::max_element(row, row + vocab));
      for (std::size_t v = 0; v < vocab; ++v) probs[v] = std::exp((static_cast<double>(row[v]) - mx) / temperature);
      const auto next = static_cast<std::int32_t>(rng.categorical(std::span<const double>(probs)));
      grown.insert(grown.end(), prefix.begin() + static_cast<std::ptrdiff_t>(b * t),
                   prefix.begin() + static_cast<std::ptrdiff_t>((b + 1) * t));
      grown.push_back(next);
    }
    prefix = std::move(grown);
  }
  out.tokens = std::move(prefix);
  for (std::size_t b = 0; b < batch; ++b) std::fill_n(out.mask.begin() + static_cast<std::ptrdiff_t>(b * len + 1), len - 1, 1);
  return out;
}

template <class T>
TokenBatch sample_replay_rows(const FrozenReference<T>& ref, std::int32_t corpus_id, std::size_t count,
                              std::size_t len, Rng& rng, double temperature) {
  constexpr std::size_t kChunk = 256;
  TokenBatch out;
  for (std::size_t done = 0; done < count; done += kChunk)
    out.append_rows(sample_replay(ref, corpus_id, std::min(kChunk, count - done), len, rng, temperature));
  return out;
}

template <class T>
Var kl_replay_loss(Tape<T>& tape, const ModelConfig& config, std::span<const Var> theta,
                   const FrozenReference<T>& ref, const TokenBatch& batch) {
  if (batch.len < 2) throw std::invalid_argument("kl_replay_loss: sequences need at least two tokens");
  const auto inputs = batch.inputs();
  const Tensor<T> ref_lp = ref.log_probs(inputs, batch.batch, batch.len - 1);
  const Var logits = forward(tape, config, theta, inputs, batch.batch, batch.len - 1);
  const auto mask = batch.target_mask<T>();
  return ops::kl_to_reference(tape, logits, ref_lp, mask);
}

template <class T>
Var ntp_replay_loss(Tape<T>& tape, const ModelConfig& config, std::span<const Var> theta, const TokenBatch& batch) {
  return ntp_loss(tape, config, theta, batch);
}

template <class T>
LossParts total_loss(Tape<T>& tape, const ModelConfig& config, std::span<const Var> theta,
                     const FrozenReference<T>* ref, const TokenBatch& downstream, const TokenBatch* replay,
                     const ReplayConfig& cfg) {
  cfg.validate();
  if (cfg.mixed_batch) {
    if (!replay) throw std::invalid_argument("total_loss: mixed batch mode needs replay rows");
    TokenBatch mixed = downstream;
    mixed.append_rows(*replay);
    const auto inputs = mixed.inputs();
    const auto targets = mixed.targets();
    const Var logits = forward(tape, config, theta, inputs, mixed.batch, mixed.len - 1);
    const auto all = mixed.target_mask<T>();
    std::vector<T> down_mask(all), replay_mask(all);
    const std::size_t split = downstream.batch * (mixed.len - 1);
    std::fill(down_mask.begin() + static_cast<std::ptrdiff_t>(split), down_mask.end(), T(0));
    std::fill(replay_mask.begin(), replay_mask.begin() + static_cast<std::ptrdiff_t>(split), T(0));
    LossParts parts;
    parts.downstream = ops::cross_entropy(tape, logits, targets, std::span<const T>(down_mask));
    if (replay->target_count() > 0)
      parts.replay = ops::cross_entropy(tape, logits, targets, std::span<const T>(replay_mask));
    parts.total = ops::cross_entropy(tape, logits, targets, std::span<const T>(all));
    return parts;
  }
  LossParts parts;
  parts.downstream = ntp_loss(tape, config, theta, downstream);
  parts.total = parts.downstream;
  if (cfg.lambda == 0) return parts;
  if (!replay) throw std::invalid_argument("total_loss: lambda > 0 needs a replay batch");
  if (cfg.objective == ReplayObjective::kl) {
    if (!ref) throw std::invalid_argument("total_loss: the kl objective needs a frozen reference");
    parts.replay = kl_replay_loss(tape, config, theta, *ref, *replay);
  } else {
    parts.replay = ntp_replay_loss(tape, config, theta, *replay);
  }
  parts.total = ops::add(tape, parts.downstream, ops::scale(tape, *parts.replay, static_cast<T>(cfg.lambda)));
  return parts;
}

#define SR_INSTANTIATE_REPLAY(T)                                                                               \
  template class FrozenReference<T>;                                                                           \
  template TokenBatch sample_replay<T>(const FrozenReference<T>&, std::int32_t, std::size_t, std::size_t, Rng&, \
                                       double);                                                                \
  template TokenBatch sample_replay_rows<T>(const FrozenReference<T>&, std::int32_t, std::size_t, std::size_t,  \
                                            Rng&, double);                                                     \
  template Var kl_replay_loss<T>(Tape<T>&, const ModelConfig&, std::span<const Var>, const FrozenReference<T>&, \
                                 const TokenBatch&);                                                           \
  template Var ntp_replay_loss<T>(Tape<T>&, const ModelConfig&, std::span<const Var>, const TokenBatch&);      \
  template LossParts total_loss<T>(Tape<T>&, const ModelConfig&, std::span<const Var>, const FrozenReference<T>*, \
                                   const TokenBatch&, const TokenBatch*, const ReplayConfig&);

SR_INSTANTIATE_REPLAY(float)
SR_INSTANTIATE_REPLAY(double)

}  // namespace sr
