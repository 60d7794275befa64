// SPDX-License-Identifier: Apache-2.0
//
// Self-generated replay: a frozen snapshot of the model samples sequences
// for earlier data sources, and finetuning adds lambda times a replay loss
// (token-level forward KL to the snapshot, or plain NTP on its samples).

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "sr/model/token_batch.hpp"
#include "sr/model/transformer.hpp"
#include "sr/numerics/random.hpp"
#include "sr/numerics/tape.hpp"
#include "sr/tasks/dataset.hpp"

namespace sr {

enum class ReplayObjective { kl, ntp };
enum class ReplaySource { self_generated, stored_real };

std::string_view to_string(ReplayObjective o);
std::string_view to_string(ReplaySource s);
ReplayObjective parse_replay_objective(std::string_view name);
ReplaySource parse_replay_source(std::string_view name);

struct ReplayConfig {
  ReplayObjective objective = ReplayObjective::kl;
  double lambda = 0.0;
  ReplaySource source = ReplaySource::self_generated;
  double batch_ratio = 0.25;  // replay rows per downstream row
  bool mixed_batch = false;   // one NTP loss over downstream + replay rows
  double temperature = 1.0;
  std::size_t sample_length = 0;  // 0: same as the downstream sequences
  std::size_t pool_size = 0;      // sequences per source; 0 resamples every step

  bool enabled() const { return lambda > 0 || mixed_batch; }
  void validate() const;
};

/// Immutable snapshot used as the replay teacher.
template <class T>
class FrozenReference {
 public:
  FrozenReference(ModelParams<T> params, std::int64_t step, std::vector<std::int32_t> sources)
      : params_(std::move(params)), step_(step), sources_(std::move(sources)) {}

  const ModelParams<T>& params() const { return params_; }
  std::int64_t step() const { return step_; }
  const std::vector<std::int32_t>& sources() const { return sources_; }

  /// Next-token log-probabilities [batch, len, V].
  Tensor<T> log_probs(std::span<const std::int32_t> tokens, std::size_t batch, std::size_t len) const;

 private:
  ModelParams<T> params_;
  std::int64_t step_;
  std::vector<std::int32_t> sources_;
};

/// Autoregressive samples: first token corpus_id, then `len - 1` tokens drawn
/// from softmax(logits / temperature). Every token after the id is a target.
template <class T>
TokenBatch sample_replay(const FrozenReference<T>& ref, std::int32_t corpus_id, std::size_t batch, std::size_t len,
                         Rng& rng, double temperature = 1.0);

/// A fixed pool of `count` samples, drawn in chunks.
template <class T>
TokenBatch sample_replay_rows(const FrozenReference<T>& ref, std::int32_t corpus_id, std::size_t count,
                              std::size_t len, Rng& rng, double temperature = 1.0);

/// Mean over target positions of KL(p_ref || p_theta); gradients reach theta only.
template <class T>
Var kl_replay_loss(Tape<T>& tape, const ModelConfig& config, std::span<const Var> theta,
                   const FrozenReference<T>& ref, const TokenBatch& batch);

/// Masked NTP on the replay batch.
template <class T>
Var ntp_replay_loss(Tape<T>& tape, const ModelConfig& config, std::span<const Var> theta, const TokenBatch& batch);

struct LossParts {
  Var total;
  Var downstream;
  std::optional<Var> replay;  // absent when replay is off or lambda is 0 outside mixed mode
};

/// L_down + lambda L_replay, or in mixed mode a single NTP loss over the
/// stacked rows (the components are then the per-part NTP losses, reported
/// for logging only).
template <class T>
LossParts total_loss(Tape<T>& tape, const ModelConfig& config, std::span<const Var> theta,
                     const FrozenReference<T>* ref, const TokenBatch& downstream, const TokenBatch* replay,
                     const ReplayConfig& cfg);

}  // namespace sr
