// SPDX-License-Identifier: Apache-2.0
//
// Run configuration. Serialized as JSON; see README for the schema.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sr/model/config.hpp"
#include "sr/optim/adamw.hpp"
#include "sr/optim/stopping.hpp"
#include "sr/replay/replay.hpp"

namespace sr {

enum class RunKind { pretrain, finetune, curriculum };
std::string_view to_string(RunKind kind);

struct MarkovSpec {
  std::string name;
  std::string kind = "dirichlet";  // dirichlet | cycle | uniform
  int states = 24;
  double alpha = 0.3;
  std::uint64_t stream = 0;  // transitions drawn from Rng(corpora_seed).split(stream)
};

struct DataConfig {
  std::string kind = "markov";  // markov | tasks
  std::uint64_t corpora_seed = 17;
  std::vector<MarkovSpec> corpora;        // markov only; defaults to lang-A and lang-B
  std::map<std::string, double> mixture;  // pretrain weights by source name
  std::string downstream;                 // finetune target
  std::vector<std::string> prior;         // forgetting is measured (and replay drawn) on these
  std::vector<std::string> tasks = {"add", "reversal", "sort", "modadd"};
  std::size_t seq_len = 32;          // markov sequences; task sequences have a fixed length
  std::size_t train_sequences = 0;   // finite dataset size per source; 0 generates online
  std::size_t eval_sequences = 256;  // fixed held-out set per source
};

struct StoppingConfig {
  StoppingRule rule;
  /// When set, the target loss is the downstream entropy rate plus this many nats.
  std::optional<double> target_above_entropy;
};

struct CurriculumConfig {
  std::int64_t steps_per_task = 2000;
  std::int64_t eval_every = 250;
  std::size_t eval_examples = 256;
};

struct RunConfig {
  RunKind kind = RunKind::pretrain;
  std::string name = "run";
  std::uint64_t seed = 0;
  ModelConfig model = [] {
    ModelConfig m;
    m.vocab_size = 0;  // derived from the data sources
    return m;
  }();
  DataConfig data;
  OptimizerConfig optimizer;
  StoppingConfig stopping;
  ReplayConfig replay;
  CurriculumConfig curriculum;
  std::size_t batch_size = 256;
  std::int64_t log_every = 10;
  std::string base_checkpoint;      // finetune
  std::int64_t crash_at_step = -1;  // fault injection for sweep isolation tests

  void validate() const;
};

nlohmann::json to_json(const RunConfig& config);
/// Strict: unknown keys and wrong types are errors naming the offending path.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
void save_run_config(const RunConfig& config, const std::string& path);

/// Applies "a.b.c=value" (value parsed as JSON, falling back to a string).
void apply_override(nlohmann::json& j, const std::string& assignment);

/// FNV-1a 64 of the canonical serialization, as 16 hex digits.
std::string config_hash(const RunConfig& config);

/// Markov corpora in effect (defaults filled in).
std::vector<MarkovSpec> effective_corpora(const DataConfig& data);

/// Optimizer in effect: a cosine schedule with total_steps = 0 decays over the
/// step cap (steps per task for curricula).
OptimizerConfig effective_optimizer(const RunConfig& config);

}  // namespace sr
