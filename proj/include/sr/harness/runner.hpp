// SPDX-License-Identifier: Apache-2.0
//
// Training runs. Each writes, when given an output directory:
//   config.json    resolved run config
//   metrics.jsonl  metric records (see run_log.hpp)
//   run.json       run summary
//   final.ckpt     final (or restored best) weights

#pragma once

#include <string>
#include <vector>

#include "sr/harness/config.hpp"
#include "sr/harness/run_log.hpp"
#include "sr/model/transformer.hpp"
#include "sr/numerics/random.hpp"
#include "sr/tasks/arithmetic.hpp"
#include "sr/tasks/markov.hpp"
#include "sr/tasks/vocab.hpp"

namespace sr {

/// Vocabulary and generators for the sources a run can name.
class DataUniverse {
 public:
  explicit DataUniverse(const DataConfig& data);

  const Vocab& vocab() const { return vocab_; }
  bool is_tasks() const { return tasks_; }
  const std::vector<std::string>& sources() const { return names_; }
  std::size_t index(const std::string& name) const;
  std::int32_t source_id(const std::string& name) const { return vocab_.source_id(name); }
  std::size_t seq_len() const { return seq_len_; }
  /// Entropy rate in nats per token, NaN for task sources.
  double entropy_rate(const std::string& name) const;
  const MarkovCorpus& corpus(const std::string& name) const;

  TokenBatch generate(const std::string& name, std::size_t rows, Rng& rng) const;

 private:
  Vocab vocab_;
  bool tasks_ = false;
  std::vector<std::string> names_;
  std::vector<MarkovCorpus> corpora_;
  std::size_t seq_len_ = 0;
};

struct RunResult {
  ModelParams<float> params;
  RunLog log;
};

/// Model config with the vocabulary size filled in from the data.
ModelConfig resolve_model(const RunConfig& config, const DataUniverse& data);

RunResult run_pretrain(const RunConfig& config, const std::string& out_dir = "");
RunResult run_finetune(const RunConfig& config, const std::string& out_dir = "");
RunResult run_finetune(const ModelParams<float>& base, const RunConfig& config, const std::string& out_dir = "");
RunResult run_curriculum(const RunConfig& config, const std::string& out_dir = "");
/// Dispatches on config.kind.
RunResult run_config(const RunConfig& config, const std::string& out_dir = "");

/// Mean masked NTP loss over rows, evaluated in chunks.
double eval_loss(const ModelParams<float>& params, const TokenBatch& rows);

/// Held-out rows per source, the same ones a run with this config evaluates on.
std::vector<TokenBatch> eval_sets(const DataUniverse& data, const RunConfig& config);

/// Fixed exact-match examples for one task, as used by curriculum runs.
std::vector<TaskExample> task_eval_examples(const DataUniverse& data, const RunConfig& config, Task task);

/// Fraction of examples whose greedy answer matches exactly.
double exact_match(const ModelParams<float>& params, std::span<const TaskExample> examples);

/// {"loss": {source: nats}} for corpora, plus {"accuracy": {task: fraction}} for tasks.
nlohmann::json evaluate(const ModelParams<float>& params, const RunConfig& config);

}  // namespace sr
