// SPDX-License-Identifier: Apache-2.0

#include "sr/harness/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <stdexcept>

#include "sr/model/checkpoint.hpp"
#include "sr/optim/adamw.hpp"
#include "sr/replay/replay.hpp"
#include "sr/tasks/dataset.hpp"

namespace sr {

namespace fs = std::filesystem;

namespace {

// Independent random streams derived from the run seed.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kEvalStream = 2;
constexpr std::uint64_t kDatasetStream = 3;
constexpr std::uint64_t kTrainStream = 4;        // + phase
constexpr std::uint64_t kReplayStream = 100;     // + phase
constexpr std::uint64_t kTaskEvalStream = 200;

}  // namespace

// ---------------------------------------------------------------- data

DataUniverse::DataUniverse(const DataConfig& data) {
  if (data.kind == "tasks") {
    tasks_ = true;
    register_task_sources(vocab_);
    for (Task t : kAllTasks) names_.emplace_back(to_string(t));
    seq_len_ = kTaskSeqLen;
    return;
  }
  if (data.kind != "markov") throw std::invalid_argument("data.kind must be markov or tasks");
  seq_len_ = data.seq_len;
  const Rng root(data.corpora_seed);
  for (const auto& spec : effective_corpora(data)) {
    if (spec.kind == "dirichlet") {
      Rng rng = root.split(spec.stream);
      corpora_.push_back(make_dirichlet_corpus(vocab_, spec.name, spec.states, spec.alpha, rng));
    } else if (spec.kind == "cycle") {
      corpora_.push_back(make_cycle_corpus(vocab_, spec.name, spec.states));
    } else if (spec.kind == "uniform") {
      corpora_.push_back(make_uniform_corpus(vocab_, spec.name, spec.states));
    } else {
      throw std::invalid_argument("unknown markov corpus kind '" + spec.kind + "'");
    }
    names_.push_back(spec.name);
  }
}

std::size_t DataUniverse::index(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return i;
  throw std::invalid_argument("unknown data source '" + name + "'");
}

const MarkovCorpus& DataUniverse::corpus(const std::string& name) const {
  if (tasks_) throw std::invalid_argument("source '" + name + "' is a task, not a Markov corpus");
  return corpora_[index(name)];
}

double DataUniverse::entropy_rate(const std::string& name) const {
  if (tasks_) return std::numeric_limits<double>::quiet_NaN();
  return corpus(name).entropy_rate;
}

TokenBatch DataUniverse::generate(const std::string& name, std::size_t rows, Rng& rng) const {
  if (tasks_) return gen_task_batch(vocab_, parse_task(name), rows, rng);
  return gen_markov_batch(corpus(name), rows, seq_len_, rng);
}

ModelConfig resolve_model(const RunConfig& config, const DataUniverse& data) {
  ModelConfig m = config.model;
  const int v = static_cast<int>(data.vocab().size());
  if (m.vocab_size == 0) m.vocab_size = v;
  if (m.vocab_size != v)
    throw std::invalid_argument("model.vocab_size " + std::to_string(m.vocab_size) + " does not match the " +
                                std::to_string(v) + " tokens of the data sources");
  if (static_cast<std::size_t>(m.max_context) < data.seq_len())
    throw std::invalid_argument("model.max_context is shorter than the sequences");
  m.validate();
  return m;
}

double eval_loss(const ModelParams<float>& params, const TokenBatch& rows) {
  constexpr std::size_t kChunk = 256;
  double total = 0, weight = 0;
  for (std::size_t first = 0; first < rows.batch; first += kChunk) {
    const TokenBatch part = rows.rows(first, std::min(kChunk, rows.batch - first));
    const auto n = static_cast<double>(part.target_count());
    if (n == 0) continue;
    total += n * static_cast<double>(ntp_loss_value(params, part));
    weight += n;
  }
  if (weight == 0) throw std::invalid_argument("eval_loss: no target positions");
  return total / weight;
}

namespace {

// ---------------------------------------------------------------- sampling

class BatchSampler {
 public:
  BatchSampler(const DataUniverse& data, const std::vector<std::pair<std::string, double>>& weights,
               std::size_t train_sequences, const Rng& dataset_root)
      : data_(data) {
    for (const auto& [name, w] : weights) {
      if (w <= 0) continue;
      names_.push_back(name);
      weights_.push_back(w);
      if (train_sequences > 0) {
        Rng gen = dataset_root.split(data.index(name));
        TokenBatch rows = data.generate(name, train_sequences, gen);
        pools_.emplace_back(SequencePool(std::move(rows), gen.split(1)));
      }
    }
    if (names_.empty()) throw std::invalid_argument("no training source has positive weight");
  }

  TokenBatch next(std::size_t batch, Rng& rng) {
    if (names_.size() == 1) return draw(0, batch, rng);
    std::vector<std::size_t> counts(names_.size(), 0);
    for (std::size_t i = 0; i < batch; ++i) counts[rng.categorical(std::span<const double>(weights_))]++;
    TokenBatch out;
    for (std::size_t s = 0; s < names_.size(); ++s)
      if (counts[s]) out.append_rows(draw(s, counts[s], rng));
    return out;
  }

  /// Passes over the finite training set; 0 when data is generated online.
  double epochs() const {
    if (pools_.empty()) return 0;
    double served = 0, size = 0;
    for (const auto& p : pools_) {
      served += static_cast<double>(p.served());
      size += static_cast<double>(p.size());
    }
    return served / size;
  }

 private:
  TokenBatch draw(std::size_t s, std::size_t rows, Rng& rng) {
    if (!pools_.empty()) return pools_[s].next(rows);
    return data_.generate(names_[s], rows, rng);
  }

  const DataUniverse& data_;
  std::vector<std::string> names_;
  std::vector<double> weights_;
  std::vector<SequencePool> pools_;
};

class ReplayFeed {
 public:
  ReplayFeed(const FrozenReference<float>* ref, const DataUniverse& data, std::vector<std::string> priors,
             const ReplayConfig& cfg, std::size_t len, Rng rng)
      : ref_(ref), data_(data), priors_(std::move(priors)), cfg_(cfg), len_(len), rng_(std::move(rng)) {
    if (priors_.empty()) throw std::invalid_argument("replay needs at least one prior source");
    if (cfg_.source == ReplaySource::self_generated && !ref_)
      throw std::invalid_argument("self-generated replay needs a frozen reference");
    if (cfg_.source == ReplaySource::stored_real && len_ != data_.seq_len())
      throw std::invalid_argument("stored_real replay uses the corpus sequence length");
    if (cfg_.pool_size > 0)
      for (std::size_t i = 0; i < priors_.size(); ++i) {
        Rng gen = rng_.split(1000 + i);
        pools_.emplace_back(SequencePool(fresh(i, cfg_.pool_size, gen), gen.split(1)));
      }
  }

  TokenBatch next(std::size_t rows) {
    TokenBatch out;
    const std::size_t p = priors_.size();
    for (std::size_t i = 0; i < p; ++i) {
      const std::size_t n = rows / p + (i < rows % p ? 1 : 0);
      if (n == 0) continue;
      out.append_rows(pools_.empty() ? fresh(i, n, rng_) : pools_[i].next(n));
    }
    return out;
  }

 private:
  TokenBatch fresh(std::size_t i, std::size_t n, Rng& rng) const {
    if (cfg_.source == ReplaySource::stored_real) return data_.generate(priors_[i], n, rng);
    return sample_replay_rows(*ref_, data_.source_id(priors_[i]), n, len_, rng, cfg_.temperature);
  }

  const FrozenReference<float>* ref_;
  const DataUniverse& data_;
  std::vector<std::string> priors_;
  ReplayConfig cfg_;
  std::size_t len_;
  Rng rng_;
  std::vector<SequencePool> pools_;
};

// ---------------------------------------------------------------- loop

struct LoopInput {
  StoppingRule rule;
  std::int64_t first_step = 0;  // global step before the first update
  bool eval_at_start = true;
  BatchSampler* sampler = nullptr;
  Rng* train_rng = nullptr;
  ReplayFeed* replay = nullptr;
  const FrozenReference<float>* ref = nullptr;
  ReplayConfig replay_cfg;
  OptimizerConfig optimizer;
  std::size_t batch_size = 0;
  std::int64_t log_every = 10;
  std::int64_t crash_at_step = -1;
  std::function<double(std::int64_t)> evaluate;  // logs eval metrics, returns the target metric
};

struct LoopOutput {
  Outcome outcome = Outcome::completed;
  StopReason reason = StopReason::none;
  std::int64_t steps = 0;
  double epochs = 0;
};

struct StepLosses {
  double total = 0, downstream = 0;
  std::optional<double> replay;
};

std::vector<Tensor<float>> step_gradients(const ModelParams<float>& params, const LoopInput& in,
                                          const TokenBatch& down, const TokenBatch* replay, StepLosses& losses) {
  Tape<float> tape;
  const auto vars = bind_params(tape, params);
  const LossParts parts = total_loss(tape, params.config, vars, in.ref, down, replay, in.replay_cfg);
  const double total = tape.scalar(parts.total);
  if (!std::isfinite(total)) {
    const std::size_t at = tape.first_non_finite().value_or(parts.total.index);
    throw NonFiniteError(at, std::string(tape.node(at).op));
  }
  losses.total = total;
  losses.downstream = tape.scalar(parts.downstream);
  if (parts.replay) losses.replay = tape.scalar(*parts.replay);
  tape.backward(parts.total);
  std::vector<Tensor<float>> grads;
  grads.reserve(vars.size());
  for (Var v : vars) grads.push_back(tape.grad(v));
  return grads;
}

LoopOutput train_loop(ModelParams<float>& params, RunLog& log, const LoopInput& in) {
  LoopOutput out;
  auto state = OptimizerState<float>::zeros_like(params.tensors);
  std::vector<double> history;
  std::optional<ModelParams<float>> best;
  const bool early = in.rule.kind == StoppingRule::Kind::early_stopping;
  const std::size_t replay_rows =
      in.replay ? std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(in.batch_size * in.replay_cfg.batch_ratio)))
                : 0;

  auto evaluate = [&](std::int64_t local) {
    const double v = in.evaluate(in.first_step + local);
    log.add(in.first_step + local, "eval", kTargetMetric, v);
    history.push_back(v);
    if (early && v <= *std::min_element(history.begin(), history.end())) best = params;
    return should_stop(in.rule, history, in.sampler->epochs(), local);
  };
  auto finish = [&](const StopDecision& d, std::int64_t local) {
    out.reason = d.reason;
    out.steps = local;
    out.epochs = in.sampler->epochs();
    switch (d.reason) {
      case StopReason::target_reached: out.outcome = Outcome::converged; break;
      case StopReason::max_epochs_exceeded: out.outcome = Outcome::failed_to_converge; break;
      case StopReason::no_improvement: out.outcome = Outcome::early_stopped; break;
      default:
        out.outcome = in.rule.kind == StoppingRule::Kind::target_loss ? Outcome::failed_to_converge : Outcome::completed;
    }
    if (early && best) params = std::move(*best);
    return out;
  };

  if (in.eval_at_start) {
    const StopDecision d = evaluate(0);
    if (d.stop && d.reason != StopReason::steps_done) return finish(d, 0);
  }
  for (std::int64_t local = 1;; ++local) {
    const std::int64_t global = in.first_step + local;
    if (global == in.crash_at_step) {
      log.add(global, "train", "crash_injected", 1.0);
      std::abort();
    }
    const TokenBatch down = in.sampler->next(in.batch_size, *in.train_rng);
    std::optional<TokenBatch> replay;
    if (in.replay) replay = in.replay->next(replay_rows);
    StepLosses losses;
    std::vector<Tensor<float>> grads;
    try {
      grads = step_gradients(params, in, down, replay ? &*replay : nullptr, losses);
    } catch (const NonFiniteError& e) {
      log.add(global, "train", "diverged", 1.0);
      out.outcome = Outcome::diverged;
      out.reason = StopReason::none;
      out.steps = local - 1;
      out.epochs = in.sampler->epochs();
      return out;
    }
    const double lr = lr_at(in.optimizer, local);
    adamw_step<float>(params.tensors, grads, state, in.optimizer, lr);

    if (local == 1 || local % in.log_every == 0) {
      log.add(global, "train", "loss", losses.total);
      log.add(global, "train", "loss_downstream", losses.downstream);
      if (losses.replay) log.add(global, "train", "loss_replay", *losses.replay);
      log.add(global, "train", "lr", lr);
    }
    const bool cap = in.rule.steps > 0 && local >= in.rule.steps;
    if (local % in.rule.eval_every == 0 || cap) {
      const StopDecision d = evaluate(local);
      if (d.stop) return finish(d, local);
    }
  }
}

// ---------------------------------------------------------------- run plumbing

struct RunFiles {
  std::string dir;
  explicit RunFiles(std::string d) : dir(std::move(d)) {
    if (!dir.empty()) fs::create_directories(dir);
  }
  std::string path(const char* name) const { return dir.empty() ? "" : (fs::path(dir) / name).string(); }
};

void finalize(RunResult& result, const RunConfig& config, const RunFiles& files, const LoopOutput& loop,
              std::clock_t cpu_start, std::chrono::steady_clock::time_point wall_start) {
  auto& s = result.log.summary;
  s.name = config.name;
  s.kind = std::string(to_string(config.kind));
  s.config_hash = config_hash(config);
  s.version = version_string();
  s.outcome = loop.outcome;
  s.stop_reason = std::string(to_string(loop.reason));
  s.steps = loop.steps;
  s.epochs = loop.epochs;
  if (s.target) s.steps_to_target = steps_to_target(result.log);
  s.cpu_ms = 1000.0 * static_cast<double>(std::clock() - cpu_start) / CLOCKS_PER_SEC;
  s.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - wall_start).count();
  for (const auto& r : result.log.records())
    if (r.split == "eval" || r.metric == "loss") s.final_metrics[r.split + "/" + r.metric] = r.value;
  if (!files.dir.empty()) {
    save_checkpoint(files.path("final.ckpt"), result.params);
    std::ofstream out(files.path("run.json"));
    out << s.to_json().dump(2) << "\n";
  }
}

LoopInput base_loop(const RunConfig& config) {
  LoopInput in;
  in.rule = config.stopping.rule;
  in.optimizer = effective_optimizer(config);
  in.batch_size = config.batch_size;
  in.log_every = config.log_every;
  in.crash_at_step = config.crash_at_step;
  in.replay_cfg = config.replay;
  return in;
}

void check_terminates(const RunConfig& config) {
  const auto& r = config.stopping.rule;
  if (r.kind != StoppingRule::Kind::fixed_steps && r.steps <= 0 && config.data.train_sequences == 0)
    throw std::invalid_argument("config: target_loss and early_stopping runs on online data need stopping.steps as a cap");
}

}  // namespace

// ---------------------------------------------------------------- runs

RunResult run_pretrain(const RunConfig& config, const std::string& out_dir) {
  config.validate();
  check_terminates(config);
  const auto cpu_start = std::clock();
  const auto wall_start = std::chrono::steady_clock::now();
  const DataUniverse data(config.data);
  const ModelConfig model = resolve_model(config, data);
  RunFiles files(out_dir);
  if (!out_dir.empty()) save_run_config(config, files.path("config.json"));

  std::vector<std::pair<std::string, double>> weights;
  if (config.data.mixture.empty()) {
    weights.emplace_back(data.sources().front(), 1.0);
  } else {
    for (const auto& [name, w] : config.data.mixture) {
      data.index(name);
      weights.emplace_back(name, w);
    }
  }
  double weight_sum = 0, entropy = 0;
  for (const auto& [name, w] : weights) {
    weight_sum += w;
    entropy += w * data.entropy_rate(name);
  }
  if (!(weight_sum > 0)) throw std::invalid_argument("config: mixture weights sum to zero");

  RunResult result{init_params<float>(model, Rng(config.seed).split(kInitStream).seed()), RunLog(files.path("metrics.jsonl"))};
  auto& log = result.log;
  if (config.stopping.rule.kind == StoppingRule::Kind::target_loss) {
    log.summary.target = config.stopping.rule.target;
    if (config.stopping.target_above_entropy) {
      if (data.is_tasks()) throw std::invalid_argument("config: entropy-anchored targets need Markov sources");
      log.summary.target = entropy / weight_sum + *config.stopping.target_above_entropy;
    }
  }
  StoppingRule rule = config.stopping.rule;
  if (log.summary.target) rule.target = *log.summary.target;

  const auto sets = eval_sets(data, config);
  BatchSampler sampler(data, weights, config.data.train_sequences, Rng(config.seed).split(kDatasetStream));
  Rng train_rng = Rng(config.seed).split(kTrainStream);
  LoopInput in = base_loop(config);
  in.rule = rule;
  in.sampler = &sampler;
  in.train_rng = &train_rng;
  in.evaluate = [&](std::int64_t step) {
    double mixed = 0;
    for (std::size_t i = 0; i < sets.size(); ++i) {
      const double l = eval_loss(result.params, sets[i]);
      log.add(step, "eval", "loss/" + data.sources()[i], l);
      for (const auto& [name, w] : weights)
        if (name == data.sources()[i]) mixed += w * l;
    }
    return mixed / weight_sum;
  };
  const LoopOutput loop = train_loop(result.params, log, in);
  finalize(result, config, files, loop, cpu_start, wall_start);
  return result;
}

RunResult run_finetune(const RunConfig& config, const std::string& out_dir) {
  if (config.base_checkpoint.empty()) throw std::invalid_argument("config: finetune runs need base_checkpoint");
  return run_finetune(load_checkpoint(config.base_checkpoint), config, out_dir);
}

RunResult run_finetune(const ModelParams<float>& base, const RunConfig& config, const std::string& out_dir) {
  config.validate();
  check_terminates(config);
  const auto cpu_start = std::clock();
  const auto wall_start = std::chrono::steady_clock::now();
  const DataUniverse data(config.data);
  if (base.config.vocab_size != static_cast<int>(data.vocab().size()))
    throw std::invalid_argument("base checkpoint vocabulary (" + std::to_string(base.config.vocab_size) +
                                ") does not match the data sources (" + std::to_string(data.vocab().size()) + ")");
  if (static_cast<std::size_t>(base.config.max_context) < data.seq_len())
    throw std::invalid_argument("base checkpoint context is shorter than the sequences");
  RunFiles files(out_dir);
  if (!out_dir.empty()) save_run_config(config, files.path("config.json"));

  const std::string& downstream = config.data.downstream;
  data.index(downstream);
  std::vector<std::string> priors = config.data.prior;
  if (priors.empty())
    for (const auto& s : data.sources())
      if (s != downstream) priors.push_back(s);
  for (const auto& p : priors) data.index(p);

  RunResult result{base, RunLog(files.path("metrics.jsonl"))};
  auto& log = result.log;
  StoppingRule rule = config.stopping.rule;
  if (rule.kind == StoppingRule::Kind::target_loss) {
    log.summary.target = rule.target;
    if (config.stopping.target_above_entropy) {
      if (data.is_tasks()) throw std::invalid_argument("config: entropy-anchored targets need Markov sources");
      log.summary.target = data.entropy_rate(downstream) + *config.stopping.target_above_entropy;
    }
    rule.target = *log.summary.target;
  }

  std::vector<std::int32_t> prior_ids;
  for (const auto& p : priors) prior_ids.push_back(data.source_id(p));
  const FrozenReference<float> ref(base, 0, prior_ids);
  std::optional<ReplayFeed> feed;
  if (config.replay.enabled()) {
    const std::size_t len = config.replay.sample_length ? config.replay.sample_length : data.seq_len();
    feed.emplace(&ref, data, priors, config.replay, len, Rng(config.seed).split(kReplayStream));
  }

  const auto sets = eval_sets(data, config);
  BatchSampler sampler(data, {{downstream, 1.0}}, config.data.train_sequences, Rng(config.seed).split(kDatasetStream));
  Rng train_rng = Rng(config.seed).split(kTrainStream);
  std::map<std::string, double> start_loss;
  LoopInput in = base_loop(config);
  in.rule = rule;
  in.sampler = &sampler;
  in.train_rng = &train_rng;
  in.replay = feed ? &*feed : nullptr;
  in.ref = &ref;
  in.evaluate = [&](std::int64_t step) {
    double target_metric = 0;
    for (std::size_t i = 0; i < sets.size(); ++i) {
      const std::string& name = data.sources()[i];
      const double l = eval_loss(result.params, sets[i]);
      log.add(step, "eval", "loss/" + name, l);
      if (!start_loss.count(name)) start_loss[name] = l;
      if (std::find(priors.begin(), priors.end(), name) != priors.end())
        log.add(step, "eval", "forgetting/" + name, l - start_loss[name]);
      if (name == downstream) target_metric = l;
    }
    return target_metric;
  };
  const LoopOutput loop = train_loop(result.params, log, in);
  finalize(result, config, files, loop, cpu_start, wall_start);
  return result;
}

RunResult run_curriculum(const RunConfig& config, const std::string& out_dir) {
  config.validate();
  const auto cpu_start = std::clock();
  const auto wall_start = std::chrono::steady_clock::now();
  const DataUniverse data(config.data);
  const ModelConfig model = resolve_model(config, data);
  RunFiles files(out_dir);
  if (!out_dir.empty()) save_run_config(config, files.path("config.json"));

  std::vector<Task> tasks;
  for (const auto& name : config.data.tasks) tasks.push_back(parse_task(name));

  std::vector<std::vector<TaskExample>> eval_examples;
  for (Task t : tasks) eval_examples.push_back(task_eval_examples(data, config, t));

  RunResult result{init_params<float>(model, Rng(config.seed).split(kInitStream).seed()), RunLog(files.path("metrics.jsonl"))};
  auto& log = result.log;
  auto evaluate = [&](std::int64_t step) {
    double mean = 0;
    for (std::size_t k = 0; k < tasks.size(); ++k) {
      const double acc = exact_match(result.params, eval_examples[k]);
      log.add(step, "eval", "accuracy/" + config.data.tasks[k], acc);
      mean += acc;
    }
    return 1.0 - mean / static_cast<double>(tasks.size());
  };

  LoopOutput total;
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    const std::int64_t first = static_cast<std::int64_t>(k) * config.curriculum.steps_per_task;
    log.add(first, "phase", "task_index", static_cast<double>(k));

    std::optional<FrozenReference<float>> ref;
    std::optional<ReplayFeed> feed;
    if (k > 0 && config.replay.enabled()) {
      std::vector<std::string> priors(config.data.tasks.begin(), config.data.tasks.begin() + static_cast<std::ptrdiff_t>(k));
      std::vector<std::int32_t> ids;
      for (const auto& p : priors) ids.push_back(data.source_id(p));
      ref.emplace(result.params, first, ids);
      const std::size_t len = config.replay.sample_length ? config.replay.sample_length : data.seq_len();
      feed.emplace(&*ref, data, priors, config.replay, len, Rng(config.seed).split(kReplayStream + k));
    }
    BatchSampler sampler(data, {{config.data.tasks[k], 1.0}}, config.data.train_sequences,
                         Rng(config.seed).split(kDatasetStream));
    Rng train_rng = Rng(config.seed).split(kTrainStream + k);
    LoopInput in = base_loop(config);
    in.rule = StoppingRule::fixed(config.curriculum.steps_per_task, config.curriculum.eval_every);
    in.first_step = first;
    in.eval_at_start = k == 0;
    in.sampler = &sampler;
    in.train_rng = &train_rng;
    in.replay = feed ? &*feed : nullptr;
    in.ref = ref ? &*ref : nullptr;
    if (!feed) in.replay_cfg = ReplayConfig{};  // first task: nothing to replay yet
    in.evaluate = evaluate;
    const LoopOutput phase = train_loop(result.params, log, in);
    total.steps += phase.steps;
    total.epochs = phase.epochs;
    total.outcome = phase.outcome;
    total.reason = phase.reason;
    if (phase.outcome == Outcome::diverged) break;
  }
  finalize(result, config, files, total, cpu_start, wall_start);
  return result;
}

RunResult run_config(const RunConfig& config, const std::string& out_dir) {
  switch (config.kind) {
    case RunKind::pretrain: return run_pretrain(config, out_dir);
    case RunKind::finetune: return run_finetune(config, out_dir);
    case RunKind::curriculum: return run_curriculum(config, out_dir);
  }
  throw std::logic_error("unreachable run kind");
}

std::vector<TokenBatch> eval_sets(const DataUniverse& data, const RunConfig& config) {
  const Rng root = Rng(config.seed).split(kEvalStream);
  std::vector<TokenBatch> sets;
  for (std::size_t i = 0; i < data.sources().size(); ++i) {
    Rng rng = root.split(i);
    sets.push_back(data.generate(data.sources()[i], config.data.eval_sequences, rng));
  }
  return sets;
}

std::vector<TaskExample> task_eval_examples(const DataUniverse& data, const RunConfig& config, Task task) {
  Rng rng = Rng(config.seed).split(kTaskEvalStream).split(static_cast<std::uint64_t>(task));
  std::vector<TaskExample> ex;
  for (std::size_t i = 0; i < config.curriculum.eval_examples; ++i) ex.push_back(gen_example(data.vocab(), task, rng));
  return ex;
}

double exact_match(const ModelParams<float>& params, std::span<const TaskExample> examples) {
  if (examples.empty()) throw std::invalid_argument("exact_match: no examples");
  const LogitsFn logits = [&](std::span<const std::int32_t> tokens, std::size_t b, std::size_t len) {
    return forward_logits(params, tokens, b, len);
  };
  const auto answers = greedy_answers(logits, examples);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < answers.size(); ++i) hits += answers[i] == examples[i].answer;
  return static_cast<double>(hits) / static_cast<double>(answers.size());
}

nlohmann::json evaluate(const ModelParams<float>& params, const RunConfig& config) {
  const DataUniverse data(config.data);
  if (params.config.vocab_size != static_cast<int>(data.vocab().size()))
    throw std::invalid_argument("evaluate: checkpoint vocabulary (" + std::to_string(params.config.vocab_size) +
                                ") does not match the data config (" + std::to_string(data.vocab().size()) + ")");
  nlohmann::json out;
  const auto sets = eval_sets(data, config);
  for (std::size_t i = 0; i < sets.size(); ++i) out["loss"][data.sources()[i]] = eval_loss(params, sets[i]);
  if (data.is_tasks())
    for (const auto& name : config.data.tasks)
      out["accuracy"][name] = exact_match(params, task_eval_examples(data, config, parse_task(name)));
  return out;
}

}  // namespace sr
