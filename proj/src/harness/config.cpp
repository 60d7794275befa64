// SPDX-License-Identifier: Apache-2.0

#include "sr/harness/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace sr {

using nlohmann::json;

namespace {

// Reads an object's fields, rejecting anything not consumed.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw std::invalid_argument("config: " + where() + " must be an object");
  }

  template <class T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception& e) {
      throw std::invalid_argument("config: bad value for " + path_ + key + ": " + e.what());
    }
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string child(const char* key) const { return path_ + key + "."; }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw std::invalid_argument("config: unknown key " + path_ + k);
  }

 private:
  std::string where() const { return path_.empty() ? "root" : path_.substr(0, path_.size() - 1); }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

RunKind parse_kind(const std::string& s) {
  if (s == "pretrain") return RunKind::pretrain;
  if (s == "finetune") return RunKind::finetune;
  if (s == "curriculum") return RunKind::curriculum;
  throw std::invalid_argument("config: unknown run kind '" + s + "'");
}

std::string stop_kind_name(StoppingRule::Kind k) {
  switch (k) {
    case StoppingRule::Kind::fixed_steps: return "fixed_steps";
    case StoppingRule::Kind::target_loss: return "target_loss";
    case StoppingRule::Kind::early_stopping: return "early_stopping";
  }
  return "?";
}

StoppingRule::Kind parse_stop_kind(const std::string& s) {
  if (s == "fixed_steps") return StoppingRule::Kind::fixed_steps;
  if (s == "target_loss") return StoppingRule::Kind::target_loss;
  if (s == "early_stopping") return StoppingRule::Kind::early_stopping;
  throw std::invalid_argument("config: unknown stopping kind '" + s + "'");
}

}  // namespace

std::string_view to_string(RunKind kind) {
  switch (kind) {
    case RunKind::pretrain: return "pretrain";
    case RunKind::finetune: return "finetune";
    case RunKind::curriculum: return "curriculum";
  }
  return "?";
}

std::vector<MarkovSpec> effective_corpora(const DataConfig& data) {
  if (!data.corpora.empty()) return data.corpora;
  MarkovSpec a, b;
  a.name = "lang-A";
  a.stream = 1;
  b.name = "lang-B";
  b.stream = 2;
  return {a, b};
}

OptimizerConfig effective_optimizer(const RunConfig& config) {
  OptimizerConfig o = config.optimizer;
  if (o.schedule == Schedule::cosine && o.total_steps == 0)
    o.total_steps = config.kind == RunKind::curriculum ? config.curriculum.steps_per_task : config.stopping.rule.steps;
  return o;
}

void RunConfig::validate() const {
  ModelConfig m = model;
  if (m.vocab_size == 0) m.vocab_size = 1;
  m.validate();
  effective_optimizer(*this).validate();
  replay.validate();
  if (batch_size == 0) throw std::invalid_argument("config: batch_size must be positive");
  if (log_every <= 0) throw std::invalid_argument("config: log_every must be positive");
  if (stopping.rule.eval_every <= 0) throw std::invalid_argument("config: stopping.eval_every must be positive");
  if (data.kind != "markov" && data.kind != "tasks")
    throw std::invalid_argument("config: data.kind must be markov or tasks");
  if (data.kind == "markov" && data.seq_len < 2) throw std::invalid_argument("config: data.seq_len must be >= 2");
  if (data.eval_sequences == 0) throw std::invalid_argument("config: data.eval_sequences must be positive");
  for (const auto& [name, w] : data.mixture)
    if (!(w >= 0)) throw std::invalid_argument("config: mixture weight for " + name + " must be >= 0");
  if (kind == RunKind::finetune && data.downstream.empty())
    throw std::invalid_argument("config: finetune runs need data.downstream");
  if (kind == RunKind::curriculum) {
    if (data.kind != "tasks") throw std::invalid_argument("config: curriculum runs need data.kind = tasks");
    if (data.tasks.empty()) throw std::invalid_argument("config: curriculum needs at least one task");
    if (curriculum.steps_per_task <= 0 || curriculum.eval_every <= 0 || curriculum.eval_examples == 0)
      throw std::invalid_argument("config: curriculum steps, cadence and eval size must be positive");
  }
  const bool fixed = stopping.rule.kind == StoppingRule::Kind::fixed_steps;
  if (fixed && stopping.rule.steps <= 0) throw std::invalid_argument("config: fixed_steps needs steps > 0");
  if (stopping.rule.kind == StoppingRule::Kind::target_loss && !stopping.target_above_entropy &&
      !(stopping.rule.target > 0))
    throw std::invalid_argument("config: target_loss needs stopping.target or stopping.target_above_entropy");
}

json to_json(const RunConfig& c) {
  json j;
  j["kind"] = std::string(to_string(c.kind));
  j["name"] = c.name;
  j["seed"] = c.seed;
  j["batch_size"] = c.batch_size;
  j["log_every"] = c.log_every;
  j["base_checkpoint"] = c.base_checkpoint;
  j["crash_at_step"] = c.crash_at_step;
  j["model"] = {{"n_layers", c.model.n_layers}, {"d_model", c.model.d_model},   {"n_heads", c.model.n_heads},
                {"d_head", c.model.d_head},     {"d_ff", c.model.d_ff},         {"vocab_size", c.model.vocab_size},
                {"max_context", c.model.max_context}};
  json corpora = json::array();
  for (const auto& m : c.data.corpora)
    corpora.push_back(
        {{"name", m.name}, {"kind", m.kind}, {"states", m.states}, {"alpha", m.alpha}, {"stream", m.stream}});
  j["data"] = {{"kind", c.data.kind},
               {"corpora_seed", c.data.corpora_seed},
               {"corpora", corpora},
               {"mixture", c.data.mixture},
               {"downstream", c.data.downstream},
               {"prior", c.data.prior},
               {"tasks", c.data.tasks},
               {"seq_len", c.data.seq_len},
               {"train_sequences", c.data.train_sequences},
               {"eval_sequences", c.data.eval_sequences}};
  j["optimizer"] = {{"peak_lr", c.optimizer.peak_lr},
                    {"beta1", c.optimizer.beta1},
                    {"beta2", c.optimizer.beta2},
                    {"eps", c.optimizer.eps},
                    {"weight_decay", c.optimizer.weight_decay},
                    {"warmup_steps", c.optimizer.warmup_steps},
                    {"schedule", c.optimizer.schedule == Schedule::cosine ? "cosine" : "constant"},
                    {"total_steps", c.optimizer.total_steps}};
  const auto& r = c.stopping.rule;
  j["stopping"] = {{"kind", stop_kind_name(r.kind)}, {"steps", r.steps},           {"target", r.target},
                   {"eval_every", r.eval_every},     {"max_epochs", r.max_epochs}, {"patience", r.patience},
                   {"target_above_entropy", nullptr}};
  if (c.stopping.target_above_entropy) j["stopping"]["target_above_entropy"] = *c.stopping.target_above_entropy;
  j["replay"] = {{"objective", std::string(to_string(c.replay.objective))},
                 {"lambda", c.replay.lambda},
                 {"source", std::string(to_string(c.replay.source))},
                 {"batch_ratio", c.replay.batch_ratio},
                 {"mixed_batch", c.replay.mixed_batch},
                 {"temperature", c.replay.temperature},
                 {"sample_length", c.replay.sample_length},
                 {"pool_size", c.replay.pool_size}};
  j["curriculum"] = {{"steps_per_task", c.curriculum.steps_per_task},
                     {"eval_every", c.curriculum.eval_every},
                     {"eval_examples", c.curriculum.eval_examples}};
  return j;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  Fields root(j, "");
  std::string kind = "pretrain";
  root.read("kind", kind);
  c.kind = parse_kind(kind);
  root.read("name", c.name);
  root.read("seed", c.seed);
  root.read("batch_size", c.batch_size);
  root.read("log_every", c.log_every);
  root.read("base_checkpoint", c.base_checkpoint);
  root.read("crash_at_step", c.crash_at_step);

  if (const json* m = root.sub("model")) {
    Fields f(*m, root.child("model"));
    f.read("n_layers", c.model.n_layers);
    f.read("d_model", c.model.d_model);
    f.read("n_heads", c.model.n_heads);
    f.read("d_head", c.model.d_head);
    f.read("d_ff", c.model.d_ff);
    f.read("vocab_size", c.model.vocab_size);
    f.read("max_context", c.model.max_context);
    f.finish();
  }
  if (const json* d = root.sub("data")) {
    Fields f(*d, root.child("data"));
    f.read("kind", c.data.kind);
    f.read("corpora_seed", c.data.corpora_seed);
    if (const json* list = f.sub("corpora")) {
      if (!list->is_array()) throw std::invalid_argument("config: data.corpora must be an array");
      for (std::size_t i = 0; i < list->size(); ++i) {
        Fields g((*list)[i], "data.corpora[" + std::to_string(i) + "].");
        MarkovSpec s;
        s.stream = i + 1;
        g.read("name", s.name);
        g.read("kind", s.kind);
        g.read("states", s.states);
        g.read("alpha", s.alpha);
        g.read("stream", s.stream);
        g.finish();
        if (s.name.empty()) throw std::invalid_argument("config: data.corpora entries need a name");
        c.data.corpora.push_back(s);
      }
    }
    f.read("mixture", c.data.mixture);
    f.read("downstream", c.data.downstream);
    f.read("prior", c.data.prior);
    f.read("tasks", c.data.tasks);
    f.read("seq_len", c.data.seq_len);
    f.read("train_sequences", c.data.train_sequences);
    f.read("eval_sequences", c.data.eval_sequences);
    f.finish();
  }
  if (const json* o = root.sub("optimizer")) {
    Fields f(*o, root.child("optimizer"));
    f.read("peak_lr", c.optimizer.peak_lr);
    f.read("beta1", c.optimizer.beta1);
    f.read("beta2", c.optimizer.beta2);
    f.read("eps", c.optimizer.eps);
    f.read("weight_decay", c.optimizer.weight_decay);
    f.read("warmup_steps", c.optimizer.warmup_steps);
    std::string sched = "constant";
    f.read("schedule", sched);
    if (sched == "cosine")
      c.optimizer.schedule = Schedule::cosine;
    else if (sched == "constant")
      c.optimizer.schedule = Schedule::constant;
    else
      throw std::invalid_argument("config: optimizer.schedule must be cosine or constant");
    f.read("total_steps", c.optimizer.total_steps);
    f.finish();
  }
  if (const json* s = root.sub("stopping")) {
    Fields f(*s, root.child("stopping"));
    std::string k = "fixed_steps";
    f.read("kind", k);
    auto& r = c.stopping.rule;
    r.kind = parse_stop_kind(k);
    f.read("steps", r.steps);
    f.read("target", r.target);
    f.read("eval_every", r.eval_every);
    f.read("max_epochs", r.max_epochs);
    f.read("patience", r.patience);
    if (const json* t = f.sub("target_above_entropy"); t && !t->is_null()) {
      if (!t->is_number()) throw std::invalid_argument("config: stopping.target_above_entropy must be a number");
      c.stopping.target_above_entropy = t->get<double>();
    }
    f.finish();
  }
  if (const json* r = root.sub("replay")) {
    Fields f(*r, root.child("replay"));
    std::string obj = "kl", src = "self_generated";
    f.read("objective", obj);
    f.read("source", src);
    c.replay.objective = parse_replay_objective(obj);
    c.replay.source = parse_replay_source(src);
    f.read("lambda", c.replay.lambda);
    f.read("batch_ratio", c.replay.batch_ratio);
    f.read("mixed_batch", c.replay.mixed_batch);
    f.read("temperature", c.replay.temperature);
    f.read("sample_length", c.replay.sample_length);
    f.read("pool_size", c.replay.pool_size);
    f.finish();
  }
  if (const json* cu = root.sub("curriculum")) {
    Fields f(*cu, root.child("curriculum"));
    f.read("steps_per_task", c.curriculum.steps_per_task);
    f.read("eval_every", c.curriculum.eval_every);
    f.read("eval_examples", c.curriculum.eval_examples);
    f.finish();
  }
  root.finish();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument("config " + path + ": " + e.what());
  }
  return run_config_from_json(j);
}

void save_run_config(const RunConfig& config, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << to_json(config).dump(2) << "\n";
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw std::invalid_argument("override must look like key.path=value: " + assignment);
  const std::string path = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  std::string pointer = "/";
  for (char ch : path) pointer += ch == '.' ? '/' : ch;
  j[json::json_pointer(pointer)] = value;
}

std::string config_hash(const RunConfig& config) {
  const std::string text = to_json(config).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream out;
  out << std::hex;
  out.width(16);
  out.fill('0');
  out << h;
  return out.str();
}

}  // namespace sr
