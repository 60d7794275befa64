// SPDX-License-Identifier: Apache-2.0
//
// Command line front end: training runs, sweeps, evaluation, sampling and
// the MLP toy. Run `sr <command> --help` for the flags of each command.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sr/harness/runner.hpp"
#include "sr/harness/sweep.hpp"
#include "sr/model/checkpoint.hpp"
#include "sr/replay/replay.hpp"
#include "sr/toy/mlp_toy.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::optional<std::uint64_t> seed;
  std::string out_dir;
};

void add_common(CLI::App* cmd, Common& c, bool out_required = false) {
  cmd->add_option("--seed", c.seed, "Random seed (overrides the config)");
  auto* o = cmd->add_option("--out-dir", c.out_dir, "Output directory");
  if (out_required) o->required();
}

struct RunOptions {
  Common common;
  std::string config;
  std::vector<std::string> sets;
  std::optional<double> lr;
  std::optional<double> lambda;
  std::optional<std::int64_t> steps;
  std::string base;
};

// Config file (or defaults) + --set overrides + shortcut flags.
sr::RunConfig build_config(const RunOptions& o, std::optional<sr::RunKind> kind) {
  json j = sr::to_json(sr::RunConfig{});
  if (!o.config.empty()) {
    std::ifstream in(o.config);
    if (!in) throw std::runtime_error("cannot open config " + o.config);
    in >> j;
  }
  if (kind) j["kind"] = std::string(sr::to_string(*kind));
  for (const auto& s : o.sets) sr::apply_override(j, s);
  if (o.common.seed) j["seed"] = *o.common.seed;
  if (o.lr) j["optimizer"]["peak_lr"] = *o.lr;
  if (o.lambda) j["replay"]["lambda"] = *o.lambda;
  if (o.steps) {
    if (j.value("kind", "pretrain") == "curriculum")
      j["curriculum"]["steps_per_task"] = *o.steps;
    else
      j["stopping"]["steps"] = *o.steps;
  }
  if (!o.base.empty()) j["base_checkpoint"] = o.base;
  auto cfg = sr::run_config_from_json(j);
  cfg.validate();
  return cfg;
}

void add_run_flags(CLI::App* cmd, RunOptions& o) {
  add_common(cmd, o.common);
  cmd->add_option("-c,--config", o.config, "Run config JSON")->check(CLI::ExistingFile);
  cmd->add_option("--set", o.sets, "Override a config field, e.g. --set replay.lambda=0.5");
  cmd->add_option("--lr", o.lr, "Peak learning rate");
  cmd->add_option("--lambda", o.lambda, "Replay loss weight");
  cmd->add_option("--steps", o.steps, "Step cap (steps per task for curricula)");
}

int do_run(const RunOptions& o, sr::RunKind kind) {
  const auto cfg = build_config(o, kind);
  if (!o.common.out_dir.empty()) fs::create_directories(o.common.out_dir);
  const auto r = sr::run_config(cfg, o.common.out_dir);
  std::cout << r.log.summary.to_json().dump(2) << "\n";
  return 0;
}

struct ModelOptions {
  RunOptions run;
  std::string checkpoint;
  std::string source;
  std::size_t count = 8;
  std::size_t length = 0;
  double temperature = 1.0;
};

void write_or_print(const std::string& out_dir, const std::string& file, const json& j) {
  if (out_dir.empty()) {
    std::cout << j.dump(2) << "\n";
    return;
  }
  fs::create_directories(out_dir);
  std::ofstream(fs::path(out_dir) / file) << j.dump(2) << "\n";
  std::cout << (fs::path(out_dir) / file).string() << "\n";
}

int do_eval(const ModelOptions& o) {
  const auto cfg = build_config(o.run, std::nullopt);
  const auto params = sr::load_checkpoint(o.checkpoint);
  json out = sr::evaluate(params, cfg);
  out["checkpoint"] = o.checkpoint;
  out["seed"] = cfg.seed;
  write_or_print(o.run.common.out_dir, "eval.json", out);
  return 0;
}

std::string pick_source(const sr::DataUniverse& data, const std::string& requested) {
  if (!requested.empty()) {
    data.index(requested);  // throws on unknown names
    return requested;
  }
  return data.sources().front();
}

void print_rows(const sr::DataUniverse& data, const sr::TokenBatch& rows, const std::string& out_dir,
                const std::string& file) {
  std::ostringstream text;
  for (std::size_t b = 0; b < rows.batch; ++b) {
    std::vector<std::int32_t> row(rows.tokens.begin() + static_cast<std::ptrdiff_t>(b * rows.len),
                                  rows.tokens.begin() + static_cast<std::ptrdiff_t>((b + 1) * rows.len));
    text << data.vocab().detokenize(row, true) << "\n";
  }
  if (out_dir.empty()) {
    std::cout << text.str();
  } else {
    fs::create_directories(out_dir);
    std::ofstream(fs::path(out_dir) / file) << text.str();
    std::cout << (fs::path(out_dir) / file).string() << "\n";
  }
}

int do_sample(const ModelOptions& o) {
  const auto cfg = build_config(o.run, std::nullopt);
  const sr::DataUniverse data(cfg.data);
  auto params = sr::load_checkpoint(o.checkpoint);
  if (params.config.vocab_size != static_cast<int>(data.vocab().size()))
    throw std::invalid_argument("sample: checkpoint vocabulary does not match the data config");
  const std::string source = pick_source(data, o.source);
  const std::size_t len = o.length ? o.length : data.seq_len();
  const sr::FrozenReference<float> ref(std::move(params), 0, {});
  sr::Rng rng(cfg.seed);
  const auto rows = sr::sample_replay_rows(ref, data.source_id(source), o.count, len, rng, o.temperature);
  print_rows(data, rows, o.run.common.out_dir, "samples.txt");
  return 0;
}

int do_sample_data(const ModelOptions& o) {
  const auto cfg = build_config(o.run, std::nullopt);
  const sr::DataUniverse data(cfg.data);
  const std::string source = pick_source(data, o.source);
  sr::Rng rng(cfg.seed);
  print_rows(data, data.generate(source, o.count, rng), o.run.common.out_dir, "data.txt");
  return 0;
}

struct SweepOptions {
  Common common;
  std::string spec;
  int parallel = 0;
};

int do_sweep(const SweepOptions& o) {
  auto spec = sr::load_sweep_spec(o.spec);
  if (o.common.seed) spec.base["seed"] = *o.common.seed;
  const auto entries = sr::run_sweep(spec, o.common.out_dir, o.parallel);
  int failed = 0;
  for (const auto& e : entries) {
    std::printf("%3zu  %-24s  %-7s  %s\n", e.index, e.name.c_str(), e.status.c_str(),
                e.status == "ok" ? e.summary.value("outcome", "").c_str() : e.detail.c_str());
    failed += e.status != "ok";
  }
  std::printf("manifest: %s\n", (fs::path(o.common.out_dir) / "manifest.json").string().c_str());
  return failed ? 1 : 0;
}

struct MlpOptions {
  Common common;
  std::size_t seeds = 8;
  std::vector<double> lambdas = {0.0, 1.0};
  std::vector<std::string> sets;
};

json trace_json(const std::vector<sr::ToyTracePoint>& trace) {
  json t = json::array();
  for (const auto& p : trace)
    t.push_back({{"step", p.step}, {"old_mse", p.old_mse}, {"new_mse", p.new_mse}, {"drift", p.drift}});
  return t;
}

json band_json(const sr::ToyBand& b) {
  return {{"predictions", b.predictions}, {"p25", b.p25}, {"p50", b.p50}, {"p75", b.p75}};
}

int do_mlp_demo(const MlpOptions& o) {
  if (o.seeds < 4) throw std::invalid_argument("mlp-demo: needs at least 4 seeds");
  json cj = sr::ToyConfig{}.to_json();
  sr::ToyConfig cfg;
  for (const auto& s : o.sets) {
    json flat = {{"hidden", cfg.hidden}, {"pretrain_steps", cfg.pretrain_steps},
                 {"finetune_steps", cfg.finetune_steps}, {"peak_lr", cfg.optimizer.peak_lr},
                 {"noise", cfg.noise}, {"data_seed", cfg.data_seed}};
    sr::apply_override(flat, s);
    if (flat.size() != 6) throw std::invalid_argument("mlp-demo: unknown field in --set " + s);
    cfg.hidden = flat["hidden"];
    cfg.pretrain_steps = flat["pretrain_steps"];
    cfg.finetune_steps = flat["finetune_steps"];
    cfg.optimizer.peak_lr = flat["peak_lr"];
    cfg.noise = flat["noise"];
    cfg.data_seed = flat["data_seed"];
  }
  cfg.validate();
  const std::uint64_t first = o.common.seed.value_or(0);
  const auto grid = sr::toy_grid(cfg);

  std::vector<std::vector<double>> pre_preds;
  std::vector<std::vector<std::vector<double>>> ft_preds(o.lambdas.size());
  json runs = json::array();
  for (std::size_t s = 0; s < o.seeds; ++s) {
    const std::uint64_t seed = first + s;
    const auto pre = sr::toy_pretrain(cfg, seed);
    pre_preds.push_back(pre.params.predict(grid));
    json per = {{"seed", seed}, {"pretrain", trace_json(pre.trace)}, {"finetune", json::object()}};
    for (std::size_t l = 0; l < o.lambdas.size(); ++l) {
      const auto ft = sr::toy_finetune(pre.params, cfg, o.lambdas[l]);
      ft_preds[l].push_back(ft.params.predict(grid));
      per["finetune"][json(o.lambdas[l]).dump()] = trace_json(ft.trace);
      const auto& a = ft.trace.front();
      const auto& b = ft.trace.back();
      std::printf("seed %llu  lambda %-6g  old mse %.4g -> %.4g  new mse %.4g  drift %.3g\n",
                  static_cast<unsigned long long>(seed), o.lambdas[l], a.old_mse, b.old_mse, b.new_mse, b.drift);
    }
    runs.push_back(per);
  }

  json out;
  out["metadata"] = cfg.to_json();
  out["x"] = grid;
  out["target"] = [&] {
    std::vector<double> y;
    for (double x : grid) y.push_back(sr::toy_target(x));
    return y;
  }();
  for (auto region : {sr::ToyRegion::old_region, sr::ToyRegion::new_region}) {
    const auto d = sr::make_toy_dataset(cfg, region);
    out["data"][region == sr::ToyRegion::old_region ? "old" : "new"] = {{"x", d.x}, {"y", d.y}};
  }
  out["pretrained"] = band_json(sr::band_from_predictions(grid, pre_preds));
  for (std::size_t l = 0; l < o.lambdas.size(); ++l) {
    json b = band_json(sr::band_from_predictions(grid, ft_preds[l]));
    b["lambda"] = o.lambdas[l];
    out["finetuned"].push_back(b);
  }
  out["traces"] = runs;
  write_or_print(o.common.out_dir, "mlp_demo.json", out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Replay-regularized continual learning for small decoder-only language models"};
  app.require_subcommand(1);
  app.set_version_flag("--version", sr::version_string());

  RunOptions pre, fine, cur;
  auto* c_pre = app.add_subcommand("pretrain", "Pretrain on a corpus mixture");
  add_run_flags(c_pre, pre);
  auto* c_fine = app.add_subcommand("finetune", "Finetune a checkpoint with optional replay");
  add_run_flags(c_fine, fine);
  c_fine->add_option("--base", fine.base, "Base checkpoint (overrides base_checkpoint)");
  auto* c_cur = app.add_subcommand("curriculum", "Sequential toy-task curriculum");
  add_run_flags(c_cur, cur);

  SweepOptions sw;
  auto* c_sweep = app.add_subcommand("sweep", "Run a grid of configs, one process per run");
  add_common(c_sweep, sw.common, true);
  c_sweep->add_option("spec", sw.spec, "Sweep spec JSON")->required()->check(CLI::ExistingFile);
  c_sweep->add_option("-j,--parallel", sw.parallel, "Concurrent runs (default: spec value)");

  ModelOptions ev, smp, data;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint on a config's eval sets");
  add_run_flags(c_eval, ev.run);
  c_eval->add_option("checkpoint", ev.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);

  auto* c_sample = app.add_subcommand("sample", "Sample sequences from a checkpoint");
  add_run_flags(c_sample, smp.run);
  c_sample->add_option("checkpoint", smp.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  c_sample->add_option("--source", smp.source, "Corpus or task name for the leading id");
  c_sample->add_option("-n,--count", smp.count, "Number of sequences");
  c_sample->add_option("--length", smp.length, "Sequence length including the id (default: data seq_len)");
  c_sample->add_option("--temperature", smp.temperature, "Sampling temperature");

  auto* c_data = app.add_subcommand("sample-data", "Print sequences from a data source");
  add_run_flags(c_data, data.run);
  c_data->add_option("--source", data.source, "Corpus or task name");
  c_data->add_option("-n,--count", data.count, "Number of sequences");

  MlpOptions mlp;
  auto* c_mlp = app.add_subcommand("mlp-demo", "1-D regression toy across seeds and lambdas");
  add_common(c_mlp, mlp.common);
  c_mlp->add_option("--seeds", mlp.seeds, "Number of seeds (>= 4)");
  c_mlp->add_option("--lambda", mlp.lambdas, "Penalty weights")->delimiter(',');
  c_mlp->add_option("--set", mlp.sets, "hidden, pretrain_steps, finetune_steps, peak_lr, noise or data_seed");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*c_pre) return do_run(pre, sr::RunKind::pretrain);
    if (*c_fine) return do_run(fine, sr::RunKind::finetune);
    if (*c_cur) return do_run(cur, sr::RunKind::curriculum);
    if (*c_sweep) return do_sweep(sw);
    if (*c_eval) return do_eval(ev);
    if (*c_sample) return do_sample(smp);
    if (*c_data) return do_sample_data(data);
    if (*c_mlp) return do_mlp_demo(mlp);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
