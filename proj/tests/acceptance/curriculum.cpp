// SPDX-License-Identifier: Apache-2.0
//
// Toy curriculum add -> reversal -> sort -> modadd, without replay and with
// self-generated KL replay.

#include <map>

#include "common.hpp"
#include "sr/harness/runner.hpp"

namespace sr::acceptance {

namespace {

RunConfig curriculum_config(bool replay) {
  RunConfig c;
  c.kind = RunKind::curriculum;
  c.name = replay ? "curriculum-replay" : "curriculum-plain";
  c.seed = 1;
  // 3 layers, d=128: about 0.6M parameters
  c.model.n_layers = 3;
  c.model.d_model = 128;
  c.model.n_heads = 4;
  c.model.d_head = 32;
  c.model.d_ff = 512;
  c.model.max_context = 16;
  c.data.kind = "tasks";
  c.data.tasks = {"add", "reversal", "sort", "modadd"};
  c.batch_size = 64;
  c.log_every = 50;
  c.curriculum.steps_per_task = 2000;
  c.curriculum.eval_every = 250;
  c.curriculum.eval_examples = 256;
  c.optimizer.peak_lr = 1e-3;
  c.optimizer.warmup_steps = 100;
  c.optimizer.weight_decay = 0;
  c.optimizer.schedule = Schedule::cosine;
  c.optimizer.total_steps = c.curriculum.steps_per_task;  // per phase
  if (replay) {
    c.replay.objective = ReplayObjective::kl;
    c.replay.source = ReplaySource::self_generated;
    c.replay.lambda = 1.0;
    c.replay.batch_ratio = 0.25;
    c.replay.pool_size = 512;
  }
  return c;
}

std::map<std::string, double> final_accuracy(const Context& ctx, bool replay) {
  const RunConfig cfg = curriculum_config(replay);
  const auto r = run_curriculum(cfg, (ctx.out_dir / cfg.name).string());
  std::map<std::string, double> acc;
  std::string line = cfg.name + ":";
  for (const auto& t : cfg.data.tasks) {
    acc[t] = r.log.last("eval", "accuracy/" + t).value();
    line += fmt(" %s %.3f", t.c_str(), acc[t]);
  }
  note(ctx, line);
  return acc;
}

}  // namespace

Verdict curriculum(const Context& ctx) {
  const auto plain = final_accuracy(ctx, false);
  const auto replay = final_accuracy(ctx, true);
  bool replay_ok = true;
  std::string replay_line;
  for (const auto& [task, a] : replay) {
    replay_ok = replay_ok && a > 0.90;
    replay_line += fmt(" %s %.3f", task.c_str(), a);
  }
  const bool pass = plain.at("add") < 0.10 && plain.at("modadd") > 0.90 && replay_ok;
  return {pass, fmt("no replay: add %.3f (< 0.10), modadd %.3f (> 0.90); KL replay lambda=1, all > 0.90:%s",
                    plain.at("add"), plain.at("modadd"), replay_line.c_str())};
}

}  // namespace sr::acceptance
