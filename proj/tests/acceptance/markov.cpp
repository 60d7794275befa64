// SPDX-License-Identifier: Apache-2.0
//
// Scaled-down learning / forgetting experiments on Markov proxy corpora.
// A small model is pretrained on lang-A and finetuned on lang-B; forgetting
// is the increase of the held-out lang-A loss between the start and the end
// of finetuning. Targets sit a fixed margin above the lang-B entropy rate.

#include <algorithm>
#include <cmath>

#include "common.hpp"
#include "sr/harness/runner.hpp"

namespace sr::acceptance {

namespace {

constexpr double kTargetMargin = 0.1;  // nats above the downstream entropy rate

RunConfig markov_base() {
  RunConfig c;
  c.seed = 1;
  c.model.n_layers = 2;
  c.model.d_model = 32;
  c.model.n_heads = 2;
  c.model.d_head = 16;
  c.model.d_ff = 64;
  c.model.max_context = 32;
  c.data.seq_len = 32;
  c.data.eval_sequences = 256;
  c.batch_size = 32;
  c.log_every = 50;
  c.optimizer.weight_decay = 0;
  return c;
}

RunConfig pretrain_config(std::int64_t steps) {
  RunConfig p = markov_base();
  p.name = "pretrain-A";
  p.data.mixture = {{"lang-A", 1.0}};
  p.optimizer.peak_lr = 3e-3;
  p.optimizer.warmup_steps = 100;
  p.stopping.rule = StoppingRule::fixed(steps, std::min<std::int64_t>(steps, 500));
  return p;
}

// Constant lr, no warmup, finetune on lang-B.
RunConfig finetune_config(double lr) {
  RunConfig q = markov_base();
  q.kind = RunKind::finetune;
  q.name = "finetune-B";
  q.data.downstream = "lang-B";
  q.optimizer.peak_lr = lr;
  q.optimizer.warmup_steps = 0;
  return q;
}

void to_target(RunConfig& q, std::int64_t cap) {
  q.stopping.rule = StoppingRule::target_loss(0, 10, 100);
  q.stopping.rule.steps = cap;
  q.stopping.target_above_entropy = kTargetMargin;
}

struct FinetuneStats {
  std::optional<std::int64_t> steps;  // to target
  double forgetting = 0;
  double downstream = 0;
  std::string outcome;
};

FinetuneStats finetune(const Context& ctx, const ModelParams<float>& base, const RunConfig& q, const std::string& tag) {
  const auto r = run_finetune(base, q, (ctx.out_dir / tag).string());
  FinetuneStats s;
  if (r.log.summary.target) s.steps = steps_to_target(r.log);
  s.forgetting = r.log.last("eval", "forgetting/lang-A").value();
  s.downstream = r.log.last("eval", "loss/lang-B").value();
  s.outcome = std::string(to_string(r.log.summary.outcome));
  note(ctx, fmt("%s: lr %.3g, %s, steps %lld, forgetting %.4f, lang-B loss %.4f", tag.c_str(), q.optimizer.peak_lr,
                s.outcome.c_str(), s.steps ? static_cast<long long>(*s.steps) : -1LL, s.forgetting, s.downstream));
  return s;
}

ModelParams<float> pretrain(const Context& ctx, std::int64_t steps, const std::string& tag) {
  auto r = run_pretrain(pretrain_config(steps), (ctx.out_dir / tag).string());
  note(ctx, fmt("%s: %lld steps, lang-A loss %.4f", tag.c_str(), static_cast<long long>(steps),
                r.log.last("eval", "loss/lang-A").value()));
  return std::move(r.params);
}

}  // namespace

Verdict flow_limit(const Context& ctx) {
  const auto base = pretrain(ctx, 2000, "flow/pretrain");
  constexpr double eta = 2.5e-4;
  std::vector<double> products;
  std::string detail = "lr*steps_to_target:";
  for (double lr : {eta, eta / 2, eta / 4}) {
    RunConfig q = finetune_config(lr);
    to_target(q, 40000);
    const auto s = finetune(ctx, base, q, fmt("flow/lr_%g", lr));
    if (!s.steps) return {false, fmt("lr %g did not reach the target within the cap", lr)};
    products.push_back(lr * static_cast<double>(*s.steps));
    detail += fmt(" %.4f (lr %.3g, %lld steps)", products.back(), lr, static_cast<long long>(*s.steps));
  }
  double mean = 0;
  for (double p : products) mean += p / static_cast<double>(products.size());
  double worst = 0;
  for (double p : products) worst = std::max(worst, std::abs(p / mean - 1));
  return {worst <= 0.25, detail + fmt("; max deviation from the mean %.1f%% (limit 25%%)", 100 * worst)};
}

Verdict mixed_replay(const Context& ctx) {
  const auto base = pretrain(ctx, 2000, "mixed/pretrain");
  constexpr double low = 2.5e-4, high = 4 * low;
  RunConfig slow = finetune_config(low);
  to_target(slow, 40000);
  const auto baseline = finetune(ctx, base, slow, "mixed/low_lr");

  RunConfig fast = finetune_config(high);
  to_target(fast, 40000);
  const auto plain = finetune(ctx, base, fast, "mixed/high_lr");
  fast.replay.mixed_batch = true;
  fast.replay.objective = ReplayObjective::ntp;
  fast.replay.source = ReplaySource::self_generated;
  fast.replay.batch_ratio = 1.0;
  const auto replayed = finetune(ctx, base, fast, "mixed/high_lr_replay");

  if (!baseline.steps || !replayed.steps) return {false, "a run did not reach the target"};
  const double speed = static_cast<double>(*replayed.steps) / static_cast<double>(*baseline.steps);
  const bool pass = speed <= 0.5 && replayed.forgetting <= 0.05 && plain.forgetting >= 3 * replayed.forgetting;
  return {pass, fmt("lr x4 with mixed replay: %lld vs %lld steps (ratio %.3f <= 0.5), forgetting %.4f <= 0.05 nats; "
                    "lr x4 without replay forgets %.4f (%.1fx, need >= 3x)",
                    static_cast<long long>(*replayed.steps), static_cast<long long>(*baseline.steps), speed,
                    replayed.forgetting, plain.forgetting, plain.forgetting / replayed.forgetting)};
}

Verdict lambda_frontier(const Context& ctx) {
  const auto base = pretrain(ctx, 2000, "frontier/pretrain");
  const std::vector<double> lambdas = {0, 0.1, 1, 10};
  std::vector<FinetuneStats> runs;
  for (double l : lambdas) {
    RunConfig q = finetune_config(1e-3);
    q.stopping.rule = StoppingRule::fixed(500, 50);
    q.replay.lambda = l;
    runs.push_back(finetune(ctx, base, q, fmt("frontier/lambda_%g", l)));
  }
  int inversions = 0;
  for (std::size_t i = 1; i < runs.size(); ++i) {
    inversions += runs[i].forgetting > runs[i - 1].forgetting;
    inversions += runs[i].downstream < runs[i - 1].downstream;
  }
  std::string detail = "lambda: forgetting / lang-B loss after 500 steps:";
  for (std::size_t i = 0; i < runs.size(); ++i)
    detail += fmt(" %g: %.4f / %.4f;", lambdas[i], runs[i].forgetting, runs[i].downstream);
  return {inversions <= 1, detail + fmt(" %d inversion(s), at most 1 allowed", inversions)};
}

// Six prior corpora share one small model, so long pretraining fills its
// capacity. The downstream corpus uses the same state tokens.
namespace {

constexpr int kPriorCorpora = 6;

RunConfig capacity_base() {
  RunConfig c = markov_base();
  c.model.d_model = 16;
  c.model.d_head = 8;
  c.model.d_ff = 32;
  for (int k = 0; k < kPriorCorpora; ++k)
    c.data.corpora.push_back(MarkovSpec{fmt("prior-%d", k), "dirichlet", 16, 0.3, static_cast<std::uint64_t>(10 + k)});
  c.data.corpora.push_back(MarkovSpec{"new", "dirichlet", 16, 0.3, 99});
  for (int k = 0; k < kPriorCorpora; ++k) c.data.prior.push_back(fmt("prior-%d", k));
  return c;
}

double mean_over_priors(const RunLog& log, const RunConfig& c, const std::string& metric) {
  double sum = 0;
  for (const auto& p : c.data.prior) sum += log.last("eval", metric + "/" + p).value();
  return sum / static_cast<double>(c.data.prior.size());
}

}  // namespace

Verdict overtraining(const Context& ctx) {
  RunConfig pre = capacity_base();
  pre.name = "capacity-pretrain";
  for (const auto& p : pre.data.prior) pre.data.mixture[p] = 1.0;
  pre.optimizer.peak_lr = 3e-3;
  pre.optimizer.warmup_steps = 100;
  pre.optimizer.schedule = Schedule::cosine;

  // 20 tokens per parameter, predicted tokens per step = batch * (seq_len - 1)
  const DataUniverse data(pre.data);
  const ModelConfig model = resolve_model(pre, data);
  std::size_t params = 0;
  for (const auto& t : zero_params<float>(model).tensors) params += t.size();
  const auto unit = static_cast<std::int64_t>(
      std::ceil(20.0 * static_cast<double>(params) / static_cast<double>(pre.batch_size * (pre.data.seq_len - 1))));

  std::vector<double> pre_loss, forgetting;
  std::string detail = fmt("%zu params, %lld steps per 20 tokens/param;", params, static_cast<long long>(unit));
  for (int mult : {1, 10, 50}) {
    const std::int64_t steps = unit * mult;
    pre.stopping.rule = StoppingRule::fixed(steps, std::min<std::int64_t>(steps, 500));
    const auto base = run_pretrain(pre, (ctx.out_dir / fmt("capacity/pretrain_x%d", mult)).string());
    pre_loss.push_back(mean_over_priors(base.log, pre, "loss"));

    RunConfig q = capacity_base();
    q.kind = RunKind::finetune;
    q.name = "capacity-finetune";
    q.data.downstream = "new";
    q.optimizer.peak_lr = 1e-3;
    q.optimizer.warmup_steps = 0;
    to_target(q, 20000);
    q.replay.lambda = 1.0;
    const auto r = run_finetune(base.params, q, (ctx.out_dir / fmt("capacity/finetune_x%d", mult)).string());
    if (!r.log.summary.target || r.log.summary.outcome != Outcome::converged)
      return {false, fmt("x%d pretraining: finetune did not reach the target (%s)", mult,
                         std::string(to_string(r.log.summary.outcome)).c_str())};
    forgetting.push_back(mean_over_priors(r.log, q, "forgetting"));
    detail += fmt(" x%d: prior loss %.4f, %lld steps, forgetting %.4f;", mult, pre_loss.back(),
                  static_cast<long long>(steps_to_target(r.log).value_or(-1)), forgetting.back());
    note(ctx, detail);
  }
  bool pass = true;
  for (std::size_t i = 1; i < forgetting.size(); ++i)
    pass = pass && forgetting[i] >= forgetting[i - 1] && pre_loss[i] <= pre_loss[i - 1];
  return {pass, detail + " need forgetting non-decreasing with prior loss non-increasing"};
}

}  // namespace sr::acceptance
