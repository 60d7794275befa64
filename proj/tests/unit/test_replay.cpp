// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "gradcheck.hpp"
#include "sr/numerics/ops.hpp"
#include "sr/optim/adamw.hpp"
#include "sr/replay/replay.hpp"
#include "sr/tasks/markov.hpp"

namespace {

sr::ModelConfig tiny(int vocab) {
  sr::ModelConfig c;
  c.vocab_size = vocab;
  c.n_layers = 1;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_head = 4;
  c.d_ff = 16;
  return c;
}

sr::TokenBatch random_batch(int vocab, std::size_t b, std::size_t len, std::uint64_t seed) {
  sr::Rng rng(seed);
  sr::TokenBatch out(b, len);
  for (auto& t : out.tokens) t = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(vocab)));
  for (std::size_t i = 0; i < b; ++i) std::fill_n(out.mask.begin() + static_cast<std::ptrdiff_t>(i * len + 1), len - 1, 1);
  return out;
}

template <class T>
T value_of(const std::function<sr::Var(sr::Tape<T>&, std::span<const sr::Var>)>& fn, const sr::ModelParams<T>& p) {
  sr::Tape<T> tape;
  const auto vars = sr::bind_params(tape, p, false);
  return tape.scalar(fn(tape, vars));
}

}  // namespace

TEST_CASE("replay config validation") {
  sr::ReplayConfig c;
  CHECK_NOTHROW(c.validate());
  c.lambda = -1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.mixed_batch = true;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.objective = sr::ReplayObjective::ntp;
  CHECK_NOTHROW(c.validate());
  CHECK(sr::parse_replay_objective("kl") == sr::ReplayObjective::kl);
  CHECK(sr::parse_replay_source(sr::to_string(sr::ReplaySource::stored_real)) == sr::ReplaySource::stored_real);
  CHECK_THROWS_AS(sr::parse_replay_objective("reverse_kl"), std::invalid_argument);
}

TEST_CASE("sample_replay: determinism, layout, saturated reference is greedy") {
  const auto c = tiny(12);
  auto p = sr::init_params<double>(c, 3);
  const sr::FrozenReference<double> ref(p, 0, {5});
  sr::Rng r1(9), r2(9);
  const auto a = sr::sample_replay(ref, 5, 6, 8, r1);
  const auto b = sr::sample_replay(ref, 5, 6, 8, r2);
  CHECK(a == b);
  CHECK(a.batch == 6);
  CHECK(a.len == 8);
  for (std::size_t i = 0; i < 6; ++i) CHECK(a.at(i, 0) == 5);
  CHECK(a.target_count() == 6 * 7);
  CHECK_THROWS_AS(sr::sample_replay(ref, 12, 1, 4, r1), std::out_of_range);

  for (double& w : p.tensors[sr::ModelParams<double>::kEmbedOut].data()) w *= 1e5;
  const sr::FrozenReference<double> hot(p, 0, {5});
  sr::Rng r3(1);
  const auto s = sr::sample_replay(hot, 5, 4, 7, r3);
  for (std::size_t i = 0; i < 4; ++i) {
    std::vector<std::int32_t> greedy = {5};
    for (std::size_t t = 1; t < 7; ++t) {
      const auto logits = sr::forward_logits(p, greedy, 1, t);
      const double* row = logits.ptr() + (t - 1) * 12;
      greedy.push_back(static_cast<std::int32_t>(std::max_element(row, row + 12) - row));
    }
    for (std::size_t t = 0; t < 7; ++t) CHECK(s.at(i, t) == greedy[t]);
  }
}

TEST_CASE("replay losses: fixed points") {
  const auto c = tiny(16);
  const auto p = sr::init_params<double>(c, 5);
  const sr::FrozenReference<double> ref(p, 0, {0});
  const auto batch = random_batch(16, 4, 6, 1);
  const double kl = value_of<double>(
      [&](sr::Tape<double>& t, std::span<const sr::Var> v) { return sr::kl_replay_loss(t, c, v, ref, batch); }, p);
  CHECK(std::abs(kl) < 1e-6);

  const auto z = sr::zero_params<double>(c);
  const double ntp = value_of<double>(
      [&](sr::Tape<double>& t, std::span<const sr::Var> v) { return sr::ntp_replay_loss(t, c, v, batch); }, z);
  CHECK(ntp == doctest::Approx(std::log(16.0)).epsilon(1e-12));

  const auto other = sr::init_params<double>(c, 6);
  const double kl2 = value_of<double>(
      [&](sr::Tape<double>& t, std::span<const sr::Var> v) { return sr::kl_replay_loss(t, c, v, ref, batch); }, other);
  CHECK(kl2 > 0);
}

TEST_CASE("total_loss: lambda arithmetic and mixed batches") {
  const auto c = tiny(10);
  const auto theta = sr::init_params<double>(c, 1);
  const sr::FrozenReference<double> ref(sr::init_params<double>(c, 2), 0, {0});
  const auto down = random_batch(10, 4, 6, 3);
  auto replay = random_batch(10, 2, 6, 4);

  sr::ReplayConfig cfg;
  cfg.lambda = 0;
  {
    sr::Tape<double> t;
    const auto v = sr::bind_params(t, theta);
    const auto parts = sr::total_loss(t, c, v, &ref, down, &replay, cfg);
    CHECK(t.scalar(parts.total) == t.scalar(parts.downstream));
    CHECK_FALSE(parts.replay.has_value());
  }
  for (auto obj : {sr::ReplayObjective::kl, sr::ReplayObjective::ntp}) {
    cfg.lambda = 10;
    cfg.objective = obj;
    sr::Tape<double> t;
    const auto v = sr::bind_params(t, theta);
    const auto parts = sr::total_loss(t, c, v, &ref, down, &replay, cfg);
    REQUIRE(parts.replay.has_value());
    CHECK(std::abs(t.scalar(parts.total) - (t.scalar(parts.downstream) + 10 * t.scalar(*parts.replay))) < 1e-6);
  }
  {
    sr::Tape<double> t;
    const auto v = sr::bind_params(t, theta);
    sr::ReplayConfig kl;
    kl.lambda = 1;
    CHECK_THROWS_AS(sr::total_loss<double>(t, c, v, nullptr, down, &replay, kl), std::invalid_argument);
  }

  // mixed: partial masks so the position weighting matters
  replay.mask[1] = 0;
  replay.mask[2] = 0;
  cfg.mixed_batch = true;
  cfg.objective = sr::ReplayObjective::ntp;
  sr::Tape<double> t;
  const auto v = sr::bind_params(t, theta);
  const auto parts = sr::total_loss(t, c, v, &ref, down, &replay, cfg);
  const double ld = sr::ntp_loss_value(theta, down), lr = sr::ntp_loss_value(theta, replay);
  const double nd = static_cast<double>(down.target_count()), nr = static_cast<double>(replay.target_count());
  CHECK(std::abs(t.scalar(parts.total) - (nd * ld + nr * lr) / (nd + nr)) < 1e-6);
  CHECK(std::abs(t.scalar(parts.downstream) - ld) < 1e-12);
  CHECK(std::abs(t.scalar(*parts.replay) - lr) < 1e-12);
}

TEST_CASE("replay gradients match central differences") {
  const auto c = tiny(8);
  const sr::FrozenReference<double> ref(sr::init_params<double>(c, 11), 0, {0});
  const auto down = random_batch(8, 2, 4, 5);
  const auto replay = random_batch(8, 2, 4, 6);
  sr::ReplayConfig cfg;
  cfg.lambda = 10;
  for (auto obj : {sr::ReplayObjective::kl, sr::ReplayObjective::ntp}) {
    cfg.objective = obj;
    const auto res = sr::testing::grad_check(
        [&](sr::Tape<double>& t, std::span<const sr::Var> v) {
          return sr::total_loss(t, c, v, &ref, down, &replay, cfg).total;
        },
        sr::init_params<double>(c, 12).tensors);
    INFO(res.worst);
    CHECK(res.max_error < 1e-4);
  }
}

TEST_CASE("ntp on self samples estimates the reference entropy") {
  const auto c = tiny(6);
  const sr::FrozenReference<double> ref(sr::init_params<double>(c, 21), 0, {0});
  sr::Rng rng(4);
  std::vector<double> ntp, ent;
  for (int i = 0; i < 400; ++i) {
    const auto batch = sr::sample_replay(ref, 0, 8, 6, rng);
    ntp.push_back(sr::ntp_loss_value(ref.params(), batch));
    const auto lp = ref.log_probs(batch.inputs(), batch.batch, batch.len - 1);
    double h = 0;
    for (std::size_t r = 0; r < lp.size() / 6; ++r)
      for (std::size_t v = 0; v < 6; ++v) h -= std::exp(lp[r * 6 + v]) * lp[r * 6 + v];
    ent.push_back(h / static_cast<double>(lp.size() / 6));
  }
  auto mean = [](const std::vector<double>& x) { return std::accumulate(x.begin(), x.end(), 0.0) / x.size(); };
  double var = 0;
  const double m = mean(ntp);
  for (double x : ntp) var += (x - m) * (x - m);
  const double se = std::sqrt(var / (ntp.size() - 1) / ntp.size());
  CHECK(std::abs(m - mean(ent)) < 3 * se);
}

TEST_CASE("reference trained on a cycle samples the cycle") {
  sr::Vocab vocab;
  const auto cyc = sr::make_cycle_corpus(vocab, "cyc", 6);
  sr::ModelConfig c = tiny(static_cast<int>(vocab.size()));
  c.d_model = 16;
  c.d_head = 8;
  c.d_ff = 32;
  auto p = sr::init_params<float>(c, 1);
  sr::OptimizerConfig oc;
  oc.warmup_steps = 0;
  auto state = sr::OptimizerState<float>::zeros_like(p.tensors);
  sr::Rng rng(2);
  // only the first state after the identifier is unpredictable
  const float floor = static_cast<float>(std::log(6.0) / 11);
  float loss = 1;
  int step = 0;
  for (; step < 1000; ++step) {
    const auto batch = sr::gen_markov_batch(cyc, 16, 12, rng);
    const auto g = sr::grad<float>([&](sr::Tape<float>& t, std::span<const sr::Var> v) { return sr::ntp_loss(t, c, v, batch); },
                                   p.tensors, &loss);
    sr::adamw_step<float>(p.tensors, g, state, oc, 1e-2);
  }
  REQUIRE(loss <= floor + 0.02f);
  const sr::FrozenReference<float> ref(p, step, {cyc.corpus_id});
  const auto s = sr::sample_replay(ref, cyc.corpus_id, 64, 12, rng);
  int follow = 0, total = 0;
  for (std::size_t b = 0; b < s.batch; ++b)
    for (std::size_t t = 2; t < s.len; ++t, ++total)
      follow += (s.at(b, t) - cyc.state_base) == (s.at(b, t - 1) - cyc.state_base + 1) % 6;
  CHECK(static_cast<double>(follow) / total >= 0.99);
}
