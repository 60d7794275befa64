// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "sr/tasks/arithmetic.hpp"
#include "sr/tasks/dataset.hpp"
#include "sr/tasks/markov.hpp"

namespace {

sr::Vocab task_vocab() {
  sr::Vocab v;
  sr::register_task_sources(v);
  return v;
}

}  // namespace

TEST_CASE("vocab ids and round trip") {
  sr::Vocab a = task_vocab(), b = task_vocab();
  CHECK(a.tokens() == b.tokens());
  CHECK(a.id("<pad>") == sr::Vocab::kPad);
  CHECK(a.id("0") == sr::Vocab::kDigit0);
  CHECK(a.id("9") == sr::Vocab::kDigit0 + 9);
  CHECK(a.id("|") == sr::Vocab::kBar);
  CHECK(a.id("=") == sr::Vocab::kEquals);
  CHECK(a.id("modadd") == sr::Vocab::kTaskBase + 3);
  CHECK(a.is_source(a.source_id("sort")));
  CHECK_FALSE(a.is_source(a.id("sort")));
  CHECK_THROWS_AS(a.register_source("add"), std::invalid_argument);
  CHECK_THROWS_AS(a.id("add7"), std::out_of_range);
  CHECK_THROWS_AS(a.token(999), std::out_of_range);

  sr::Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const auto task = sr::kAllTasks[static_cast<std::size_t>(i % 4)];
    const auto seq = sr::gen_example(a, task, rng).sequence();
    const std::string text = a.detokenize(seq);
    CHECK(a.detokenize(a.tokenize(text)) == text);
    CHECK(a.tokenize(text) == seq);
  }
}

TEST_CASE("task examples") {
  const sr::Vocab v = task_vocab();
  auto text = [&](const sr::TaskExample& e) {
    std::vector<std::int32_t> body(e.prompt);
    body.insert(body.end(), e.answer.begin(), e.answer.end());
    return v.detokenize(body);
  };
  CHECK(text(sr::make_example(v, sr::Task::add, 347, 589)) == "add 3 4 7 | 5 8 9 = 0 9 3 6");
  CHECK(v.detokenize(sr::make_example(v, sr::Task::reversal, 777).answer) == "7 7 7");
  CHECK(v.detokenize(sr::make_example(v, sr::Task::reversal, 120).answer) == "0 2 1");
  CHECK(v.detokenize(sr::make_example(v, sr::Task::sort, 903).answer) == "0 3 9");
  CHECK(v.detokenize(sr::make_example(v, sr::Task::modadd, 999, 1).answer) == "0 0 0");
  CHECK(v.detokenize(sr::make_example(v, sr::Task::add, 999, 999).answer) == "1 9 9 8");
  CHECK(text(sr::make_example(v, sr::Task::add, 5, 7)) == "add 0 0 5 | 0 0 7 = 0 0 1 2");
  CHECK_THROWS_AS(sr::make_example(v, sr::Task::add, 1000, 0), std::invalid_argument);

  const auto e = sr::make_example(v, sr::Task::sort, 321);
  const auto seq = e.sequence(sr::kTaskSeqLen);
  CHECK(seq.size() == sr::kTaskSeqLen);
  CHECK(seq[0] == v.source_id("sort"));
  CHECK(v.detokenize(seq, true) == "<sort> sort 3 2 1 = 1 2 3");
  CHECK(seq.back() == sr::Vocab::kPad);
  CHECK(sr::make_example(v, sr::Task::add, 1, 2).unpadded_len() == sr::kTaskSeqLen);
}

TEST_CASE("generated examples pass the oracle and cover the operand range") {
  const sr::Vocab v = task_vocab();
  sr::Rng rng(7);
  std::set<int> leading;
  for (int i = 0; i < 4000; ++i) {
    for (sr::Task t : sr::kAllTasks) {
      const auto e = sr::gen_example(v, t, rng);  // throws on oracle mismatch
      CHECK(e.answer.size() == (t == sr::Task::add ? 4u : 3u));
      leading.insert(e.prompt[1] - sr::Vocab::kDigit0);
    }
  }
  CHECK(leading.size() == 10);  // leading zeros occur
  sr::Rng r1(9), r2(9);
  const auto b1 = sr::gen_task_batch(v, sr::Task::add, 16, r1);
  const auto b2 = sr::gen_task_batch(v, sr::Task::add, 16, r2);
  CHECK(b1 == b2);
  CHECK(b1.target_count() == 16 * (sr::kTaskSeqLen - 1));
  for (std::size_t b = 0; b < 16; ++b) {
    CHECK(b1.at(b, 0) == v.source_id("add"));
    CHECK(b1.mask[b * sr::kTaskSeqLen] == 0);
  }
}

TEST_CASE("exact match evaluation") {
  const sr::Vocab v = task_vocab();
  // lookup model: parses the prompt and puts all mass on the true next answer digit
  const sr::LogitsFn oracle = [&](std::span<const std::int32_t> tokens, std::size_t batch, std::size_t len) {
    sr::Tensor<float> out(sr::Shape{batch, len, v.size()}, -10.0f);
    for (std::size_t b = 0; b < batch; ++b) {
      const auto row = tokens.subspan(b * len, len);
      const sr::Task task = static_cast<sr::Task>(row[1] - sr::Vocab::kTaskBase);
      auto num = [&](std::size_t at) {
        return 100 * (row[at] - 1) + 10 * (row[at + 1] - 1) + (row[at + 2] - 1);
      };
      const bool binary = task == sr::Task::add || task == sr::Task::modadd;
      const auto ex = sr::make_example(v, task, num(2), binary ? num(6) : 0);
      const std::size_t done = len - 1 - ex.prompt.size();
      if (done < ex.answer.size()) out[(b * len + len - 1) * v.size() + static_cast<std::size_t>(ex.answer[done])] = 10;
    }
    return out;
  };
  for (sr::Task t : sr::kAllTasks) {
    sr::Rng rng(3);
    CHECK(sr::eval_exact_match(oracle, v, t, 50, rng) == 1.0);
  }

  sr::ModelConfig c;
  c.vocab_size = static_cast<int>(v.size());
  c.n_layers = 1;
  c.d_model = 32;
  c.n_heads = 2;
  c.d_head = 16;
  c.d_ff = 64;
  const auto params = sr::init_params<float>(c, 4);
  sr::Rng r1(11), r2(11);
  const double acc = sr::eval_exact_match(params, v, sr::Task::add, 200, r1);
  CHECK(acc <= 0.05);
  CHECK(sr::eval_exact_match(params, v, sr::Task::add, 200, r2) == acc);
  sr::Rng r3(1);
  CHECK_THROWS_AS(sr::eval_exact_match(params, v, sr::Task::add, 0, r3), std::invalid_argument);
}

TEST_CASE("markov corpora") {
  sr::Vocab v;
  sr::Rng rng(5);
  const auto langs = sr::default_language_corpora(v, 17);
  REQUIRE(langs.size() == 2);
  CHECK(langs[0].corpus_id != langs[1].corpus_id);
  CHECK(langs[0].state_base == langs[1].state_base);
  CHECK(langs[0].transition != langs[1].transition);
  for (const auto& c : langs) {
    CHECK(c.states == 24);
    for (int i = 0; i < c.states; ++i) {
      double row = 0;
      for (int j = 0; j < c.states; ++j) row += c.p(i, j);
      CHECK(std::abs(row - 1.0) < 1e-9);
    }
    // stationarity
    for (int j = 0; j < c.states; ++j) {
      double s = 0;
      for (int i = 0; i < c.states; ++i) s += c.stationary[static_cast<std::size_t>(i)] * c.p(i, j);
      CHECK(s == doctest::Approx(c.stationary[static_cast<std::size_t>(j)]).epsilon(1e-9));
    }
    CHECK(c.entropy_rate > 0);
    CHECK(c.entropy_rate < sr::unigram_entropy(c));
  }
  sr::Vocab v2;
  const auto again = sr::default_language_corpora(v2, 17);
  CHECK(again[1].transition == langs[1].transition);

  const auto uni = sr::make_uniform_corpus(v, "uni", 8);
  CHECK(uni.entropy_rate == doctest::Approx(std::log(8.0)).epsilon(1e-12));

  const auto cycle = sr::make_cycle_corpus(v, "cyc", 24);
  CHECK(cycle.entropy_rate == 0.0);
  const auto batch = sr::gen_markov_batch(cycle, 8, 40, rng);
  for (std::size_t b = 0; b < 8; ++b) {
    CHECK(batch.at(b, 0) == cycle.corpus_id);
    for (std::size_t t = 2; t < 40; ++t)
      CHECK((batch.at(b, t) - cycle.state_base) == (batch.at(b, t - 1) - cycle.state_base + 1) % 24);
  }

  CHECK_THROWS_AS(sr::make_markov_corpus(v, "bad", 2, {0.5, 0.5, 0.5, 0.6}), std::invalid_argument);
  CHECK_THROWS_AS(sr::gen_markov_batch(cycle, 1, 1, rng), std::invalid_argument);
}

TEST_CASE("markov bigram frequencies match the transition matrix") {
  sr::Vocab v;
  sr::Rng rng(21);
  const auto c = sr::make_dirichlet_corpus(v, "x", 24, 0.3, rng);
  const std::size_t rows = 4000, len = 251;  // 10^6 transitions
  const auto batch = sr::gen_markov_batch(c, rows, len, rng);
  std::vector<double> counts(24 * 24, 0.0), from(24, 0.0);
  for (std::size_t b = 0; b < rows; ++b)
    for (std::size_t t = 2; t < len; ++t) {
      const auto i = static_cast<std::size_t>(batch.at(b, t - 1) - c.state_base);
      const auto j = static_cast<std::size_t>(batch.at(b, t) - c.state_base);
      counts[i * 24 + j] += 1;
      from[i] += 1;
    }
  for (int i = 0; i < 24; ++i) {
    double tv = 0;
    for (int j = 0; j < 24; ++j) tv += std::abs(counts[static_cast<std::size_t>(i * 24 + j)] / from[static_cast<std::size_t>(i)] - c.p(i, j));
    CHECK(0.5 * tv < 1e-2);
  }
}

TEST_CASE("sequence pool epochs") {
  sr::TokenBatch rows(5, 3);
  for (std::size_t i = 0; i < 5; ++i) rows.at(i, 0) = static_cast<std::int32_t>(i);
  sr::SequencePool pool(rows, sr::Rng(1));
  std::multiset<int> seen;
  for (int k = 0; k < 5; ++k) seen.insert(pool.next(2).at(0, 0));
  CHECK(pool.served() == 10);
  CHECK(pool.epochs() == 2.0);
  const auto full = sr::SequencePool(rows, sr::Rng(2)).next(5);
  std::set<int> ids;
  for (std::size_t i = 0; i < 5; ++i) ids.insert(full.at(i, 0));
  CHECK(ids.size() == 5);  // one epoch is a permutation
  CHECK_THROWS_AS(sr::SequencePool(sr::TokenBatch(), sr::Rng(0)), std::invalid_argument);
}
