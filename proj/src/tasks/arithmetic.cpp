// SPDX-License-Identifier: Apache-2.0

#include "sr/tasks/arithmetic.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace sr {

namespace {

std::array<int, 3> digits3(int x) { return {x / 100, (x / 10) % 10, x % 10}; }

int from_digits(std::span<const std::int32_t> ids) {
  int v = 0;
  for (std::int32_t t : ids) v = 10 * v + (t - Vocab::kDigit0);
  return v;
}

void push_digits(std::vector<std::int32_t>& out, std::span<const int> ds) {
  for (int d : ds) out.push_back(Vocab::kDigit0 + d);
}

// Independent integer oracle, compared against the digit-level construction.
void verify(const TaskExample& ex, int a, int b) {
  const int got = from_digits(ex.answer);
  int want = 0;
  switch (ex.task) {
    case Task::add: want = a + b; break;
    case Task::modadd: want = (a + b) % 1000; break;
    case Task::reversal: want = (a % 10) * 100 + ((a / 10) % 10) * 10 + a / 100; break;
    case Task::sort: {
      int counts[10] = {};
      for (int x = a, i = 0; i < 3; ++i, x /= 10) counts[x % 10]++;
      for (int d = 0; d < 10; ++d)
        for (int c = 0; c < counts[d]; ++c) want = want * 10 + d;
      break;
    }
  }
  if (got != want)
    throw std::logic_error("task oracle mismatch for " + std::string(to_string(ex.task)) + "(" + std::to_string(a) +
                           ", " + std::to_string(b) + "): " + std::to_string(got) + " vs " + std::to_string(want));
}

}  // namespace

std::string_view to_string(Task task) {
  switch (task) {
    case Task::add: return "add";
    case Task::reversal: return "reversal";
    case Task::sort: return "sort";
    case Task::modadd: return "modadd";
  }
  return "?";
}

Task parse_task(std::string_view name) {
  for (Task t : kAllTasks)
    if (to_string(t) == name) return t;
  throw std::invalid_argument("unknown task '" + std::string(name) + "'");
}

void register_task_sources(Vocab& vocab) {
  for (Task t : kAllTasks) vocab.register_source(to_string(t));
}

std::vector<std::int32_t> TaskExample::sequence(std::size_t len) const {
  std::vector<std::int32_t> out;
  out.reserve(std::max(len, unpadded_len()));
  out.push_back(corpus_id);
  out.insert(out.end(), prompt.begin(), prompt.end());
  out.insert(out.end(), answer.begin(), answer.end());
  if (len && out.size() > len) throw std::invalid_argument("task sequence longer than padded length");
  out.resize(std::max(len, out.size()), Vocab::kPad);
  return out;
}

TaskExample make_example(const Vocab& vocab, Task task, int a, int b) {
  if (a < 0 || a > 999 || b < 0 || b > 999) throw std::invalid_argument("task operands must lie in [0, 999]");
  TaskExample ex{task, vocab.source_id(to_string(task)), {}, {}};
  ex.prompt.push_back(Vocab::kTaskBase + static_cast<std::int32_t>(task));
  const auto da = digits3(a);
  push_digits(ex.prompt, da);
  const bool binary = task == Task::add || task == Task::modadd;
  if (binary) {
    ex.prompt.push_back(Vocab::kBar);
    push_digits(ex.prompt, digits3(b));
  }
  ex.prompt.push_back(Vocab::kEquals);

  switch (task) {
    case Task::add: {
      const int s = a + b;
      const std::array<int, 4> ds = {s / 1000, (s / 100) % 10, (s / 10) % 10, s % 10};
      push_digits(ex.answer, ds);
      break;
    }
    case Task::modadd: push_digits(ex.answer, digits3((a + b) % 1000)); break;
    case Task::reversal: {
      const std::array<int, 3> ds = {da[2], da[1], da[0]};
      push_digits(ex.answer, ds);
      break;
    }
    case Task::sort: {
      auto ds = da;
      std::sort(ds.begin(), ds.end());
      push_digits(ex.answer, ds);
      break;
    }
  }
  verify(ex, a, b);
  return ex;
}

TaskExample gen_example(const Vocab& vocab, Task task, Rng& rng) {
  const int a = static_cast<int>(rng.below(1000));
  const int b = static_cast<int>(rng.below(1000));
  return make_example(vocab, task, a, b);
}

TokenBatch gen_task_batch(const Vocab& vocab, Task task, std::size_t batch, Rng& rng) {
  TokenBatch out(batch, kTaskSeqLen);
  for (std::size_t i = 0; i < batch; ++i) {
    const auto seq = gen_example(vocab, task, rng).sequence(kTaskSeqLen);
    std::copy(seq.begin(), seq.end(), out.tokens.begin() + static_cast<std::ptrdiff_t>(i * kTaskSeqLen));
    std::fill_n(out.mask.begin() + static_cast<std::ptrdiff_t>(i * kTaskSeqLen + 1), kTaskSeqLen - 1, 1);
  }
  return out;
}

std::vector<std::vector<std::int32_t>> greedy_answers(const LogitsFn& logits, std::span<const TaskExample> examples) {
  std::vector<std::vector<std::int32_t>> answers(examples.size());
  if (examples.empty()) return answers;
  // Examples of one task share prompt and answer lengths; group defensively.
  std::size_t start = 0;
  while (start < examples.size()) {
    const std::size_t plen = examples[start].prompt.size(), alen = examples[start].answer.size();
    std::size_t end = start;
    while (end < examples.size() && examples[end].prompt.size() == plen && examples[end].answer.size() == alen) ++end;
    const std::size_t n = end - start;
    std::size_t len = 1 + plen;
    std::vector<std::int32_t> ctx;
    ctx.reserve(n * (len + alen));
    for (std::size_t i = start; i < end; ++i) {
      ctx.push_back(examples[i].corpus_id);
      ctx.insert(ctx.end(), examples[i].prompt.begin(), examples[i].prompt.end());
    }
    for (std::size_t step = 0; step < alen; ++step) {
      const Tensor<float> out = logits(ctx, n, len);
      const std::size_t vocab = out.dim(2);
      std::vector<std::int32_t> next(n);
      for (std::size_t b = 0; b < n; ++b) {
        const float* row = out.ptr() + (b * len + len - 1) * vocab;
        next[b] = static_cast<std::int32_t>(std::max_element(row, row + vocab) - row);
        answers[start + b].push_back(next[b]);
      }
      std::vector<std::int32_t> grown;
      grown.reserve(n * (len + 1));
      for (std::size_t b = 0; b < n; ++b) {
        grown.insert(grown.end(), ctx.begin() + static_cast<std::ptrdiff_t>(b * len),
                     ctx.begin() + static_cast<std::ptrdiff_t>((b + 1) * len));
        grown.push_back(next[b]);
      }
      ctx = std::move(grown);
      ++len;
    }
    start = end;
  }
  return answers;
}

double eval_exact_match(const LogitsFn& logits, const Vocab& vocab, Task task, std::size_t n_examples, Rng& rng) {
  if (n_examples == 0) throw std::invalid_argument("eval_exact_match: n_examples must be >= 1");
  std::vector<TaskExample> examples;
  examples.reserve(n_examples);
  for (std::size_t i = 0; i < n_examples; ++i) examples.push_back(gen_example(vocab, task, rng));
  const auto answers = greedy_answers(logits, examples);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n_examples; ++i) hits += answers[i] == examples[i].answer;
  return static_cast<double>(hits) / static_cast<double>(n_examples);
}

double eval_exact_match(const ModelParams<float>& params, const Vocab& vocab, Task task, std::size_t n_examples,
                        Rng& rng) {
  const LogitsFn fn = [&params](std::span<const std::int32_t> tokens, std::size_t batch, std::size_t len) {
    return forward_logits(params, tokens, batch, len);
  };
  return eval_exact_match(fn, vocab, task, n_examples, rng);
}

}  // namespace sr
