// SPDX-License-Identifier: Apache-2.0
//
// The four toy tasks. Layouts (before padding):
//   add      <id> add a a a | b b b = s s s s
//   reversal <id> reversal a a a = r r r
//   sort     <id> sort a a a = s s s
//   modadd   <id> modadd a a a | b b b = m m m

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "sr/model/token_batch.hpp"
#include "sr/model/transformer.hpp"
#include "sr/numerics/random.hpp"
#include "sr/tasks/vocab.hpp"

namespace sr {

enum class Task { add = 0, reversal = 1, sort = 2, modadd = 3 };

inline constexpr std::array<Task, 4> kAllTasks = {Task::add, Task::reversal, Task::sort, Task::modadd};

/// Padded length shared by every task sequence.
inline constexpr std::size_t kTaskSeqLen = 14;

std::string_view to_string(Task task);
Task parse_task(std::string_view name);

/// Registers one corpus identifier per task ("<add>", ...) in task order.
void register_task_sources(Vocab& vocab);

struct TaskExample {
  Task task;
  std::int32_t corpus_id;
  std::vector<std::int32_t> prompt;  // task word through '='
  std::vector<std::int32_t> answer;

  /// [corpus-id] + prompt + answer, right padded with pads to `len`.
  std::vector<std::int32_t> sequence(std::size_t len = 0) const;
  std::size_t unpadded_len() const { return 1 + prompt.size() + answer.size(); }
};

/// Operands are 0..999 written with leading zeros; `b` is ignored by the
/// single-operand tasks. Throws if the answer fails the integer re-check.
TaskExample make_example(const Vocab& vocab, Task task, int a, int b = 0);

/// Uniform operands.
TaskExample gen_example(const Vocab& vocab, Task task, Rng& rng);

/// B padded sequences of length kTaskSeqLen; every token after the corpus
/// identifier is a target.
TokenBatch gen_task_batch(const Vocab& vocab, Task task, std::size_t batch, Rng& rng);

/// Logits [batch, len, V] for a token matrix [batch, len].
using LogitsFn = std::function<Tensor<float>(std::span<const std::int32_t>, std::size_t, std::size_t)>;

/// Greedy decoding of the answer span conditioned on id + prompt. Returns one
/// decoded answer per example.
std::vector<std::vector<std::int32_t>> greedy_answers(const LogitsFn& logits, std::span<const TaskExample> examples);

/// Fraction of fresh examples whose greedy answer matches exactly.
double eval_exact_match(const LogitsFn& logits, const Vocab& vocab, Task task, std::size_t n_examples, Rng& rng);
double eval_exact_match(const ModelParams<float>& params, const Vocab& vocab, Task task, std::size_t n_examples,
                        Rng& rng);

}  // namespace sr
