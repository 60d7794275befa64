// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>

namespace sr {

struct StoppingRule {
  enum class Kind { fixed_steps, target_loss, early_stopping };
  Kind kind = Kind::fixed_steps;
  std::int64_t steps = 1000;   // fixed_steps; also a hard cap for the other kinds when > 0
  double target = 0;           // target_loss, nats
  std::int64_t eval_every = 200;
  double max_epochs = 100;     // target_loss: exceeding this is a failure to converge
  int patience = 3;            // early_stopping, counted in evaluations

  static StoppingRule fixed(std::int64_t n, std::int64_t eval_every = 200) {
    StoppingRule r;
    r.kind = Kind::fixed_steps;
    r.steps = n;
    r.eval_every = eval_every;
    return r;
  }
  static StoppingRule target_loss(double target, std::int64_t eval_every = 200, double max_epochs = 100) {
    StoppingRule r;
    r.kind = Kind::target_loss;
    r.target = target;
    r.eval_every = eval_every;
    r.max_epochs = max_epochs;
    r.steps = 0;
    return r;
  }
  static StoppingRule early(int patience, std::int64_t eval_every = 200) {
    StoppingRule r;
    r.kind = Kind::early_stopping;
    r.patience = patience;
    r.eval_every = eval_every;
    r.steps = 0;
    return r;
  }
};

enum class StopReason { none, steps_done, target_reached, max_epochs_exceeded, no_improvement };

std::string_view to_string(StopReason reason);

struct StopDecision {
  bool stop = false;
  StopReason reason = StopReason::none;
  bool success = false;
  /// Index into the eval history of the best evaluation (early stopping
  /// restores this one).
  std::optional<std::size_t> best;
};

/// Decision after the latest evaluation. `history` holds eval losses in step
/// order; `steps_done` is only consulted for the fixed-step cap.
StopDecision should_stop(const StoppingRule& rule, std::span<const double> history, double epochs_elapsed,
                         std::int64_t steps_done = 0);

}  // namespace sr
