// SPDX-License-Identifier: Apache-2.0

#include "sr/optim/stopping.hpp"

#include <algorithm>

namespace sr {

std::string_view to_string(StopReason reason) {
  switch (reason) {
    case StopReason::none: return "none";
    case StopReason::steps_done: return "steps_done";
    case StopReason::target_reached: return "target_reached";
    case StopReason::max_epochs_exceeded: return "max_epochs_exceeded";
    case StopReason::no_improvement: return "no_improvement";
  }
  return "unknown";
}

StopDecision should_stop(const StoppingRule& rule, std::span<const double> history, double epochs_elapsed,
                         std::int64_t steps_done) {
  StopDecision d;
  if (!history.empty())
    d.best = static_cast<std::size_t>(std::min_element(history.begin(), history.end()) - history.begin());

  switch (rule.kind) {
    case StoppingRule::Kind::fixed_steps:
      if (steps_done >= rule.steps) {
        d.stop = true;
        d.success = true;
        d.reason = StopReason::steps_done;
      }
      return d;
    case StoppingRule::Kind::target_loss:
      if (!history.empty() && history.back() <= rule.target) {
        d.stop = true;
        d.success = true;
        d.reason = StopReason::target_reached;
      } else if (epochs_elapsed > rule.max_epochs) {
        d.stop = true;
        d.reason = StopReason::max_epochs_exceeded;
      }
      break;
    case StoppingRule::Kind::early_stopping:
      if (!history.empty() && history.size() - 1 - *d.best >= static_cast<std::size_t>(rule.patience)) {
        d.stop = true;
        d.success = true;
        d.reason = StopReason::no_improvement;
      }
      break;
  }
  if (!d.stop && rule.steps > 0 && steps_done >= rule.steps) {
    d.stop = true;
    d.reason = StopReason::steps_done;
  }
  return d;
}

}  // namespace sr
