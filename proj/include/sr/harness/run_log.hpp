// SPDX-License-Identifier: Apache-2.0
//
// Metrics log: one JSON object per line,
//   {"step": 120, "split": "eval", "metric": "loss/lang-A", "value": 2.31, "wall_ms": 5012}
// plus a run summary written once at the end.

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace sr {

struct LogRecord {
  std::int64_t step = 0;
  std::string split;
  std::string metric;
  double value = 0;
  std::int64_t wall_ms = 0;

  /// Equality on everything except wall time.
  bool same_metric(const LogRecord& o) const {
    return step == o.step && split == o.split && metric == o.metric &&
           std::memcmp(&value, &o.value, sizeof value) == 0;
  }
};

enum class Outcome { completed, converged, failed_to_converge, early_stopped, diverged };
std::string_view to_string(Outcome o);

struct RunSummary {
  std::string name;
  std::string kind;
  std::string config_hash;
  std::string version;
  Outcome outcome = Outcome::completed;
  std::string stop_reason = "none";
  std::int64_t steps = 0;
  double epochs = 0;
  std::optional<double> target;
  std::optional<std::int64_t> steps_to_target;
  double cpu_ms = 0;
  double wall_ms = 0;
  std::map<std::string, double> final_metrics;

  nlohmann::json to_json() const;
};

class RunLog {
 public:
  RunLog() = default;
  /// Records are also appended to `path` as they arrive (empty: memory only).
  explicit RunLog(const std::string& path);

  /// Appends a record. Steps must strictly increase within a (split, metric)
  /// stream.
  void add(std::int64_t step, const std::string& split, const std::string& metric, double value);

  const std::vector<LogRecord>& records() const { return records_; }
  /// Values of one stream in step order.
  std::vector<std::pair<std::int64_t, double>> stream(const std::string& split, const std::string& metric) const;
  std::optional<double> last(const std::string& split, const std::string& metric) const;

  RunSummary summary;

  static std::vector<LogRecord> read(const std::string& path);

 private:
  std::int64_t elapsed_ms() const;

  std::vector<LogRecord> records_;
  std::map<std::pair<std::string, std::string>, std::int64_t> last_step_;
  std::ofstream out_;
  std::int64_t start_ns_ = 0;
};

std::string version_string();

/// First eval step at which the target metric met the summary's target, or
/// nothing when the run never got there.
std::optional<std::int64_t> steps_to_target(const RunLog& log);
std::optional<std::int64_t> steps_to_target(const std::vector<LogRecord>& records, double target);

inline constexpr const char* kTargetMetric = "target_metric";

}  // namespace sr
