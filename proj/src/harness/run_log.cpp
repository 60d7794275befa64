// SPDX-License-Identifier: Apache-2.0

#include "sr/harness/run_log.hpp"

#include <chrono>
#include <stdexcept>

#ifndef SR_VERSION
#define SR_VERSION "0.1.0"
#endif

namespace sr {

namespace {

std::int64_t now_ns() {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

}  // namespace

std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::completed: return "completed";
    case Outcome::converged: return "converged";
    case Outcome::failed_to_converge: return "failed_to_converge";
    case Outcome::early_stopped: return "early_stopped";
    case Outcome::diverged: return "diverged";
  }
  return "?";
}

std::string version_string() { return SR_VERSION; }

nlohmann::json RunSummary::to_json() const {
  nlohmann::json j = {{"name", name},
                      {"kind", kind},
                      {"config_hash", config_hash},
                      {"version", version},
                      {"outcome", std::string(sr::to_string(outcome))},
                      {"stop_reason", stop_reason},
                      {"steps", steps},
                      {"epochs", epochs},
                      {"target", nullptr},
                      {"steps_to_target", nullptr},
                      {"cpu_ms", cpu_ms},
                      {"wall_ms", wall_ms},
                      {"final", final_metrics}};
  if (target) j["target"] = *target;
  if (steps_to_target) j["steps_to_target"] = *steps_to_target;
  return j;
}

RunLog::RunLog(const std::string& path) : start_ns_(now_ns()) {
  if (path.empty()) return;
  out_.open(path, std::ios::out | std::ios::trunc);
  if (!out_) throw std::runtime_error("cannot write metrics log " + path);
}

std::int64_t RunLog::elapsed_ms() const { return (now_ns() - start_ns_) / 1000000; }

void RunLog::add(std::int64_t step, const std::string& split, const std::string& metric, double value) {
  auto key = std::make_pair(split, metric);
  auto it = last_step_.find(key);
  if (it != last_step_.end() && step <= it->second)
    throw std::logic_error("run log: step " + std::to_string(step) + " does not increase stream " + split + "/" +
                           metric);
  last_step_[key] = step;
  LogRecord r{step, split, metric, value, elapsed_ms()};
  if (out_.is_open()) {
    const nlohmann::json j = {{"step", r.step}, {"split", r.split}, {"metric", r.metric}, {"value", r.value},
                              {"wall_ms", r.wall_ms}};
    out_ << j.dump() << '\n';
    out_.flush();
  }
  records_.push_back(std::move(r));
}

std::vector<std::pair<std::int64_t, double>> RunLog::stream(const std::string& split, const std::string& metric) const {
  std::vector<std::pair<std::int64_t, double>> out;
  for (const auto& r : records_)
    if (r.split == split && r.metric == metric) out.emplace_back(r.step, r.value);
  return out;
}

std::optional<double> RunLog::last(const std::string& split, const std::string& metric) const {
  for (auto it = records_.rbegin(); it != records_.rend(); ++it)
    if (it->split == split && it->metric == metric) return it->value;
  return std::nullopt;
}

std::vector<LogRecord> RunLog::read(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open metrics log " + path);
  std::vector<LogRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("step").get<std::int64_t>(), j.at("split").get<std::string>(),
                     j.at("metric").get<std::string>(), j.at("value").get<double>(), j.at("wall_ms").get<std::int64_t>()});
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": malformed record: " + e.what());
    }
  }
  return out;
}

std::optional<std::int64_t> steps_to_target(const std::vector<LogRecord>& records, double target) {
  for (const auto& r : records)
    if (r.split == "eval" && r.metric == kTargetMetric && r.value <= target) return r.step;
  return std::nullopt;
}

std::optional<std::int64_t> steps_to_target(const RunLog& log) {
  if (!log.summary.target) throw std::invalid_argument("steps_to_target: log is not from a target-loss run");
  if (log.summary.outcome == Outcome::failed_to_converge) return std::nullopt;
  return steps_to_target(log.records(), *log.summary.target);
}

}  // namespace sr
