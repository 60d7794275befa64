// SPDX-License-Identifier: Apache-2.0

#include "sr/harness/sweep.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <csignal>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

#include "sr/harness/run_log.hpp"
#include "sr/harness/runner.hpp"

namespace sr {

namespace fs = std::filesystem;
using nlohmann::json;

SweepSpec sweep_spec_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("sweep: spec must be an object");
  SweepSpec s;
  for (const auto& [k, v] : j.items()) {
    if (k == "name") {
      s.name = v.get<std::string>();
    } else if (k == "base") {
      s.base = v;
    } else if (k == "grid") {
      if (!v.is_object()) throw std::invalid_argument("sweep: grid must map paths to value lists");
      for (const auto& [path, values] : v.items())
        if (!values.is_array() || values.empty())
          throw std::invalid_argument("sweep: grid entry " + path + " must be a non-empty list");
      s.grid = v;
    } else if (k == "runs") {
      if (!v.is_array()) throw std::invalid_argument("sweep: runs must be a list of override objects");
      s.runs = v;
    } else if (k == "parallelism") {
      s.parallelism = v.get<int>();
    } else {
      throw std::invalid_argument("sweep: unknown key " + k);
    }
  }
  return s;
}

SweepSpec load_sweep_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open sweep spec " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument("sweep spec " + path + ": " + e.what());
  }
  return sweep_spec_from_json(j);
}

namespace {

SweepPoint make_point(const SweepSpec& spec, const json& overrides) {
  json cfg = spec.base;
  for (const auto& [path, value] : overrides.items()) apply_override(cfg, path + "=" + value.dump());
  return {overrides, run_config_from_json(cfg)};
}

}  // namespace

std::vector<SweepPoint> expand_sweep(const SweepSpec& spec) {
  std::vector<json> combos = {json::object()};
  for (const auto& [path, values] : spec.grid.items()) {
    std::vector<json> next;
    for (const auto& partial : combos)
      for (const auto& v : values) {
        json o = partial;
        o[path] = v;
        next.push_back(o);
      }
    combos = std::move(next);
  }
  if (spec.grid.empty() && !spec.runs.empty()) combos.clear();
  for (const auto& r : spec.runs) {
    if (!r.is_object()) throw std::invalid_argument("sweep: each run must be an override object");
    combos.push_back(r);
  }
  std::vector<SweepPoint> points;
  for (const auto& o : combos) points.push_back(make_point(spec, o));
  if (points.size() > 1)
    for (std::size_t i = 0; i < points.size(); ++i) points[i].config.name += "-" + std::to_string(i);
  for (const auto& p : points) p.config.validate();
  return points;
}

json manifest_json(const SweepSpec& spec, const std::vector<SweepEntry>& entries) {
  json runs = json::array();
  for (const auto& e : entries)
    runs.push_back({{"index", e.index},
                    {"name", e.name},
                    {"dir", e.dir},
                    {"overrides", e.overrides},
                    {"status", e.status},
                    {"detail", e.detail},
                    {"outcome", e.summary.is_object() ? e.summary.value("outcome", "") : ""},
                    {"summary", e.summary}});
  return {{"name", spec.name}, {"version", version_string()}, {"runs", runs}};
}

std::vector<SweepEntry> run_sweep(const SweepSpec& spec, const std::string& out_dir, int parallelism) {
  const auto points = expand_sweep(spec);
  const int limit = std::max(1, parallelism > 0 ? parallelism : spec.parallelism);
  fs::create_directories(fs::path(out_dir) / "runs");

  std::vector<SweepEntry> entries(points.size());
  std::map<pid_t, std::size_t> running;
  std::size_t next = 0;

  auto reap_one = [&] {
    int status = 0;
    const pid_t pid = ::waitpid(-1, &status, 0);
    if (pid < 0) throw std::runtime_error(std::string("sweep: waitpid failed: ") + std::strerror(errno));
    auto it = running.find(pid);
    if (it == running.end()) return;
    SweepEntry& e = entries[it->second];
    running.erase(it);
    if (WIFEXITED(status) && WEXITSTATUS(status) == 0) {
      e.status = "ok";
      e.detail = "exit 0";
      std::ifstream in(fs::path(e.dir) / "run.json");
      if (in) in >> e.summary;
    } else {
      e.status = "failed";
      if (WIFSIGNALED(status)) {
        e.detail = "signal " + std::to_string(WTERMSIG(status));
      } else {
        e.detail = "exit " + std::to_string(WEXITSTATUS(status));
        std::ifstream err(fs::path(e.dir) / "error.txt");
        std::string line;
        if (err && std::getline(err, line)) e.detail += ": " + line;
      }
    }
  };

  while (next < points.size() || !running.empty()) {
    if (next < points.size() && static_cast<int>(running.size()) < limit) {
      const std::size_t i = next++;
      char label[16];
      std::snprintf(label, sizeof label, "%03zu", i);
      SweepEntry& e = entries[i];
      e.index = i;
      e.name = points[i].config.name;
      e.dir = (fs::path(out_dir) / "runs" / label).string();
      e.overrides = points[i].overrides;
      fs::create_directories(e.dir);
      std::fflush(nullptr);
      const pid_t pid = ::fork();
      if (pid < 0) throw std::runtime_error(std::string("sweep: fork failed: ") + std::strerror(errno));
      if (pid == 0) {
        for (int sig : {SIGABRT, SIGSEGV, SIGFPE, SIGILL, SIGBUS}) std::signal(sig, SIG_DFL);
        int code = 0;
        try {
          run_config(points[i].config, e.dir);
        } catch (const std::exception& ex) {
          std::ofstream(fs::path(e.dir) / "error.txt") << ex.what() << "\n";
          code = 2;
        }
        std::fflush(nullptr);
        ::_exit(code);
      }
      running[pid] = i;
      continue;
    }
    reap_one();
  }

  std::ofstream out(fs::path(out_dir) / "manifest.json");
  out << manifest_json(spec, entries).dump(2) << "\n";
  return entries;
}

}  // namespace sr
