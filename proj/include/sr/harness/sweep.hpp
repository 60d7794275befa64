// SPDX-License-Identifier: Apache-2.0
//
// Grid sweeps. A sweep file looks like
//   {"name": "frontier", "base": {...run config...},
//    "grid": {"replay.lambda": [0, 0.1, 1, 10]}, "parallelism": 1}
// Every grid point runs in its own child process under
// <out>/runs/<index>/ and <out>/manifest.json indexes the results.

#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "sr/harness/config.hpp"

namespace sr {

struct SweepSpec {
  std::string name = "sweep";
  nlohmann::json base = nlohmann::json::object();
  nlohmann::json grid = nlohmann::json::object();  // dotted path -> list of values
  nlohmann::json runs = nlohmann::json::array();   // explicit override objects, after the grid
  int parallelism = 1;
};

SweepSpec sweep_spec_from_json(const nlohmann::json& j);
SweepSpec load_sweep_spec(const std::string& path);

struct SweepPoint {
  nlohmann::json overrides;  // dotted path -> value
  RunConfig config;
};

/// Cartesian product of the grid (keys in sorted order) followed by the
/// explicit runs. A single point keeps the base name; otherwise names get an
/// index suffix.
std::vector<SweepPoint> expand_sweep(const SweepSpec& spec);

struct SweepEntry {
  std::size_t index = 0;
  std::string name;
  std::string dir;
  nlohmann::json overrides;
  std::string status;  // ok | failed
  std::string detail;  // exit code, signal or error text
  nlohmann::json summary;  // run.json of successful runs
};

/// Runs every point, at most `parallelism` at a time (spec value when <= 0),
/// and writes manifest.json. A failing run is recorded and the sweep goes on.
std::vector<SweepEntry> run_sweep(const SweepSpec& spec, const std::string& out_dir, int parallelism = 0);

nlohmann::json manifest_json(const SweepSpec& spec, const std::vector<SweepEntry>& entries);

}  // namespace sr
