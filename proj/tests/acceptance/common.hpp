// SPDX-License-Identifier: Apache-2.0
//
// Shared pieces of the acceptance suite.

#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace sr::acceptance {

struct Verdict {
  bool pass = false;
  std::string detail;
};

struct Context {
  std::filesystem::path out_dir;  // scratch space for run outputs
  bool verbose = false;
};

struct Criterion {
  int id;
  std::string name;
  std::function<Verdict(const Context&)> run;
};

Verdict gradient_correctness(const Context& ctx);
Verdict estimator_check(const Context& ctx);
Verdict curriculum(const Context& ctx);
Verdict mlp_toy(const Context& ctx);
Verdict flow_limit(const Context& ctx);
Verdict mixed_replay(const Context& ctx);
Verdict overtraining(const Context& ctx);
Verdict lambda_frontier(const Context& ctx);
Verdict determinism(const Context& ctx);

/// printf-style formatting into a std::string.
std::string fmt(const char* format, ...);

/// Progress line on stderr when ctx.verbose is set.
void note(const Context& ctx, const std::string& line);

}  // namespace sr::acceptance
