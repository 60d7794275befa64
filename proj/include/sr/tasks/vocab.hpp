// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace sr {

/// Token table. The fixed part (pad, digits, separators, task words) comes
/// first; corpus identifiers and Markov state tokens follow in registration
/// order, so ids are stable for a stable registration sequence.
class Vocab {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kDigit0 = 1;
  static constexpr std::int32_t kBar = 11;
  static constexpr std::int32_t kEquals = 12;
  static constexpr std::int32_t kTaskBase = 13;  // add, reversal, sort, modadd

  Vocab();

  /// Adds a corpus identifier token `<name>` and returns its id. Registering
  /// the same name twice is an error.
  std::int32_t register_source(std::string_view name);

  /// Ensures state tokens s0..s{count-1} exist and returns the id of s0.
  /// State tokens are shared by every corpus that uses them.
  std::int32_t ensure_states(int count);

  std::int32_t id(std::string_view token) const;
  bool contains(std::string_view token) const { return index_.count(std::string(token)) != 0; }
  std::int32_t source_id(std::string_view name) const { return id("<" + std::string(name) + ">"); }
  bool is_source(std::int32_t id) const;
  const std::string& token(std::int32_t id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// Whitespace-separated text to ids; unknown words throw.
  std::vector<std::int32_t> tokenize(std::string_view text) const;
  /// Ids to space-joined text. Pads are kept unless strip_pad.
  std::string detokenize(std::span<const std::int32_t> ids, bool strip_pad = false) const;

 private:
  std::int32_t push(std::string token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
  std::vector<std::int32_t> sources_;
  int states_ = 0;
};

}  // namespace sr
