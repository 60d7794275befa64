// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace sr {

/// Integer token matrix [batch, len] plus a per-token target mask: mask 1 at
/// (b, t) means token t is scored as a prediction of the prefix before it.
/// Position 0 (the corpus identifier) is never a target.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t len = 0;
  std::vector<std::int32_t> tokens;
  std::vector<std::uint8_t> mask;

  TokenBatch() = default;
  TokenBatch(std::size_t b, std::size_t t) : batch(b), len(t), tokens(b * t, 0), mask(b * t, 0) {}

  std::int32_t& at(std::size_t b, std::size_t t) { return tokens[b * len + t]; }
  std::int32_t at(std::size_t b, std::size_t t) const { return tokens[b * len + t]; }

  /// Number of scored positions.
  std::size_t target_count() const {
    std::size_t n = 0;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t t = 1; t < len; ++t) n += mask[b * len + t];
    return n;
  }

  /// Model inputs: every row without its last token, [batch, len-1].
  std::vector<std::int32_t> inputs() const {
    std::vector<std::int32_t> out;
    out.reserve(batch * (len - 1));
    for (std::size_t b = 0; b < batch; ++b)
      out.insert(out.end(), tokens.begin() + static_cast<std::ptrdiff_t>(b * len),
                 tokens.begin() + static_cast<std::ptrdiff_t>(b * len + len - 1));
    return out;
  }

  /// Next-token targets aligned with inputs(), [batch, len-1].
  std::vector<std::int32_t> targets() const {
    std::vector<std::int32_t> out;
    out.reserve(batch * (len - 1));
    for (std::size_t b = 0; b < batch; ++b)
      out.insert(out.end(), tokens.begin() + static_cast<std::ptrdiff_t>(b * len + 1),
                 tokens.begin() + static_cast<std::ptrdiff_t>((b + 1) * len));
    return out;
  }

  /// Loss mask aligned with targets().
  template <class T>
  std::vector<T> target_mask() const {
    std::vector<T> out;
    out.reserve(batch * (len - 1));
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t t = 1; t < len; ++t) out.push_back(mask[b * len + t] ? T(1) : T(0));
    return out;
  }

  /// Stacks the rows of `other` below this batch; lengths must agree.
  void append_rows(const TokenBatch& other) {
    if (batch == 0) {
      *this = other;
      return;
    }
    if (other.len != len) throw std::invalid_argument("TokenBatch: cannot stack rows of different lengths");
    tokens.insert(tokens.end(), other.tokens.begin(), other.tokens.end());
    mask.insert(mask.end(), other.mask.begin(), other.mask.end());
    batch += other.batch;
  }

  TokenBatch rows(std::size_t first, std::size_t count) const {
    TokenBatch out(count, len);
    std::copy_n(tokens.begin() + static_cast<std::ptrdiff_t>(first * len), count * len, out.tokens.begin());
    std::copy_n(mask.begin() + static_cast<std::ptrdiff_t>(first * len), count * len, out.mask.begin());
    return out;
  }

  bool operator==(const TokenBatch&) const = default;
};

}  // namespace sr
