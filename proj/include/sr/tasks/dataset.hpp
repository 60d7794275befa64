// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "sr/model/token_batch.hpp"
#include "sr/numerics/random.hpp"

namespace sr {

/// A finite set of sequences served in shuffled epochs. Batches never straddle
/// an epoch boundary out of order: each epoch is one permutation, consumed in
/// order, wrapping into the next permutation when exhausted.
class SequencePool {
 public:
  SequencePool() = default;
  SequencePool(TokenBatch rows, Rng rng) : rows_(std::move(rows)), rng_(std::move(rng)) {
    if (rows_.batch == 0) throw std::invalid_argument("SequencePool: empty pool");
    reshuffle();
  }

  std::size_t size() const { return rows_.batch; }
  std::size_t seq_len() const { return rows_.len; }
  const TokenBatch& rows() const { return rows_; }
  /// Total scored tokens, the denominator of epoch accounting.
  std::size_t token_count() const { return rows_.batch * rows_.len; }
  std::uint64_t served() const { return served_; }
  double epochs() const { return static_cast<double>(served_) / static_cast<double>(rows_.batch); }

  TokenBatch next(std::size_t batch) {
    TokenBatch out(batch, rows_.len);
    for (std::size_t i = 0; i < batch; ++i) {
      if (cursor_ == order_.size()) reshuffle();
      const std::size_t r = order_[cursor_++];
      std::copy_n(rows_.tokens.begin() + static_cast<std::ptrdiff_t>(r * rows_.len), rows_.len,
                  out.tokens.begin() + static_cast<std::ptrdiff_t>(i * rows_.len));
      std::copy_n(rows_.mask.begin() + static_cast<std::ptrdiff_t>(r * rows_.len), rows_.len,
                  out.mask.begin() + static_cast<std::ptrdiff_t>(i * rows_.len));
    }
    served_ += batch;
    return out;
  }

 private:
  void reshuffle() {
    order_.resize(rows_.batch);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_.below(i)]);
    cursor_ = 0;
  }

  TokenBatch rows_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::uint64_t served_ = 0;
};

}  // namespace sr
