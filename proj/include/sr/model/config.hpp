// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sr {

struct ModelConfig {
  int n_layers = 2;
  int d_model = 64;
  int n_heads = 4;
  int d_head = 16;
  int d_ff = 256;
  int vocab_size = 32;
  int max_context = 256;

  void validate() const {
    auto positive = [](int v, const char* name) {
      if (v <= 0) throw std::invalid_argument(std::string("model config: ") + name + " must be positive");
    };
    positive(n_layers, "n_layers");
    positive(d_model, "d_model");
    positive(n_heads, "n_heads");
    positive(d_head, "d_head");
    positive(d_ff, "d_ff");
    positive(vocab_size, "vocab_size");
    positive(max_context, "max_context");
    if (d_head % 2 != 0) throw std::invalid_argument("model config: d_head must be even for rotary embeddings");
  }

  /// 2·V·d + L·(4·n·d·h + 2·d·f)
  std::size_t param_count() const {
    const std::size_t v = static_cast<std::size_t>(vocab_size), d = static_cast<std::size_t>(d_model);
    const std::size_t n = static_cast<std::size_t>(n_heads), h = static_cast<std::size_t>(d_head);
    const std::size_t f = static_cast<std::size_t>(d_ff), l = static_cast<std::size_t>(n_layers);
    return 2 * v * d + l * (4 * n * d * h + 2 * d * f);
  }

  bool operator==(const ModelConfig&) const = default;
};

}  // namespace sr
