// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint layout (all integers and floats little-endian):
//
//   magic        8 bytes  "SRCKPT01"
//   version      u32      = 1
//   field count  u32      = 7
//   config       i32 x 7  n_layers, d_model, n_heads, d_head, d_ff, vocab_size, max_context
//   tensors      u32      count, then per tensor:
//                  u32 name length, name bytes (UTF-8, no terminator),
//                  u32 rank, u64 x rank extents, f32 x product(extents) values

#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "sr/model/transformer.hpp"

namespace sr {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[8] = {'S', 'R', 'C', 'K', 'P', 'T', '0', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const ModelParams<float>& params);
ModelParams<float> decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params);
ModelParams<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace sr
