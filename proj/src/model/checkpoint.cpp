// SPDX-License-Identifier: Apache-2.0

#include "sr/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace sr {
namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint64_t take(int width) {
    if (pos_ + static_cast<std::size_t>(width) > bytes_.size()) throw CheckpointError("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(take(4)); }
  std::uint64_t u64() { return take(8); }
  std::string str(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw CheckpointError("checkpoint: truncated file");
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const ModelParams<float>& params) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_u32(out, kCheckpointVersion);
  const ModelConfig& c = params.config;
  const int fields[] = {c.n_layers, c.d_model, c.n_heads, c.d_head, c.d_ff, c.vocab_size, c.max_context};
  put_u32(out, static_cast<std::uint32_t>(std::size(fields)));
  for (int f : fields) put_u32(out, static_cast<std::uint32_t>(f));
  put_u32(out, static_cast<std::uint32_t>(params.tensors.size()));
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    const std::string& name = params.names.at(i);
    const Tensor<float>& t = params.tensors[i];
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) put_u64(out, e);
    for (float v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

ModelParams<float> decode_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (in.str(sizeof(kCheckpointMagic)) != std::string(kCheckpointMagic, sizeof(kCheckpointMagic)))
    throw CheckpointError("checkpoint: bad magic");
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t nfields = in.u32();
  if (nfields != 7) throw CheckpointError("checkpoint: unexpected config field count");
  ModelConfig c;
  int* fields[] = {&c.n_layers, &c.d_model, &c.n_heads, &c.d_head, &c.d_ff, &c.vocab_size, &c.max_context};
  for (int* f : fields) *f = static_cast<int>(static_cast<std::int32_t>(in.u32()));
  c.validate();

  ModelParams<float> expected = zero_params<float>(c);
  const std::uint32_t count = in.u32();
  if (count != expected.tensors.size()) throw CheckpointError("checkpoint: tensor count does not match config");
  for (std::size_t i = 0; i < count; ++i) {
    const std::string name = in.str(in.u32());
    if (name != expected.names[i]) throw CheckpointError("checkpoint: expected tensor " + expected.names[i] + ", found " + name);
    const std::uint32_t rank = in.u32();
    Shape shape(rank);
    for (auto& e : shape) e = in.u64();
    if (shape != expected.tensors[i].shape())
      throw CheckpointError("checkpoint: tensor " + name + " has shape " + shape_str(shape) + ", config implies " +
                            shape_str(expected.tensors[i].shape()));
    for (float& v : expected.tensors[i].data()) v = std::bit_cast<float>(in.u32());
  }
  if (!in.done()) throw CheckpointError("checkpoint: trailing bytes");
  return expected;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("checkpoint: cannot write " + path.string());
  const std::string bytes = encode_checkpoint(params);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError("checkpoint: write failed for " + path.string());
}

ModelParams<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("checkpoint: cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace sr
