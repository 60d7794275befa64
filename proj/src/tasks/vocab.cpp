// SPDX-License-Identifier: Apache-2.0

#include "sr/tasks/vocab.hpp"

#include <algorithm>
#include <stdexcept>

namespace sr {

Vocab::Vocab() {
  push("<pad>");
  for (char c = '0'; c <= '9'; ++c) push(std::string(1, c));
  push("|");
  push("=");
  for (const char* w : {"add", "reversal", "sort", "modadd"}) push(w);
}

std::int32_t Vocab::push(std::string token) {
  if (index_.count(token)) throw std::invalid_argument("vocab: duplicate token " + token);
  const auto id = static_cast<std::int32_t>(tokens_.size());
  index_.emplace(token, id);
  tokens_.push_back(std::move(token));
  return id;
}

std::int32_t Vocab::register_source(std::string_view name) {
  if (name.empty() || name.find_first_of(" \t\n<>") != std::string_view::npos)
    throw std::invalid_argument("vocab: bad source name '" + std::string(name) + "'");
  const std::int32_t id = push("<" + std::string(name) + ">");
  sources_.push_back(id);
  return id;
}

std::int32_t Vocab::ensure_states(int count) {
  if (count <= 0) throw std::invalid_argument("vocab: state count must be positive");
  if (states_ == 0) {
    for (int i = 0; i < count; ++i) push("s" + std::to_string(i));
    states_ = count;
  } else if (count > states_) {
    throw std::invalid_argument("vocab: state tokens already registered with a smaller count");
  }
  return id("s0");
}

std::int32_t Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) throw std::out_of_range("vocab: unknown token '" + std::string(token) + "'");
  return it->second;
}

bool Vocab::is_source(std::int32_t id) const { return std::find(sources_.begin(), sources_.end(), id) != sources_.end(); }

const std::string& Vocab::token(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw std::out_of_range("vocab: id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::int32_t> Vocab::tokenize(std::string_view text) const {
  std::vector<std::int32_t> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && text[i] == ' ') ++i;
    std::size_t j = i;
    while (j < text.size() && text[j] != ' ') ++j;
    if (j > i) out.push_back(id(text.substr(i, j - i)));
    i = j;
  }
  return out;
}

std::string Vocab::detokenize(std::span<const std::int32_t> ids, bool strip_pad) const {
  std::string out;
  for (std::int32_t t : ids) {
    if (strip_pad && t == kPad) continue;
    if (!out.empty()) out += ' ';
    out += token(t);
  }
  return out;
}

}  // namespace sr
