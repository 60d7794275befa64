// SPDX-License-Identifier: Apache-2.0
//
// First-order Markov chains over shared state tokens, one corpus identifier
// per chain. Used as cheap stand-ins for natural-language corpora with a
// known entropy floor.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sr/model/token_batch.hpp"
#include "sr/numerics/random.hpp"
#include "sr/tasks/vocab.hpp"

namespace sr {

struct MarkovCorpus {
  std::string name;
  std::int32_t corpus_id = 0;
  std::int32_t state_base = 0;  // id of s0
  int states = 0;
  std::vector<double> transition;  // [S, S] row major
  std::vector<double> stationary;
  double entropy_rate = 0;  // nats per token

  double p(int from, int to) const { return transition[static_cast<std::size_t>(from * states + to)]; }
};

/// Registers the corpus identifier (and state tokens if needed) and derives
/// the stationary distribution and entropy rate. Rows must sum to 1 within
/// 1e-9.
MarkovCorpus make_markov_corpus(Vocab& vocab, std::string name, int states, std::vector<double> transition);

/// Rows drawn from a symmetric Dirichlet(alpha).
MarkovCorpus make_dirichlet_corpus(Vocab& vocab, std::string name, int states, double alpha, Rng& rng);

/// s_i -> s_{i+1 mod S} with probability 1.
MarkovCorpus make_cycle_corpus(Vocab& vocab, std::string name, int states);

/// Every transition equally likely.
MarkovCorpus make_uniform_corpus(Vocab& vocab, std::string name, int states);

/// The two default "languages": S=24, alpha=0.3, shared state tokens,
/// transitions drawn from independent streams of `seed`.
std::vector<MarkovCorpus> default_language_corpora(Vocab& vocab, std::uint64_t seed);

/// Stationary start state, then transitions; T tokens per row including the
/// identifier. Every token after the identifier is a target.
TokenBatch gen_markov_batch(const MarkovCorpus& corpus, std::size_t batch, std::size_t len, Rng& rng);

/// Per-token loss of the best unigram predictor (stationary entropy).
double unigram_entropy(const MarkovCorpus& corpus);

}  // namespace sr
