// SPDX-License-Identifier: Apache-2.0

#include "sr/tasks/markov.hpp"

#include <cmath>
#include <stdexcept>

namespace sr {

namespace {

// Lazy power iteration (P + I) / 2 so periodic chains converge too.
std::vector<double> stationary_of(const std::vector<double>& p, int s) {
  const auto n = static_cast<std::size_t>(s);
  std::vector<double> pi(n, 1.0 / s), next(n);
  for (int iter = 0; iter < 100000; ++iter) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) next[j] += pi[i] * p[i * n + j];
    double delta = 0, total = 0;
    for (std::size_t j = 0; j < n; ++j) {
      next[j] = 0.5 * (next[j] + pi[j]);
      delta += std::abs(next[j] - pi[j]);
      total += next[j];
    }
    for (std::size_t j = 0; j < n; ++j) pi[j] = next[j] / total;
    if (delta < 1e-15) break;
  }
  return pi;
}

}  // namespace

MarkovCorpus make_markov_corpus(Vocab& vocab, std::string name, int states, std::vector<double> transition) {
  if (states <= 0) throw std::invalid_argument("markov: state count must be positive");
  const auto n = static_cast<std::size_t>(states);
  if (transition.size() != n * n) throw std::invalid_argument("markov: transition matrix must be S x S");
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const double v = transition[i * n + j];
      if (!(v >= 0)) throw std::invalid_argument("markov: negative or NaN transition probability");
      row += v;
    }
    if (std::abs(row - 1.0) > 1e-9)
      throw std::invalid_argument("markov: row " + std::to_string(i) + " sums to " + std::to_string(row));
  }
  MarkovCorpus c;
  c.state_base = vocab.ensure_states(states);
  c.corpus_id = vocab.register_source(name);
  c.name = std::move(name);
  c.states = states;
  c.transition = std::move(transition);
  c.stationary = stationary_of(c.transition, states);
  double h = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const double v = c.transition[i * n + j];
      if (v > 0) row -= v * std::log(v);
    }
    h += c.stationary[i] * row;
  }
  c.entropy_rate = h;
  return c;
}

MarkovCorpus make_dirichlet_corpus(Vocab& vocab, std::string name, int states, double alpha, Rng& rng) {
  if (!(alpha > 0)) throw std::invalid_argument("markov: Dirichlet alpha must be positive");
  const auto n = static_cast<std::size_t>(states);
  std::vector<double> p(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0;
    for (std::size_t j = 0; j < n; ++j) total += p[i * n + j] = rng.gamma(alpha);
    if (total == 0) {
      p[i * n + rng.below(n)] = 1;
      total = 1;
    }
    // renormalise twice so the row sum is 1 to rounding
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t j = 0; j < n; ++j) p[i * n + j] /= total;
      total = 0;
      for (std::size_t j = 0; j < n; ++j) total += p[i * n + j];
    }
  }
  return make_markov_corpus(vocab, std::move(name), states, std::move(p));
}

MarkovCorpus make_cycle_corpus(Vocab& vocab, std::string name, int states) {
  const auto n = static_cast<std::size_t>(states);
  std::vector<double> p(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) p[i * n + (i + 1) % n] = 1.0;
  return make_markov_corpus(vocab, std::move(name), states, std::move(p));
}

MarkovCorpus make_uniform_corpus(Vocab& vocab, std::string name, int states) {
  const auto n = static_cast<std::size_t>(states);
  return make_markov_corpus(vocab, std::move(name), states, std::vector<double>(n * n, 1.0 / states));
}

std::vector<MarkovCorpus> default_language_corpora(Vocab& vocab, std::uint64_t seed) {
  Rng a = Rng(seed).split(1), b = Rng(seed).split(2);
  std::vector<MarkovCorpus> out;
  out.push_back(make_dirichlet_corpus(vocab, "lang-A", 24, 0.3, a));
  out.push_back(make_dirichlet_corpus(vocab, "lang-B", 24, 0.3, b));
  return out;
}

TokenBatch gen_markov_batch(const MarkovCorpus& corpus, std::size_t batch, std::size_t len, Rng& rng) {
  if (len < 2) throw std::invalid_argument("gen_markov_batch: T must be >= 2");
  const auto n = static_cast<std::size_t>(corpus.states);
  TokenBatch out(batch, len);
  for (std::size_t b = 0; b < batch; ++b) {
    out.at(b, 0) = corpus.corpus_id;
    auto state = rng.categorical(std::span<const double>(corpus.stationary));
    for (std::size_t t = 1; t < len; ++t) {
      out.at(b, t) = corpus.state_base + static_cast<std::int32_t>(state);
      out.mask[b * len + t] = 1;
      state = rng.categorical(std::span<const double>(corpus.transition.data() + state * n, n));
    }
  }
  return out;
}

double unigram_entropy(const MarkovCorpus& corpus) {
  double h = 0;
  for (double p : corpus.stationary)
    if (p > 0) h -= p * std::log(p);
  return h;
}

}  // namespace sr
