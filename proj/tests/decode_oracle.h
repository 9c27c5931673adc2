// Copyright 2026 The Memlab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef MEMLAB_TESTS_DECODE_ORACLE_H_
#define MEMLAB_TESTS_DECODE_ORACLE_H_

#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "memlab/decode.h"
#include "memlab/model.h"

namespace memlab::testing {

// A small random model whose next-token distributions are far from uniform.
inline Model RandomDecodeModel(int64_t vocab, uint64_t seed,
                               int64_t n_layers = 1) {
  ModelConfig cfg;
  cfg.vocab_size = vocab;
  cfg.embed_dim = 8;
  cfg.n_layers = n_layers;
  cfg.n_heads = 2;
  cfg.context_len = 16;
  Model model(cfg, seed);
  std::mt19937_64 rng(seed ^ 0x5eedULL);
  std::normal_distribution<double> n(0.0, 0.7);
  for (Tensor& t : model.Parameters()) {
    for (double& v : t.mutable_data()) v += n(rng);
  }
  return model;
}

inline TokenSeq RandomTokens(int64_t len, int64_t vocab, std::mt19937_64& rng) {
  std::uniform_int_distribution<TokenId> tok(0, static_cast<TokenId>(vocab - 1));
  TokenSeq out(len);
  for (TokenId& t : out) t = tok(rng);
  return out;
}

struct EnumerationResult {
  TokenSeq best;
  double best_score = -std::numeric_limits<double>::infinity();
  double runner_up = -std::numeric_limits<double>::infinity();
};

// Scores all vocab^s suffixes; equal scores keep the lexicographically
// smaller sequence because candidates are visited in lexicographic order.
inline EnumerationResult EnumerateSuffixes(const Model& model,
                                           const TokenSeq& prefix, int64_t s) {
  const int64_t v = model.config().vocab_size;
  EnumerationResult r;
  TokenSeq cand(s, 0);
  while (true) {
    const double score = SuffixLogProb(model, nullptr, prefix, cand);
    if (score > r.best_score) {
      r.runner_up = r.best_score;
      r.best_score = score;
      r.best = cand;
    } else if (score > r.runner_up) {
      r.runner_up = score;
    }
    int64_t i = s - 1;
    while (i >= 0 && cand[i] == v - 1) cand[i--] = 0;
    if (i < 0) break;
    ++cand[i];
  }
  return r;
}

}  // namespace memlab::testing

#endif  // MEMLAB_TESTS_DECODE_ORACLE_H_
