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

#ifndef MEMLAB_DECODE_H_
#define MEMLAB_DECODE_H_

#include <cstdint>
#include <vector>

#include "memlab/data.h"
#include "memlab/model.h"
#include "memlab/tensor.h"

namespace memlab {

struct DecodeConfig {
  int64_t beam_size = 1;
  int64_t max_new_tokens = 25;
  // Prefixes decoded together in one forward pass.
  int64_t batch_size = 100;

  void Validate() const;
};

// Appends the argmax token s times; ties go to the lowest id. `prompt` is an
// optional [l, e] soft prompt placed before the prefix.
TokenSeq GreedyDecode(const Model& model, const Tensor* prompt,
                      const TokenSeq& prefix, int64_t s);

// Length-s beam search over summed token log-probabilities without length
// normalisation. Equal scores are ordered by the lexicographically smaller
// sequence. Returns the best completed beam.
TokenSeq BeamDecode(const Model& model, const Tensor* prompt,
                    const TokenSeq& prefix, int64_t s, int64_t beam_size);

// Decodes every prefix (all of the same length) in input order; beam_size 1
// runs greedy decoding.
std::vector<TokenSeq> DecodeAll(const Model& model, const Tensor* prompt,
                                const std::vector<TokenSeq>& prefixes,
                                const DecodeConfig& config);

// Sum of log p(suffix_i | prompt, prefix, suffix_<i).
double SuffixLogProb(const Model& model, const Tensor* prompt,
                     const TokenSeq& prefix, const TokenSeq& suffix);

}  // namespace memlab

#endif  // MEMLAB_DECODE_H_
