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

#ifndef MEMLAB_DATA_H_
#define MEMLAB_DATA_H_

#include <cstdint>
#include <string>
#include <vector>

#include "memlab/model.h"

namespace memlab {

using TokenSeq = std::vector<TokenId>;

struct DuplicationTier {
  int64_t copies = 1;
  double fraction = 1.0;

  bool operator==(const DuplicationTier&) const = default;
};

struct CorpusSpec {
  uint64_t seed = 1;
  int64_t vocab_size = 512;
  int64_t n_background_docs = 16237;  // one per secret copy
  int64_t background_doc_len = 75;
  int64_t n_secrets = 800;
  int64_t secret_len = 75;
  std::vector<DuplicationTier> duplication_profile = {
      {1, 1.0 / 3.0}, {10, 1.0 / 3.0}, {50, 1.0 / 3.0}};

  // Throws kSpec: fractions must sum to 1, copies >= 1, every copy needs its
  // own document, secret_len <= background_doc_len.
  void Validate() const;
  int64_t TotalCopies() const;
  // Secrets per tier by largest remainder, so the counts sum to n_secrets.
  std::vector<int64_t> TierCounts() const;

  bool operator==(const CorpusSpec&) const = default;
};

struct PlantedSecret {
  int64_t id = 0;
  int64_t copies = 0;
  TokenSeq tokens;
};

struct Corpus {
  std::vector<TokenSeq> documents;
  std::vector<PlantedSecret> secrets;
};

// Uniform random background documents. Each copy of each secret overwrites a
// span at a random offset inside its own, distinct document.
Corpus GenerateCorpus(const CorpusSpec& spec);

struct Sequence {
  TokenSeq prefix;
  TokenSeq suffix;
  int64_t secret_id = -1;
  int64_t copies = 0;  // duplication tier of the source secret

  bool operator==(const Sequence&) const = default;
};

struct ExtractionBenchmark {
  int64_t k = 0;
  int64_t s = 0;
  uint64_t split_seed = 0;
  std::vector<Sequence> train;
  std::vector<Sequence> test;
};

// Cuts each secret into its first k tokens (prefix) and next s (suffix),
// shuffles with `seed` and puts round(train_fraction * n) in train.
ExtractionBenchmark MakeBenchmark(const std::vector<PlantedSecret>& secrets,
                                  int64_t k, int64_t s, double train_fraction,
                                  uint64_t seed);

// Keeps the last k tokens or left-pads with pad_id.
TokenSeq NormalizePrefix(const TokenSeq& prefix, int64_t k, TokenId pad_id);

// Text formats. Corpus: one document per line. Benchmark: a header line
// `# k=<k> s=<s> seed=<seed> train=<n> test=<n>`, then one sequence per line as
// `<split> <secret_id> <copies> <prefix ids> | <suffix ids>`.
void WriteCorpus(const std::string& path, const std::vector<TokenSeq>& docs);
std::vector<TokenSeq> ReadCorpus(const std::string& path);
void WriteBenchmark(const std::string& path, const ExtractionBenchmark& bench);
ExtractionBenchmark ReadBenchmark(const std::string& path);

}  // namespace memlab

#endif  // MEMLAB_DATA_H_
