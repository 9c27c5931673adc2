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

#include "memlab/data.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "memlab/error.h"
#include "memlab/random.h"

namespace memlab {
namespace {

TokenSeq RandomTokens(Rng& rng, int64_t n, int64_t vocab) {
  TokenSeq out(n);
  for (TokenId& t : out) t = static_cast<TokenId>(UniformInt(rng, 0, vocab - 1));
  return out;
}

TokenSeq ParseIds(const std::string& text, const std::string& where) {
  std::istringstream in(text);
  TokenSeq out;
  for (std::string word; in >> word;) {
    try {
      size_t used = 0;
      const long v = std::stol(word, &used);
      if (used != word.size() || v < 0 || v > INT32_MAX) throw std::exception();
      out.push_back(static_cast<TokenId>(v));
    } catch (const std::exception&) {
      throw Error(ErrorCode::kFormat,
                  fmt::format("{}: bad token id '{}'", where, word));
    }
  }
  return out;
}

std::string JoinIds(const TokenSeq& ids) { return fmt::format("{}", fmt::join(ids, " ")); }

}  // namespace

void CorpusSpec::Validate() const {
  auto fail = [](const std::string& msg) {
    throw Error(ErrorCode::kSpec, "corpus spec: " + msg);
  };
  if (vocab_size < 1) fail("vocab_size must be >= 1");
  if (n_background_docs < 0 || n_secrets < 0) fail("counts must be >= 0");
  if (background_doc_len < 1) fail("background_doc_len must be >= 1");
  if (secret_len < 1) fail("secret_len must be >= 1");
  if (secret_len > background_doc_len) {
    fail(fmt::format("secret_len {} exceeds background_doc_len {}", secret_len,
                     background_doc_len));
  }
  if (duplication_profile.empty()) fail("duplication_profile is empty");
  double total = 0.0;
  for (const DuplicationTier& tier : duplication_profile) {
    if (tier.copies < 1) fail("tier copies must be >= 1");
    if (!(tier.fraction >= 0.0)) fail("tier fractions must be >= 0");
    total += tier.fraction;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    fail(fmt::format("tier fractions sum to {}, not 1", total));
  }
  if (TotalCopies() > n_background_docs) {
    fail(fmt::format("{} secret copies need as many documents, have {}",
                     TotalCopies(), n_background_docs));
  }
}

std::vector<int64_t> CorpusSpec::TierCounts() const {
  const size_t n = duplication_profile.size();
  std::vector<int64_t> counts(n);
  std::vector<std::pair<double, size_t>> remainders;
  int64_t assigned = 0;
  for (size_t i = 0; i < n; ++i) {
    const double exact = duplication_profile[i].fraction * n_secrets;
    counts[i] = static_cast<int64_t>(std::floor(exact));
    assigned += counts[i];
    remainders.push_back({exact - counts[i], i});
  }
  // Larger remainder first; earlier tier wins ties.
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (size_t i = 0; assigned < n_secrets && i < n; ++i, ++assigned) {
    ++counts[remainders[i].second];
  }
  return counts;
}

int64_t CorpusSpec::TotalCopies() const {
  const std::vector<int64_t> counts = TierCounts();
  int64_t total = 0;
  for (size_t i = 0; i < counts.size(); ++i) {
    total += counts[i] * duplication_profile[i].copies;
  }
  return total;
}

Corpus GenerateCorpus(const CorpusSpec& spec) {
  spec.Validate();
  Corpus corpus;
  Rng background = MakeRng(spec.seed, Stream::kBackground);
  corpus.documents.reserve(spec.n_background_docs);
  for (int64_t d = 0; d < spec.n_background_docs; ++d) {
    corpus.documents.push_back(
        RandomTokens(background, spec.background_doc_len, spec.vocab_size));
  }

  Rng secret_rng = MakeRng(spec.seed, Stream::kSecrets);
  const std::vector<int64_t> counts = spec.TierCounts();
  for (size_t tier = 0; tier < counts.size(); ++tier) {
    for (int64_t i = 0; i < counts[tier]; ++i) {
      PlantedSecret secret;
      secret.id = static_cast<int64_t>(corpus.secrets.size());
      secret.copies = spec.duplication_profile[tier].copies;
      secret.tokens = RandomTokens(secret_rng, spec.secret_len, spec.vocab_size);
      corpus.secrets.push_back(std::move(secret));
    }
  }

  // One copy per document, in shuffled document order.
  Rng placement = MakeRng(spec.seed, Stream::kPlacement);
  std::vector<int64_t> order(spec.n_background_docs);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), placement);
  size_t next = 0;
  for (const PlantedSecret& secret : corpus.secrets) {
    for (int64_t c = 0; c < secret.copies; ++c) {
      TokenSeq& doc = corpus.documents[order[next++]];
      const int64_t offset =
          UniformInt(placement, 0, spec.background_doc_len - spec.secret_len);
      std::copy(secret.tokens.begin(), secret.tokens.end(),
                doc.begin() + offset);
    }
  }
  return corpus;
}

ExtractionBenchmark MakeBenchmark(const std::vector<PlantedSecret>& secrets,
                                  int64_t k, int64_t s, double train_fraction,
                                  uint64_t seed) {
  if (k < 1 || s < 1) {
    throw Error(ErrorCode::kLength,
                fmt::format("benchmark needs k >= 1 and s >= 1, got {}, {}", k, s));
  }
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0)) {
    throw Error(ErrorCode::kSpec,
                fmt::format("train fraction {} outside [0, 1]", train_fraction));
  }
  std::vector<Sequence> all;
  all.reserve(secrets.size());
  for (const PlantedSecret& secret : secrets) {
    if (static_cast<int64_t>(secret.tokens.size()) < k + s) {
      throw Error(ErrorCode::kLength,
                  fmt::format("secret {} has {} tokens, need k + s = {}",
                              secret.id, secret.tokens.size(), k + s));
    }
    Sequence seq;
    seq.prefix.assign(secret.tokens.begin(), secret.tokens.begin() + k);
    seq.suffix.assign(secret.tokens.begin() + k, secret.tokens.begin() + k + s);
    seq.secret_id = secret.id;
    seq.copies = secret.copies;
    all.push_back(std::move(seq));
  }
  Rng rng = MakeRng(seed, Stream::kSplit);
  std::shuffle(all.begin(), all.end(), rng);
  const auto n_train = static_cast<size_t>(
      std::llround(train_fraction * static_cast<double>(all.size())));
  ExtractionBenchmark bench;
  bench.k = k;
  bench.s = s;
  bench.split_seed = seed;
  bench.train.assign(all.begin(), all.begin() + n_train);
  bench.test.assign(all.begin() + n_train, all.end());
  return bench;
}

TokenSeq NormalizePrefix(const TokenSeq& prefix, int64_t k, TokenId pad_id) {
  if (k < 1) throw Error(ErrorCode::kLength, "normalize_prefix: k must be >= 1");
  const auto n = static_cast<int64_t>(prefix.size());
  if (n >= k) return TokenSeq(prefix.end() - k, prefix.end());
  TokenSeq out(k - n, pad_id);
  out.insert(out.end(), prefix.begin(), prefix.end());
  return out;
}

void WriteCorpus(const std::string& path, const std::vector<TokenSeq>& docs) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, fmt::format("cannot open '{}'", path));
  for (const TokenSeq& doc : docs) out << JoinIds(doc) << '\n';
  if (!out) throw Error(ErrorCode::kIo, fmt::format("write to '{}' failed", path));
}

std::vector<TokenSeq> ReadCorpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, fmt::format("cannot open '{}'", path));
  std::vector<TokenSeq> docs;
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    docs.push_back(ParseIds(line, fmt::format("{}:{}", path, line_no)));
  }
  return docs;
}

void WriteBenchmark(const std::string& path, const ExtractionBenchmark& bench) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, fmt::format("cannot open '{}'", path));
  out << fmt::format("# k={} s={} seed={} train={} test={}\n", bench.k, bench.s,
                     bench.split_seed, bench.train.size(), bench.test.size());
  auto write = [&](const char* split, const std::vector<Sequence>& seqs) {
    for (const Sequence& seq : seqs) {
      out << fmt::format("{} {} {} {} | {}\n", split, seq.secret_id, seq.copies,
                         JoinIds(seq.prefix), JoinIds(seq.suffix));
    }
  };
  write("train", bench.train);
  write("test", bench.test);
  if (!out) throw Error(ErrorCode::kIo, fmt::format("write to '{}' failed", path));
}

ExtractionBenchmark ReadBenchmark(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, fmt::format("cannot open '{}'", path));
  ExtractionBenchmark bench;
  std::string header;
  size_t n_train = 0, n_test = 0;
  if (!std::getline(in, header) ||
      std::sscanf(header.c_str(), "# k=%ld s=%ld seed=%lu train=%zu test=%zu",
                  &bench.k, &bench.s, &bench.split_seed, &n_train,
                  &n_test) != 5) {
    throw Error(ErrorCode::kFormat, fmt::format("{}: bad header", path));
  }
  int line_no = 1;
  for (std::string line; std::getline(in, line);) {
    const std::string where = fmt::format("{}:{}", path, ++line_no);
    const size_t bar = line.find('|');
    std::istringstream head(line.substr(0, bar));
    std::string split;
    Sequence seq;
    if (bar == std::string::npos || !(head >> split >> seq.secret_id >> seq.copies)) {
      throw Error(ErrorCode::kFormat, where + ": malformed sequence line");
    }
    std::string rest;
    std::getline(head, rest);
    seq.prefix = ParseIds(rest, where);
    seq.suffix = ParseIds(line.substr(bar + 1), where);
    if (static_cast<int64_t>(seq.prefix.size()) != bench.k ||
        static_cast<int64_t>(seq.suffix.size()) != bench.s) {
      throw Error(ErrorCode::kLength, where + ": prefix/suffix length mismatch");
    }
    if (split == "train") {
      bench.train.push_back(std::move(seq));
    } else if (split == "test") {
      bench.test.push_back(std::move(seq));
    } else {
      throw Error(ErrorCode::kFormat, where + ": unknown split '" + split + "'");
    }
  }
  if (bench.train.size() != n_train || bench.test.size() != n_test) {
    throw Error(ErrorCode::kFormat, fmt::format("{}: split sizes disagree with header", path));
  }
  return bench;
}

}  // namespace memlab
