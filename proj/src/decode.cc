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

#include "memlab/decode.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "memlab/error.h"
#include "memlab/ops.h"

namespace memlab {
namespace {

// Logits of the last row of every input row sequence, as [B, V] row-major.
std::vector<double> LastLogits(const Model& model, const Tensor* prompt,
                               const std::vector<TokenSeq>& rows) {
  Tape tape;  // nothing is tracked during decoding
  const int64_t b = static_cast<int64_t>(rows.size());
  const int64_t t = static_cast<int64_t>(rows.front().size());
  const int64_t l = prompt != nullptr ? prompt->dim(0) : 0;
  const int64_t e = model.config().embed_dim;
  Tensor hidden = Reshape(
      tape, model.ForwardHidden(tape, model.EmbedBatch(tape, rows, prompt)),
      {b * (l + t), e});
  std::vector<int64_t> last(b);
  for (int64_t i = 0; i < b; ++i) last[i] = i * (l + t) + l + t - 1;
  Tensor logits = model.Logits(tape, GatherRows(tape, hidden, last));
  return {logits.data().begin(), logits.data().end()};
}

void CheckDecodeInputs(const Model& model, const Tensor* prompt,
                       const TokenSeq& prefix, int64_t s) {
  if (prefix.empty()) {
    throw Error(ErrorCode::kEmptyInput, "decode: prefix is empty");
  }
  if (s < 1) throw Error(ErrorCode::kConfig, "decode: s must be >= 1");
  const int64_t l = prompt != nullptr ? prompt->dim(0) : 0;
  // The last generated token is never fed back.
  const int64_t rows = l + static_cast<int64_t>(prefix.size()) + s - 1;
  if (rows > model.config().context_len) {
    throw Error(ErrorCode::kContextOverflow,
                fmt::format("decode: {} prompt + {} prefix + {} new tokens "
                            "exceed context length {}",
                            l, prefix.size(), s, model.config().context_len));
  }
}

TokenId Argmax(const double* row, int64_t v) {
  int64_t best = 0;
  for (int64_t j = 1; j < v; ++j) {
    if (row[j] > row[best]) best = j;
  }
  return static_cast<TokenId>(best);
}

double LogSumExp(const double* row, int64_t v) {
  const double mx = *std::max_element(row, row + v);
  double z = 0.0;
  for (int64_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
  return mx + std::log(z);
}

struct Beam {
  TokenSeq tokens;  // generated so far
  double score = 0.0;
};

// Higher score first; equal scores by lexicographically smaller tokens.
bool BeamBefore(const Beam& a, const Beam& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.tokens < b.tokens;
}

std::vector<TokenSeq> GreedyBatch(const Model& model, const Tensor* prompt,
                                  const std::vector<TokenSeq>& prefixes,
                                  int64_t s) {
  const int64_t v = model.config().vocab_size;
  std::vector<TokenSeq> rows = prefixes;
  std::vector<TokenSeq> out(prefixes.size());
  for (int64_t step = 0; step < s; ++step) {
    const std::vector<double> logits = LastLogits(model, prompt, rows);
    for (size_t i = 0; i < rows.size(); ++i) {
      const TokenId next = Argmax(logits.data() + i * v, v);
      out[i].push_back(next);
      if (step + 1 < s) rows[i].push_back(next);
    }
  }
  return out;
}

std::vector<TokenSeq> BeamBatch(const Model& model, const Tensor* prompt,
                                const std::vector<TokenSeq>& prefixes,
                                int64_t s, int64_t beam_size) {
  const int64_t v = model.config().vocab_size;
  const size_t n = prefixes.size();
  std::vector<std::vector<Beam>> beams(n, std::vector<Beam>(1));
  const auto per_beam = static_cast<size_t>(std::min<int64_t>(beam_size, v));
  for (int64_t step = 0; step < s; ++step) {
    std::vector<TokenSeq> rows;
    for (size_t i = 0; i < n; ++i) {
      for (const Beam& beam : beams[i]) {
        TokenSeq row = prefixes[i];
        row.insert(row.end(), beam.tokens.begin(), beam.tokens.end());
        rows.push_back(std::move(row));
      }
    }
    const std::vector<double> logits = LastLogits(model, prompt, rows);
    size_t r = 0;
    std::vector<int64_t> ids(v);
    for (size_t i = 0; i < n; ++i) {
      std::vector<Beam> candidates;
      for (const Beam& beam : beams[i]) {
        const double* row = logits.data() + (r++) * v;
        const double lse = LogSumExp(row, v);
        // Only a beam's own top-B tokens can survive the global cut.
        std::iota(ids.begin(), ids.end(), 0);
        std::partial_sort(ids.begin(), ids.begin() + per_beam, ids.end(),
                          [row](int64_t a, int64_t b) {
                            return row[a] != row[b] ? row[a] > row[b] : a < b;
                          });
        for (size_t c = 0; c < per_beam; ++c) {
          Beam next{beam.tokens, beam.score + (row[ids[c]] - lse)};
          next.tokens.push_back(static_cast<TokenId>(ids[c]));
          candidates.push_back(std::move(next));
        }
      }
      const size_t keep = std::min(candidates.size(), static_cast<size_t>(beam_size));
      std::partial_sort(candidates.begin(), candidates.begin() + keep,
                        candidates.end(), BeamBefore);
      candidates.resize(keep);
      beams[i] = std::move(candidates);
    }
  }
  std::vector<TokenSeq> out;
  for (auto& b : beams) out.push_back(std::move(b.front().tokens));
  return out;
}

}  // namespace

void DecodeConfig::Validate() const {
  if (beam_size < 1 || max_new_tokens < 1 || batch_size < 1) {
    throw Error(ErrorCode::kConfig,
                "decode: beam_size, max_new_tokens and batch_size must be >= 1");
  }
}

TokenSeq GreedyDecode(const Model& model, const Tensor* prompt,
                      const TokenSeq& prefix, int64_t s) {
  CheckDecodeInputs(model, prompt, prefix, s);
  return GreedyBatch(model, prompt, {prefix}, s).front();
}

TokenSeq BeamDecode(const Model& model, const Tensor* prompt,
                    const TokenSeq& prefix, int64_t s, int64_t beam_size) {
  CheckDecodeInputs(model, prompt, prefix, s);
  if (beam_size < 1) throw Error(ErrorCode::kConfig, "decode: beam_size < 1");
  return BeamBatch(model, prompt, {prefix}, s, beam_size).front();
}

std::vector<TokenSeq> DecodeAll(const Model& model, const Tensor* prompt,
                                const std::vector<TokenSeq>& prefixes,
                                const DecodeConfig& config) {
  config.Validate();
  std::vector<TokenSeq> out;
  if (prefixes.empty()) return out;
  for (const TokenSeq& p : prefixes) {
    CheckDecodeInputs(model, prompt, p, config.max_new_tokens);
    if (p.size() != prefixes.front().size()) {
      throw Error(ErrorCode::kLength, "decode: prefixes differ in length");
    }
  }
  TuneAllocator();
  for (size_t start = 0; start < prefixes.size();
       start += static_cast<size_t>(config.batch_size)) {
    const size_t end = std::min(prefixes.size(),
                                start + static_cast<size_t>(config.batch_size));
    const std::vector<TokenSeq> chunk(prefixes.begin() + start,
                                      prefixes.begin() + end);
    std::vector<TokenSeq> decoded =
        config.beam_size == 1
            ? GreedyBatch(model, prompt, chunk, config.max_new_tokens)
            : BeamBatch(model, prompt, chunk, config.max_new_tokens,
                        config.beam_size);
    for (TokenSeq& d : decoded) out.push_back(std::move(d));
  }
  return out;
}

double SuffixLogProb(const Model& model, const Tensor* prompt,
                     const TokenSeq& prefix, const TokenSeq& suffix) {
  if (suffix.empty() && !prefix.empty()) return 0.0;
  CheckDecodeInputs(model, prompt, prefix, static_cast<int64_t>(suffix.size()));
  const int64_t v = model.config().vocab_size;
  double total = 0.0;
  TokenSeq row = prefix;
  for (TokenId tok : suffix) {
    const std::vector<double> logits = LastLogits(model, prompt, {row});
    total += logits[tok] - LogSumExp(logits.data(), v);
    row.push_back(tok);
  }
  return total;
}

}  // namespace memlab
