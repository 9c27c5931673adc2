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

#include "memlab/metrics.h"

#include <cmath>

#include <fmt/format.h>

#include "memlab/error.h"
#include "memlab/optimize.h"

namespace memlab {
namespace {

void CheckPairs(const std::vector<TokenSeq>& generated,
                const std::vector<TokenSeq>& truth) {
  if (generated.size() != truth.size()) {
    throw Error(ErrorCode::kLength,
                fmt::format("metrics: {} generated vs {} reference suffixes",
                            generated.size(), truth.size()));
  }
  if (truth.empty()) throw Error(ErrorCode::kEmptyInput, "metrics: no pairs");
  for (size_t i = 0; i < truth.size(); ++i) {
    if (generated[i].size() != truth[i].size()) {
      throw Error(ErrorCode::kLength,
                  fmt::format("metrics: pair {} has lengths {} and {}", i,
                              generated[i].size(), truth[i].size()));
    }
  }
}

int64_t Matches(const TokenSeq& a, const TokenSeq& b) {
  int64_t n = 0;
  for (size_t j = 0; j < a.size(); ++j) n += a[j] == b[j];
  return n;
}

}  // namespace

double ExactExtractionRate(const std::vector<TokenSeq>& generated,
                           const std::vector<TokenSeq>& truth) {
  CheckPairs(generated, truth);
  int64_t exact = 0;
  for (size_t i = 0; i < truth.size(); ++i) exact += generated[i] == truth[i];
  return static_cast<double>(exact) / static_cast<double>(truth.size());
}

double FractionalExtractionRate(const std::vector<TokenSeq>& generated,
                                const std::vector<TokenSeq>& truth) {
  CheckPairs(generated, truth);
  int64_t hits = 0, total = 0;
  for (size_t i = 0; i < truth.size(); ++i) {
    hits += Matches(generated[i], truth[i]);
    total += static_cast<int64_t>(truth[i].size());
  }
  return total == 0 ? 0.0
                    : static_cast<double>(hits) / static_cast<double>(total);
}

double MacroFractionalExtractionRate(const std::vector<TokenSeq>& generated,
                                     const std::vector<TokenSeq>& truth) {
  CheckPairs(generated, truth);
  double sum = 0.0;
  for (size_t i = 0; i < truth.size(); ++i) {
    if (truth[i].empty()) continue;
    sum += static_cast<double>(Matches(generated[i], truth[i])) /
           static_cast<double>(truth[i].size());
  }
  return sum / static_cast<double>(truth.size());
}

double PerplexityFromNll(std::span<const double> nll) {
  if (nll.empty()) throw Error(ErrorCode::kEmptyInput, "perplexity: no tokens");
  double sum = 0.0;
  for (double x : nll) sum += x;
  return std::exp(sum / static_cast<double>(nll.size()));
}

double MeanSuffixNll(const Model& model, const Tensor* prompt,
                     const std::vector<Sequence>& eval, int64_t batch_size) {
  if (eval.empty()) {
    throw Error(ErrorCode::kEmptyInput, "perplexity: empty evaluation set");
  }
  if (batch_size < 1) throw Error(ErrorCode::kConfig, "perplexity: batch_size < 1");
  double total = 0.0;
  int64_t tokens = 0;
  for (size_t start = 0; start < eval.size();
       start += static_cast<size_t>(batch_size)) {
    std::vector<const Sequence*> batch;
    for (size_t i = start;
         i < std::min(eval.size(), start + static_cast<size_t>(batch_size)); ++i) {
      batch.push_back(&eval[i]);
    }
    Tape tape;
    const double mean =
        AttackLoss(tape, model, prompt, batch, Objective::kAlignedClm).item();
    const int64_t n =
        static_cast<int64_t>(batch.size() * batch.front()->suffix.size());
    total += mean * static_cast<double>(n);
    tokens += n;
  }
  return total / static_cast<double>(tokens);
}

double Perplexity(const Model& model, const Tensor* prompt,
                  const std::vector<Sequence>& eval, int64_t batch_size) {
  return std::exp(MeanSuffixNll(model, prompt, eval, batch_size));
}

double RelativeReduction(double baseline, double treated) {
  if (baseline == 0.0) {
    throw Error(ErrorCode::kUndefinedBaseline,
                "relative_reduction: baseline is 0");
  }
  return 100.0 * (baseline - treated) / baseline;
}

double RelativeIncrease(double baseline, double treated) {
  if (baseline == 0.0) {
    throw Error(ErrorCode::kUndefinedBaseline,
                "relative_increase: baseline is 0");
  }
  return 100.0 * (treated - baseline) / baseline;
}

double PpDelta(double treated, double baseline) {
  return 100.0 * (treated - baseline);
}

double TruncateOneDecimal(double value) {
  return std::trunc(value * 10.0 + std::copysign(1e-9, value)) / 10.0;
}

}  // namespace memlab
