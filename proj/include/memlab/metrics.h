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

#ifndef MEMLAB_METRICS_H_
#define MEMLAB_METRICS_H_

#include <cstdint>
#include <span>
#include <vector>

#include "memlab/data.h"
#include "memlab/model.h"
#include "memlab/tensor.h"

namespace memlab {

struct MetricsRecord {
  double exact_rate = 0.0;
  double fractional_rate = 0.0;        // token-pooled over the dataset
  double fractional_rate_macro = 0.0;  // mean of per-sequence fractions
  double ppl = 0.0;
  int64_t n_test = 0;
};

// Fraction of pairs whose suffixes match at every position. Throws kLength
// when the lists or any pair differ in length.
double ExactExtractionRate(const std::vector<TokenSeq>& generated,
                           const std::vector<TokenSeq>& truth);
// Positional matches over all tokens of all pairs.
double FractionalExtractionRate(const std::vector<TokenSeq>& generated,
                                const std::vector<TokenSeq>& truth);
double MacroFractionalExtractionRate(const std::vector<TokenSeq>& generated,
                                     const std::vector<TokenSeq>& truth);

// exp of the mean of natural-log NLLs; throws kEmptyInput on no values.
double PerplexityFromNll(std::span<const double> nll);

// Mean natural-log NLL of every suffix token given [prompt ∥ prefix].
double MeanSuffixNll(const Model& model, const Tensor* prompt,
                     const std::vector<Sequence>& eval, int64_t batch_size = 50);
// Teacher-forced perplexity of every suffix token given [prompt ∥ prefix].
double Perplexity(const Model& model, const Tensor* prompt,
                  const std::vector<Sequence>& eval, int64_t batch_size = 50);

// 100 * (baseline - treated) / baseline; kUndefinedBaseline when baseline 0.
double RelativeReduction(double baseline, double treated);
// 100 * (treated - baseline) / baseline.
double RelativeIncrease(double baseline, double treated);
// 100 * (treated - baseline), in percentage points.
double PpDelta(double treated, double baseline);

// Truncates toward zero at one decimal place. A 1e-9 guard absorbs binary
// representation error, so 9.2999999999 reads as 9.3.
double TruncateOneDecimal(double value);

}  // namespace memlab

#endif  // MEMLAB_METRICS_H_
