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

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "memlab/decode.h"
#include "memlab/error.h"
#include "memlab/metrics.h"
#include "memlab/model.h"

namespace memlab {
namespace {

TEST(ExactRateTest, Cases) {
  EXPECT_EQ(ExactExtractionRate({{1, 2}, {3, 4}}, {{1, 2}, {3, 4}}), 1.0);
  EXPECT_EQ(ExactExtractionRate({{1}, {2}, {3}, {9}}, {{1}, {2}, {3}, {4}}), 0.75);
  EXPECT_EQ(ExactExtractionRate({{1, 2, 3}}, {{1, 2, 4}}), 0.0);
}

TEST(ExactRateTest, LengthMismatchesAreErrors) {
  EXPECT_THROW(ExactExtractionRate({{1}}, {{1}, {2}}), Error);
  try {
    FractionalExtractionRate({{1, 2}}, {{1}});
    FAIL() << "expected a length error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kLength);
  }
}

TEST(FractionalRateTest, Cases) {
  EXPECT_EQ(FractionalExtractionRate({{5, 6, 7}}, {{5, 6, 7}}), 1.0);
  EXPECT_EQ(FractionalExtractionRate({{2, 3, 1}}, {{1, 2, 3}}), 0.0);
  TokenSeq truth(50), gen(50);
  for (int i = 0; i < 50; ++i) {
    truth[i] = i;
    gen[i] = i < 25 ? i : 100;
  }
  EXPECT_EQ(FractionalExtractionRate({gen}, {truth}), 0.5);
}

TEST(FractionalRateTest, MicroAndMacroDiffer) {
  const std::vector<TokenSeq> truth = {{1, 1, 1, 1}, {2, 2}};
  const std::vector<TokenSeq> gen = {{1, 1, 1, 1}, {0, 0}};
  EXPECT_NEAR(FractionalExtractionRate(gen, truth), 4.0 / 6.0, 1e-15);
  EXPECT_NEAR(MacroFractionalExtractionRate(gen, truth), 0.5, 1e-15);
}

TEST(RatesTest, ExactNeverExceedsFractionalAndPermutationInvariant) {
  const std::vector<TokenSeq> truth = {{1, 2, 3}, {4, 5, 6}, {7, 8, 9}};
  const std::vector<TokenSeq> gen = {{1, 2, 3}, {4, 0, 6}, {0, 0, 0}};
  EXPECT_LE(ExactExtractionRate(gen, truth), FractionalExtractionRate(gen, truth));
  const std::vector<TokenSeq> truth_p = {truth[2], truth[0], truth[1]};
  const std::vector<TokenSeq> gen_p = {gen[2], gen[0], gen[1]};
  EXPECT_EQ(ExactExtractionRate(gen, truth), ExactExtractionRate(gen_p, truth_p));
  EXPECT_EQ(FractionalExtractionRate(gen, truth),
            FractionalExtractionRate(gen_p, truth_p));
}

TEST(PerplexityTest, ClosedFormMean) {
  const std::vector<double> nll = {std::log(2.0), std::log(8.0)};
  EXPECT_NEAR(PerplexityFromNll(nll), 4.0, 1e-12);
  EXPECT_THROW(PerplexityFromNll({}), Error);
}

ModelConfig PplConfig(int64_t vocab) {
  ModelConfig cfg;
  cfg.vocab_size = vocab;
  cfg.embed_dim = 8;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.context_len = 24;
  return cfg;
}

std::vector<Sequence> EvalSet(int64_t vocab, int n) {
  std::vector<Sequence> out;
  for (int i = 0; i < n; ++i) {
    Sequence s;
    s.prefix = {static_cast<TokenId>(i % vocab), static_cast<TokenId>((i + 3) % vocab)};
    s.suffix = {static_cast<TokenId>((i * 7) % vocab), static_cast<TokenId>((i + 1) % vocab),
                static_cast<TokenId>((i * 5) % vocab)};
    out.push_back(s);
  }
  return out;
}

TEST(PerplexityTest, UniformModelGivesVocabSize) {
  // A zero embedding table makes every tied-head logit zero.
  Model model(PplConfig(100), 1);
  for (double& v : model.mutable_params().token_embedding.mutable_data()) v = 0.0;
  EXPECT_NEAR(Perplexity(model, nullptr, EvalSet(100, 7), 3), 100.0, 1e-9);
}

TEST(PerplexityTest, ConfidentModelOnItsOwnOutputApproachesOne) {
  Model model(PplConfig(6), 2);
  for (double& v : model.mutable_params().final_gain.mutable_data()) v = 1e4;
  std::vector<Sequence> eval;
  for (TokenId t = 0; t < 6; ++t) {
    Sequence s;
    s.prefix = {t, static_cast<TokenId>((t + 1) % 6)};
    s.suffix = GreedyDecode(model, nullptr, s.prefix, 4);
    eval.push_back(s);
  }
  const double ppl = Perplexity(model, nullptr, eval);
  EXPECT_GE(ppl, 1.0);
  EXPECT_LT(ppl, 1.0 + 1e-6);
}

TEST(PerplexityTest, EmptySetIsAnError) {
  const Model model(PplConfig(6), 2);
  try {
    Perplexity(model, nullptr, {});
    FAIL() << "expected an empty-input error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyInput);
  }
}

TEST(PerplexityTest, BatchSizeDoesNotChangeTheValue) {
  const Model model(PplConfig(11), 4);
  const auto eval = EvalSet(11, 9);
  EXPECT_NEAR(Perplexity(model, nullptr, eval, 2),
              Perplexity(model, nullptr, eval, 9), 1e-9);
}

TEST(DerivedFiguresTest, TableOneArithmetic) {
  EXPECT_EQ(TruncateOneDecimal(RelativeReduction(0.450, 0.010)), 97.7);
  EXPECT_EQ(TruncateOneDecimal(RelativeReduction(0.169, 0.001)), 99.4);
  EXPECT_EQ(TruncateOneDecimal(RelativeIncrease(9.213, 10.775)), 16.9);
  EXPECT_EQ(TruncateOneDecimal(RelativeIncrease(15.71, 19.691)), 25.3);
  EXPECT_EQ(TruncateOneDecimal(PpDelta(0.543, 0.450)), 9.3);
  EXPECT_EQ(TruncateOneDecimal(PpDelta(0.258, 0.169)), 8.9);
}

TEST(DerivedFiguresTest, Identities) {
  EXPECT_EQ(PpDelta(0.3, 0.3), 0.0);
  EXPECT_EQ(RelativeReduction(0.5, 0.5), 0.0);
  EXPECT_EQ(RelativeReduction(0.5, 0.0), 100.0);
  try {
    RelativeReduction(0.0, 0.1);
    FAIL() << "expected an undefined-baseline error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUndefinedBaseline);
  }
}

TEST(TruncateOneDecimalTest, Cases) {
  EXPECT_EQ(TruncateOneDecimal(97.777), 97.7);
  EXPECT_EQ(TruncateOneDecimal(9.2999999999999), 9.3);
  EXPECT_EQ(TruncateOneDecimal(-1.25), -1.2);
  EXPECT_EQ(TruncateOneDecimal(0.0), 0.0);
}

}  // namespace
}  // namespace memlab
