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
#include <cstdint>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "decode_oracle.h"
#include "memlab/decode.h"
#include "memlab/error.h"
#include "memlab/model.h"

namespace memlab {
namespace {

using testing::EnumerateSuffixes;
using testing::RandomDecodeModel;
using testing::RandomTokens;

int64_t IntPow(int64_t b, int64_t e) {
  int64_t r = 1;
  while (e-- > 0) r *= b;
  return r;
}

// With no blocks the next-token logits depend only on the last token and its
// position: logits = LN(E[x] + P[pos]) E^T. This recomputes that chain
// directly from the parameter tables.
TokenId MarkovArgmax(const Model& m, TokenId last, int64_t pos) {
  const int64_t e = m.config().embed_dim, v = m.config().vocab_size;
  const auto tok = m.params().token_embedding.data();
  const auto p = m.params().position_embedding.data();
  std::vector<double> h(e);
  double mean = 0.0;
  for (int64_t j = 0; j < e; ++j) {
    h[j] = tok[last * e + j] + p[pos * e + j];
    mean += h[j];
  }
  mean /= e;
  double var = 0.0;
  for (double x : h) var += (x - mean) * (x - mean);
  var /= e;
  for (int64_t j = 0; j < e; ++j) {
    h[j] = (h[j] - mean) / std::sqrt(var + 1e-5) *
               m.params().final_gain.data()[j] +
           m.params().final_bias.data()[j];
  }
  TokenId best = 0;
  double best_logit = -1e300;
  for (int64_t t = 0; t < v; ++t) {
    double z = 0.0;
    for (int64_t j = 0; j < e; ++j) z += h[j] * tok[t * e + j];
    if (z > best_logit) {
      best_logit = z;
      best = static_cast<TokenId>(t);
    }
  }
  return best;
}

TEST(GreedyDecodeTest, MatchesTransitionOracle) {
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    const Model m = RandomDecodeModel(6, seed, /*n_layers=*/0);
    std::mt19937_64 rng(seed);
    const TokenSeq prefix = RandomTokens(3, 6, rng);
    const TokenSeq got = GreedyDecode(m, nullptr, prefix, 6);
    TokenId last = prefix.back();
    for (int64_t i = 0; i < 6; ++i) {
      last = MarkovArgmax(m, last, 2 + i);
      ASSERT_EQ(got[i], last) << "seed " << seed << " step " << i;
    }
  }
}

TEST(BeamDecodeTest, FullWidthBeamEqualsExhaustiveSearch) {
  int checked = 0;
  for (int64_t v = 2; v <= 4; ++v) {
    for (int64_t s = 1; s <= 4; ++s) {
      for (uint64_t seed = 1; seed <= 3; ++seed) {
        const Model m = RandomDecodeModel(v, 100 * v + 10 * s + seed);
        std::mt19937_64 rng(seed);
        const TokenSeq prefix = RandomTokens(3, v, rng);
        const auto oracle = EnumerateSuffixes(m, prefix, s);
        const TokenSeq got = BeamDecode(m, nullptr, prefix, s, IntPow(v, s));
        EXPECT_NEAR(SuffixLogProb(m, nullptr, prefix, got), oracle.best_score,
                    1e-9);
        if (oracle.best_score - oracle.runner_up > 1e-9) {
          EXPECT_EQ(got, oracle.best) << "V=" << v << " s=" << s;
          ++checked;
        }
      }
    }
  }
  EXPECT_GT(checked, 30);
}

TEST(BeamDecodeTest, WidthOneEqualsGreedy) {
  for (uint64_t seed = 1; seed <= 100; ++seed) {
    const Model m = RandomDecodeModel(5 + seed % 7, seed);
    std::mt19937_64 rng(seed);
    const TokenSeq prefix = RandomTokens(1 + seed % 4, m.config().vocab_size, rng);
    const int64_t s = 1 + static_cast<int64_t>(seed % 6);
    EXPECT_EQ(BeamDecode(m, nullptr, prefix, s, 1),
              GreedyDecode(m, nullptr, prefix, s))
        << "seed " << seed;
  }
}

TEST(BeamDecodeTest, TiesGoToTheLexicographicallySmallerSequence) {
  // Identical token embeddings make every continuation equally likely.
  Model m = RandomDecodeModel(3, 4, /*n_layers=*/0);
  Tensor& tok = m.mutable_params().token_embedding;
  for (int64_t t = 1; t < 3; ++t) {
    for (int64_t j = 0; j < 8; ++j) tok.mutable_data()[t * 8 + j] = tok.data()[j];
  }
  EXPECT_EQ(BeamDecode(m, nullptr, {2}, 3, 4), (TokenSeq{0, 0, 0}));
  EXPECT_EQ(GreedyDecode(m, nullptr, {2}, 3), (TokenSeq{0, 0, 0}));
}

TEST(DecodeAllTest, BatchedMatchesPerPrefix) {
  const Model m = RandomDecodeModel(9, 21);
  std::mt19937_64 rng(5);
  std::vector<TokenSeq> prefixes;
  for (int i = 0; i < 7; ++i) prefixes.push_back(RandomTokens(4, 9, rng));
  for (int64_t beam : {1, 3}) {
    DecodeConfig cfg;
    cfg.beam_size = beam;
    cfg.max_new_tokens = 5;
    cfg.batch_size = 3;
    const auto got = DecodeAll(m, nullptr, prefixes, cfg);
    ASSERT_EQ(got.size(), prefixes.size());
    for (size_t i = 0; i < prefixes.size(); ++i) {
      EXPECT_EQ(got[i], BeamDecode(m, nullptr, prefixes[i], 5, beam));
    }
  }
}

TEST(DecodeAllTest, PromptIsPrepended) {
  const Model m = RandomDecodeModel(9, 22);
  Tensor prompt({2, 8}, std::vector<double>(16, 0.3));
  DecodeConfig cfg;
  cfg.max_new_tokens = 4;
  const auto got = DecodeAll(m, &prompt, {{1, 2, 3}}, cfg);
  EXPECT_EQ(got[0], GreedyDecode(m, &prompt, {1, 2, 3}, 4));
  EXPECT_EQ(got[0].size(), 4u);
}

TEST(DecodeErrorsTest, ContextAndInputChecks) {
  const Model m = RandomDecodeModel(5, 1);  // context 16
  try {
    GreedyDecode(m, nullptr, TokenSeq(10, 1), 8);
    FAIL() << "expected a context overflow";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kContextOverflow);
  }
  EXPECT_NO_THROW(GreedyDecode(m, nullptr, TokenSeq(10, 1), 7));
  EXPECT_THROW(GreedyDecode(m, nullptr, {}, 2), Error);
  EXPECT_THROW(BeamDecode(m, nullptr, {1}, 2, 0), Error);
  DecodeConfig cfg;
  cfg.max_new_tokens = 2;
  EXPECT_THROW(DecodeAll(m, nullptr, {{1, 2}, {1}}, cfg), Error);
  EXPECT_TRUE(DecodeAll(m, nullptr, {}, cfg).empty());
}

TEST(SuffixLogProbTest, IsANegativeSumOfStepLogProbs) {
  const Model m = RandomDecodeModel(4, 9);
  double total = 0.0;
  TokenSeq suffix;
  for (TokenId t : {1, 3, 0}) {
    const double before = SuffixLogProb(m, nullptr, {2, 2}, suffix);
    suffix.push_back(t);
    const double after = SuffixLogProb(m, nullptr, {2, 2}, suffix);
    EXPECT_LT(after, before);
    total = after;
  }
  // Probabilities of all continuations sum to one.
  double z = 0.0;
  for (TokenId t = 0; t < 4; ++t) {
    z += std::exp(SuffixLogProb(m, nullptr, {2, 2}, {t}));
  }
  EXPECT_NEAR(z, 1.0, 1e-12);
  EXPECT_LT(total, 0.0);
}

}  // namespace
}  // namespace memlab
