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
#include <filesystem>
#include <limits>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "memlab/error.h"
#include "memlab/model.h"
#include "memlab/ops.h"
#include "memlab/optimize.h"

namespace memlab {
namespace {

ModelConfig ToyConfig() {
  ModelConfig cfg;
  cfg.vocab_size = 32;
  cfg.embed_dim = 16;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.context_len = 32;
  return cfg;
}

// 24 random 10-token secrets, each repeated 8 times, cut into k=s=5
// sequences; the model is pretrained until it has memorized most of them.
struct Toy {
  std::vector<TokenSeq> documents;
  std::vector<Sequence> sequences;
  Model model{ToyConfig(), 3};

  Toy() {
    std::mt19937_64 rng(17);
    std::uniform_int_distribution<TokenId> tok(0, 31);
    for (int i = 0; i < 24; ++i) {
      TokenSeq secret(10);
      for (TokenId& t : secret) t = tok(rng);
      for (int c = 0; c < 8; ++c) documents.push_back(secret);
      Sequence seq;
      seq.prefix.assign(secret.begin(), secret.begin() + 5);
      seq.suffix.assign(secret.begin() + 5, secret.end());
      seq.secret_id = i;
      seq.copies = 8;
      sequences.push_back(seq);
    }
    PretrainConfig pc;
    pc.epochs = 30;
    pc.lr = 1e-2;
    pc.warmup_steps = 10;
    pc.batch_size = 16;
    pc.position_span = 30;
    pc.pack_length = 0;
    Pretrain(model, documents, pc);
  }
};

const Toy& SharedToy() {
  static const Toy* toy = new Toy();
  return *toy;
}

TEST(AdamTest, FirstStepHasMagnitudeLr) {
  Tensor w({2}, {1.0, -1.0});
  w.mutable_grad()[0] = 0.3;
  w.mutable_grad()[1] = -50.0;
  Adam adam({w});
  adam.Step(0.1);
  EXPECT_NEAR(w.data()[0], 0.9, 1e-6);
  EXPECT_NEAR(w.data()[1], -0.9, 1e-6);
  EXPECT_EQ(adam.state().step, 1);
}

TEST(AdamTest, NegativeSignAscends) {
  Tensor w({1}, {1.0});
  w.mutable_grad()[0] = 2.0;
  Adam adam({w});
  adam.Step(0.1, -1.0);
  EXPECT_NEAR(w.data()[0], 1.1, 1e-6);
}

TEST(AdamTest, MinimisesAQuadratic) {
  Tensor w({1}, {0.0});
  Adam adam({w});
  for (int i = 0; i < 2000; ++i) {
    adam.ZeroGrad();
    w.mutable_grad()[0] = 2.0 * (w.data()[0] - 3.0);
    adam.Step(0.05);
  }
  EXPECT_NEAR(w.data()[0], 3.0, 1e-3);
}

TEST(ClipGradNormTest, ScalesToMaxNorm) {
  Tensor a({1}, {0.0}), b({1}, {0.0});
  a.mutable_grad()[0] = 3.0;
  b.mutable_grad()[0] = 4.0;
  EXPECT_DOUBLE_EQ(ClipGradNorm({a, b}, 1.0), 5.0);
  EXPECT_NEAR(a.grad()[0], 0.6, 1e-15);
  EXPECT_NEAR(b.grad()[0], 0.8, 1e-15);
  EXPECT_NEAR(ClipGradNorm({a, b}, 2.0), 1.0, 1e-15);
  EXPECT_NEAR(a.grad()[0], 0.6, 1e-15);
}

TEST(PretrainTest, ZeroEpochsIsANoOp) {
  Model model(ToyConfig(), 1);
  const uint64_t before = model.Checksum();
  PretrainConfig pc;
  pc.epochs = 0;
  const TrainHistory h = Pretrain(model, {{1, 2, 3}}, pc);
  EXPECT_TRUE(h.epoch_loss.empty());
  EXPECT_EQ(model.Checksum(), before);
}

TEST(PretrainTest, MemorisesARepeatedDocument) {
  Model model(ToyConfig(), 2);
  const std::vector<TokenSeq> docs(32, TokenSeq{4, 9, 1, 30, 22, 7, 7, 15, 0, 3});
  PretrainConfig pc;
  pc.position_span = 0;
  pc.pack_length = 0;
  pc.epochs = 40;
  pc.lr = 1e-2;
  pc.warmup_steps = 5;
  pc.batch_size = 8;
  const TrainHistory h = Pretrain(model, docs, pc);
  ASSERT_EQ(h.epoch_loss.size(), 40u);
  EXPECT_LT(CorpusLoss(model, docs), 0.1);
  EXPECT_LT(h.epoch_loss.back(), h.epoch_loss.front());
}

TEST(PretrainTest, SameSeedSameChecksum) {
  const std::vector<TokenSeq> docs = {{1, 2, 3, 4}, {5, 6, 7, 8}, {9, 1, 2}};
  PretrainConfig pc;
  pc.pack_length = 0;
  pc.epochs = 3;
  pc.batch_size = 2;
  pc.position_span = 10;
  Model a(ToyConfig(), 4), b(ToyConfig(), 4);
  Pretrain(a, docs, pc);
  Pretrain(b, docs, pc);
  EXPECT_EQ(a.Checksum(), b.Checksum());
  EXPECT_NE(a.Checksum(), Model(ToyConfig(), 4).Checksum());
}

TEST(PretrainTest, PackedWindowsMemorizeAcrossDocumentBoundaries) {
  // Two documents that always follow each other in some order: packing puts
  // tokens of one in the context of the other.
  const std::vector<TokenSeq> docs = {{1, 2, 3, 4, 5, 6}, {7, 8, 9, 10, 11, 12}};
  std::vector<TokenSeq> corpus;
  for (int i = 0; i < 20; ++i) corpus.insert(corpus.end(), docs.begin(), docs.end());
  PretrainConfig pc;
  pc.epochs = 30;
  pc.lr = 1e-2;
  pc.warmup_steps = 5;
  pc.batch_size = 4;
  pc.pack_length = 5;
  pc.position_span = 12;
  Model model(ToyConfig(), 6);
  const TrainHistory h = Pretrain(model, corpus, pc);
  ASSERT_EQ(h.epoch_loss.size(), 30u);
  EXPECT_LT(h.epoch_loss.back(), 0.5 * h.epoch_loss.front());
  EXPECT_LT(CorpusLoss(model, docs), 0.2);

  Model again(ToyConfig(), 6);
  Pretrain(again, corpus, pc);
  EXPECT_EQ(model.Checksum(), again.Checksum());
}

TEST(PretrainTest, PackLengthIsValidated) {
  Model model(ToyConfig(), 7);
  PretrainConfig pc;
  pc.epochs = 1;
  pc.pack_length = ToyConfig().context_len + 1;
  EXPECT_THROW(Pretrain(model, {{1, 2, 3, 4}}, pc), Error);
  pc.pack_length = 3;  // one document of 4 tokens is less than two windows
  EXPECT_THROW(Pretrain(model, {{1, 2, 3, 4}}, pc), Error);
}

TEST(PretrainTest, NonFiniteLossIsATrainingFailure) {
  Model model(ToyConfig(), 5);
  model.mutable_params().final_gain.mutable_data()[0] =
      std::numeric_limits<double>::quiet_NaN();
  PretrainConfig pc;
  pc.position_span = 0;
  pc.pack_length = 0;
  pc.epochs = 1;
  try {
    Pretrain(model, {{1, 2, 3}}, pc);
    FAIL() << "expected a training failure";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTrainingFailure);
  }
  EXPECT_FALSE(model.Parameters().front().tracked());
}

TEST(PretrainTest, RejectsEmptyCorpus) {
  Model model(ToyConfig(), 5);
  EXPECT_THROW(Pretrain(model, {}, PretrainConfig{}), Error);
}

TEST(InitPromptTest, RowsAreEmbeddingRows) {
  const Model model(ToyConfig(), 6);
  const SoftPrompt p = InitPrompt(model, 7, 99);
  ASSERT_EQ(p.weights.shape(), (Shape{7, 16}));
  const auto table = model.params().token_embedding.data();
  for (int64_t r = 0; r < 7; ++r) {
    bool found = false;
    for (int64_t v = 0; v < 32 && !found; ++v) {
      found = std::equal(table.begin() + v * 16, table.begin() + (v + 1) * 16,
                         p.weights.data().begin() + r * 16);
    }
    EXPECT_TRUE(found) << "row " << r;
  }
  const SoftPrompt q = InitPrompt(model, 7, 99);
  EXPECT_TRUE(std::equal(p.weights.data().begin(), p.weights.data().end(),
                         q.weights.data().begin()));
  EXPECT_THROW(InitPrompt(model, 0, 1), Error);
}

// Cross-entropy over full-length logits with an explicitly built mask.
double OracleLoss(const Model& model, const Tensor* prompt,
                  const std::vector<const Sequence*>& batch, bool suffix_only) {
  Tape tape;
  std::vector<TokenSeq> rows;
  for (const Sequence* s : batch) {
    TokenSeq r = s->prefix;
    r.insert(r.end(), s->suffix.begin(), s->suffix.end());
    rows.push_back(r);
  }
  const int64_t b = static_cast<int64_t>(rows.size());
  const int64_t n = static_cast<int64_t>(rows[0].size());
  const int64_t k = static_cast<int64_t>(batch[0]->prefix.size());
  const int64_t l = prompt ? prompt->dim(0) : 0;
  const int64_t t = l + n;
  Tensor logits = Reshape(
      tape, model.ForwardLogits(tape, model.EmbedBatch(tape, rows, prompt)),
      {b * t, model.config().vocab_size});
  std::vector<int32_t> targets(b * t, 0);
  std::vector<bool> mask(b * t, false);
  for (int64_t i = 0; i < b; ++i) {
    // Row p predicts the token embedded at row p + 1.
    for (int64_t p = 0; p + 1 < t; ++p) {
      const int64_t tok = p + 1 - l;  // index into prefix ∥ suffix
      if (tok < 0) continue;
      if (suffix_only && tok < k) continue;
      targets[i * t + p] = rows[i][tok];
      mask[i * t + p] = true;
    }
  }
  return TokenCrossEntropy(tape, logits, targets, mask).item();
}

std::vector<const Sequence*> FirstN(const std::vector<Sequence>& seqs, size_t n) {
  std::vector<const Sequence*> out;
  for (size_t i = 0; i < n; ++i) out.push_back(&seqs[i]);
  return out;
}

TEST(AttackLossTest, MatchesMaskOracle) {
  const Toy& toy = SharedToy();
  const auto batch = FirstN(toy.sequences, 6);
  const SoftPrompt p = InitPrompt(toy.model, 4, 1);
  for (const Tensor* prompt : {static_cast<const Tensor*>(nullptr), &p.weights}) {
    for (Objective obj : {Objective::kClm, Objective::kAlignedClm}) {
      Tape tape;
      const double got = AttackLoss(tape, toy.model, prompt, batch, obj).item();
      EXPECT_NEAR(got,
                  OracleLoss(toy.model, prompt, batch,
                             obj == Objective::kAlignedClm),
                  1e-10)
          << ObjectiveName(obj) << " prompt=" << (prompt != nullptr);
    }
  }
}

TEST(AttackLossTest, NonNegativeAndContextChecked) {
  const Toy& toy = SharedToy();
  const auto batch = FirstN(toy.sequences, 3);
  Tape tape;
  EXPECT_GE(AttackLoss(tape, toy.model, nullptr, batch, Objective::kClm).item(),
            0.0);
  const SoftPrompt long_prompt = InitPrompt(toy.model, 25, 1);
  try {
    AttackLoss(tape, toy.model, &long_prompt.weights, batch, Objective::kClm);
    FAIL() << "expected a context overflow";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kContextOverflow);
  }
}

TEST(AttackLossTest, RaggedBatchIsALengthError) {
  const Toy& toy = SharedToy();
  Sequence shorter = toy.sequences[1];
  shorter.suffix.pop_back();
  Tape tape;
  EXPECT_THROW(AttackLoss(tape, toy.model, nullptr,
                          {&toy.sequences[0], &shorter}, Objective::kClm),
               Error);
}

TEST(ObjectiveTest, NamesRoundTrip) {
  EXPECT_EQ(ParseObjective(ObjectiveName(Objective::kClm)), Objective::kClm);
  EXPECT_EQ(ParseObjective("aligned_clm"), Objective::kAlignedClm);
  EXPECT_THROW(ParseObjective("mlm"), Error);
}

TEST(TrainAttackPromptTest, FreezesModelAndLowersLoss) {
  const Toy& toy = SharedToy();
  const uint64_t before = toy.model.Checksum();
  AttackConfig cfg;
  cfg.l = 3;
  cfg.epochs = 6;
  cfg.batch_size = 8;
  const PromptResult r = TrainAttackPrompt(toy.model, toy.sequences, cfg);
  EXPECT_EQ(toy.model.Checksum(), before);
  ASSERT_EQ(r.history.epoch_loss.size(), 6u);
  EXPECT_LE(r.history.epoch_loss.back(), r.history.epoch_loss.front());
  EXPECT_EQ(r.prompt.objective_tag, "aligned_clm");
  EXPECT_EQ(r.prompt.weights.shape(), (Shape{3, 16}));
  for (const Tensor& t : toy.model.Parameters()) EXPECT_FALSE(t.tracked());
}

TEST(TrainAttackPromptTest, ZeroEpochsReturnsInit) {
  const Toy& toy = SharedToy();
  AttackConfig cfg;
  cfg.l = 2;
  cfg.epochs = 0;
  cfg.seed = 8;
  const PromptResult r = TrainAttackPrompt(toy.model, toy.sequences, cfg);
  const SoftPrompt init = InitPrompt(toy.model, 2, 8);
  EXPECT_TRUE(std::equal(r.prompt.weights.data().begin(),
                         r.prompt.weights.data().end(),
                         init.weights.data().begin()));
  EXPECT_TRUE(r.history.epoch_loss.empty());
}

TEST(TrainAttackPromptTest, Deterministic) {
  const Toy& toy = SharedToy();
  AttackConfig cfg;
  cfg.l = 2;
  cfg.epochs = 2;
  cfg.objective = Objective::kClm;
  const PromptResult a = TrainAttackPrompt(toy.model, toy.sequences, cfg);
  const PromptResult b = TrainAttackPrompt(toy.model, toy.sequences, cfg);
  EXPECT_TRUE(std::equal(a.prompt.weights.data().begin(),
                         a.prompt.weights.data().end(),
                         b.prompt.weights.data().begin()));
  EXPECT_EQ(a.history.batch_loss, b.history.batch_loss);
}

TEST(DefenseStepDirectionTest, Cases) {
  EXPECT_EQ(DefenseStepDirection(0.5, 1.0), Direction::kAscend);
  EXPECT_EQ(DefenseStepDirection(1.5, 1.0), Direction::kDescend);
  EXPECT_EQ(DefenseStepDirection(1.0, 1.0), Direction::kDescend);
}

TEST(TrainDefensePromptTest, ZeroThetaStopsAfterOneEpoch) {
  const Toy& toy = SharedToy();
  DefenseConfig cfg;
  cfg.theta = 0.0;
  const PromptResult r = TrainDefensePrompt(toy.model, toy.sequences, cfg);
  EXPECT_EQ(r.history.epoch_loss.size(), 1u);
  EXPECT_TRUE(r.prompt.converged);
  EXPECT_EQ(r.prompt.objective_tag, "defense");
}

TEST(TrainDefensePromptTest, ConvergesNearThetaWithFrozenModel) {
  const Toy& toy = SharedToy();
  const uint64_t before = toy.model.Checksum();
  std::vector<const Sequence*> all;
  for (const Sequence& s : toy.sequences) all.push_back(&s);
  Tape tape;
  const double base =
      AttackLoss(tape, toy.model, nullptr, all, Objective::kAlignedClm).item();
  DefenseConfig cfg;
  cfg.theta = base + 0.5;
  cfg.batch_size = 8;
  cfg.lr = 2e-2;
  cfg.max_epochs = 40;
  const PromptResult r = TrainDefensePrompt(toy.model, toy.sequences, cfg);
  EXPECT_EQ(toy.model.Checksum(), before);
  ASSERT_TRUE(r.prompt.converged);
  ASSERT_FALSE(r.history.epoch_loss.empty());
  const double final_mean = r.history.epoch_loss.back();
  EXPECT_GE(final_mean, cfg.theta);
  EXPECT_LE(final_mean, cfg.theta + 0.5);
  for (size_t i = 0; i + 1 < r.history.epoch_loss.size(); ++i) {
    EXPECT_LT(r.history.epoch_loss[i], cfg.theta);
  }
}

TEST(TrainDefensePromptTest, UnconvergedRunIsFlagged) {
  const Toy& toy = SharedToy();
  DefenseConfig cfg;
  cfg.theta = 1e6;
  cfg.max_epochs = 2;
  const PromptResult r = TrainDefensePrompt(toy.model, toy.sequences, cfg);
  EXPECT_FALSE(r.prompt.converged);
  EXPECT_EQ(r.history.epoch_loss.size(), 2u);
}

TEST(ThetaScheduleTest, StepsOfAQuarter) {
  const std::vector<double> t = ThetaSchedule(0.9, 3);
  ASSERT_EQ(t.size(), 3u);
  EXPECT_NEAR(t[0], 1.15, 1e-12);
  EXPECT_NEAR(t[1], 1.40, 1e-12);
  EXPECT_NEAR(t[2], 1.65, 1e-12);
  EXPECT_EQ(t[1] - t[0], 0.25);
  EXPECT_EQ(t[2] - t[1], 0.25);
  EXPECT_EQ(ThetaSchedule(2.0, 1).size(), 1u);
  EXPECT_THROW(ThetaSchedule(1.0, 0), Error);
}

TEST(ThetaScheduleTest, ExactQuarterStepsForArbitraryBases) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 7.0);
  for (int i = 0; i < 100; ++i) {
    const double base = u(rng);
    const std::vector<double> t = ThetaSchedule(base, 5, 0.1);
    EXPECT_NEAR(t[0], base + 0.1, 1e-11);
    for (size_t j = 1; j < t.size(); ++j) EXPECT_EQ(t[j] - t[j - 1], 0.25);
  }
}

TEST(PromptIoTest, RoundTrip) {
  const Model model(ToyConfig(), 6);
  SoftPrompt p = InitPrompt(model, 3, 2);
  p.objective_tag = "defense";
  p.converged = false;
  const std::string path =
      (std::filesystem::temp_directory_path() / "memlab_prompt.bin").string();
  SavePrompt(path, p, {{"theta", "1.5"}});
  const SoftPrompt r = LoadPrompt(path);
  EXPECT_EQ(r.objective_tag, "defense");
  EXPECT_FALSE(r.converged);
  ASSERT_EQ(r.weights.shape(), p.weights.shape());
  for (int64_t i = 0; i < p.weights.numel(); ++i) {
    EXPECT_EQ(r.weights.data()[i],
              static_cast<double>(static_cast<float>(p.weights.data()[i])));
  }
}

TEST(EpochOrderTest, PermutationVariesByEpoch) {
  const auto a = EpochOrder(50, 1, 0);
  const auto b = EpochOrder(50, 1, 1);
  EXPECT_NE(a, b);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (size_t i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
  EXPECT_EQ(a, EpochOrder(50, 1, 0));
}

}  // namespace
}  // namespace memlab
