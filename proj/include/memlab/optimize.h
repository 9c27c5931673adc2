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

#ifndef MEMLAB_OPTIMIZE_H_
#define MEMLAB_OPTIMIZE_H_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "memlab/data.h"
#include "memlab/model.h"
#include "memlab/tensor.h"

namespace memlab {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Buffer> m;
  std::vector<Buffer> v;
  int64_t step = 0;
};

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options = {});

  // One bias-corrected update from the current gradients. `sign` = -1 turns
  // the step into ascent on the same loss while sharing the moment estimates.
  void Step(double lr, double sign = 1.0);
  void ZeroGrad();

  const AdamState& state() const { return state_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  AdamOptions options_;
  AdamState state_;
};

// Scales all gradients so their joint L2 norm is at most max_norm. Returns the
// norm before clipping.
double ClipGradNorm(const std::vector<Tensor>& params, double max_norm);

struct TrainHistory {
  std::vector<double> epoch_loss;  // mean batch loss per epoch
  std::vector<double> batch_loss;
};

struct PretrainConfig {
  int64_t epochs = 12;
  double lr = 1e-2;
  double final_lr_fraction = 0.1;  // cosine decay floor
  int64_t warmup_steps = 100;
  int64_t batch_size = 32;
  double clip_norm = 1.0;
  uint64_t seed = 1;
  // Documents start at a random position in [0, position_span - length] so
  // every position later used by a prompted attack is trained. 0 disables.
  int64_t position_span = 180;
  // > 0: each epoch concatenates the shuffled documents into one stream,
  // starting at a random phase, and trains on consecutive windows of this
  // many tokens. 0 trains on whole documents.
  int64_t pack_length = 128;
};

// Full-sequence next-token cross-entropy with Adam. Throws kTrainingFailure on
// a non-finite loss.
TrainHistory Pretrain(Model& model, const std::vector<TokenSeq>& documents,
                      const PretrainConfig& config);

// Mean next-token loss over every document, positions 0.. as in training.
double CorpusLoss(const Model& model, const std::vector<TokenSeq>& documents,
                  int64_t batch_size = 64);

enum class Objective { kClm, kAlignedClm };
std::string ObjectiveName(Objective objective);
Objective ParseObjective(const std::string& name);

struct SoftPrompt {
  Tensor weights;                  // [l, e]
  std::string objective_tag;       // clm, aligned_clm or defense
  bool converged = true;           // defense: stop rule reached

  int64_t length() const { return weights.dim(0); }
};

// Each row copies a uniformly drawn row of the token-embedding table.
SoftPrompt InitPrompt(const Model& model, int64_t l, uint64_t seed);

// Cross-entropy of [prompt ∥ prefix ∥ suffix] over prefix and suffix targets
// (kClm) or suffix targets only (kAlignedClm). Prompt rows are never targets;
// the first prefix token is a target only when a prompt precedes it.
Tensor AttackLoss(Tape& tape, const Model& model, const Tensor* prompt,
                  const std::vector<const Sequence*>& batch,
                  Objective objective);

struct AttackConfig {
  int64_t l = 20;
  Objective objective = Objective::kAlignedClm;
  int64_t epochs = 15;
  double lr = 5e-3;
  int64_t batch_size = 32;
  double clip_norm = 1.0;
  uint64_t seed = 1;
};

struct PromptResult {
  SoftPrompt prompt;
  TrainHistory history;
};

PromptResult TrainAttackPrompt(const Model& model,
                               const std::vector<Sequence>& train,
                               const AttackConfig& config);

enum class Direction { kAscend, kDescend };
Direction DefenseStepDirection(double loss, double theta);

struct DefenseConfig {
  double theta = 1.0;
  int64_t l = 1;
  int64_t max_epochs = 20;
  double lr = 5e-3;
  int64_t batch_size = 16;
  double clip_norm = 1.0;
  uint64_t seed = 1;
};

// Aligned-CLM prompt training that ascends on batches with loss < theta and
// descends otherwise; stops after the first epoch whose mean loss >= theta.
PromptResult TrainDefensePrompt(const Model& model,
                                const std::vector<Sequence>& train,
                                const DefenseConfig& config);

// [base + delta, base + delta + 0.25, ...], `steps` values.
std::vector<double> ThetaSchedule(double base_train_loss, int64_t steps,
                                  double delta = 0.25);

// Epoch-order helper shared by the prompt trainers: a seeded permutation of
// [0, n) for the given epoch.
std::vector<size_t> EpochOrder(size_t n, uint64_t seed, int64_t epoch);

void SavePrompt(const std::string& path, const SoftPrompt& prompt,
                const std::map<std::string, std::string>& extra = {});
SoftPrompt LoadPrompt(const std::string& path);

}  // namespace memlab

#endif  // MEMLAB_OPTIMIZE_H_
