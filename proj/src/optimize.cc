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

#include "memlab/optimize.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>

#include <fmt/format.h>

#include "memlab/checkpoint.h"
#include "memlab/error.h"
#include "memlab/ops.h"
#include "memlab/random.h"

namespace memlab {
namespace {

void CheckFiniteLoss(double loss, const char* what, int64_t epoch) {
  if (!std::isfinite(loss)) {
    throw Error(ErrorCode::kTrainingFailure,
                fmt::format("{}: non-finite loss in epoch {}", what, epoch + 1));
  }
}

// Untracks the model's parameters for the lifetime of the guard so prompt
// training never records weight gradients.
class FreezeGuard {
 public:
  explicit FreezeGuard(const Model& model) : params_(model.Parameters()) {
    for (Tensor& t : params_) {
      was_tracked_.push_back(t.tracked());
      t.set_tracked(false);
    }
  }
  ~FreezeGuard() {
    for (size_t i = 0; i < params_.size(); ++i) {
      params_[i].set_tracked(was_tracked_[i]);
    }
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  std::vector<Tensor> params_;
  std::vector<bool> was_tracked_;
};

// Next-token loss of equal-length documents at one position offset.
Tensor DocumentLoss(Tape& tape, const Model& model,
                    const std::vector<TokenSeq>& batch, int64_t offset) {
  const int64_t b = static_cast<int64_t>(batch.size());
  const int64_t t = static_cast<int64_t>(batch.front().size());
  const int64_t e = model.config().embed_dim;
  Tensor hidden = Reshape(
      tape,
      model.ForwardHidden(tape, model.EmbedBatch(tape, batch, nullptr, offset)),
      {b * t, e});
  std::vector<int64_t> rows;
  std::vector<int32_t> targets;
  rows.reserve(b * (t - 1));
  targets.reserve(b * (t - 1));
  for (int64_t i = 0; i < b; ++i) {
    for (int64_t j = 0; j + 1 < t; ++j) {
      rows.push_back(i * t + j);
      targets.push_back(batch[i][j + 1]);
    }
  }
  Tensor logits = model.Logits(tape, GatherRows(tape, hidden, rows));
  return TokenCrossEntropy(tape, logits, targets,
                           std::vector<bool>(targets.size(), true));
}

// Batches of equal-length documents: lengths are bucketed, each bucket keeps
// the shuffled order, and the batch list itself is shuffled.
std::vector<std::vector<size_t>> LengthBatches(
    const std::vector<TokenSeq>& docs, int64_t batch_size, Rng& rng) {
  std::vector<size_t> order(docs.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::map<size_t, std::vector<size_t>> buckets;
  for (size_t i : order) buckets[docs[i].size()].push_back(i);
  std::vector<std::vector<size_t>> batches;
  for (const auto& [len, idx] : buckets) {
    for (size_t start = 0; start < idx.size();
         start += static_cast<size_t>(batch_size)) {
      const size_t end =
          std::min(idx.size(), start + static_cast<size_t>(batch_size));
      batches.emplace_back(idx.begin() + start, idx.begin() + end);
    }
  }
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

// Windows of `length` tokens cut from the documents concatenated in a
// shuffled order. The stream is entered at a random phase in [0, length) and
// always yields the same number of windows, floor(total / length) - 1.
std::vector<TokenSeq> PackedWindows(const std::vector<TokenSeq>& docs,
                                    int64_t length, Rng& rng) {
  std::vector<size_t> order(docs.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  TokenSeq stream;
  for (size_t i : order) stream.insert(stream.end(), docs[i].begin(), docs[i].end());
  const int64_t total = static_cast<int64_t>(stream.size());
  const int64_t count = total / length - 1;
  const int64_t phase = UniformInt(rng, 0, length - 1);
  std::vector<TokenSeq> windows;
  windows.reserve(std::max<int64_t>(count, 0));
  for (int64_t w = 0; w < count; ++w) {
    const auto begin = stream.begin() + phase + w * length;
    windows.emplace_back(begin, begin + length);
  }
  return windows;
}

int64_t TotalTokens(const std::vector<TokenSeq>& docs) {
  int64_t total = 0;
  for (const TokenSeq& d : docs) total += static_cast<int64_t>(d.size());
  return total;
}

void ValidateDocuments(const Model& model, const std::vector<TokenSeq>& docs) {
  if (docs.empty()) {
    throw Error(ErrorCode::kEmptyInput, "pretrain: corpus is empty");
  }
  for (const TokenSeq& doc : docs) {
    if (doc.size() < 2) {
      throw Error(ErrorCode::kLength, "pretrain: documents need >= 2 tokens");
    }
    if (static_cast<int64_t>(doc.size()) > model.config().context_len) {
      throw Error(ErrorCode::kContextOverflow,
                  fmt::format("pretrain: document of {} tokens exceeds context {}",
                              doc.size(), model.config().context_len));
    }
  }
}

std::vector<std::vector<const Sequence*>> SequenceBatches(
    const std::vector<Sequence>& seqs, int64_t batch_size, uint64_t seed,
    int64_t epoch) {
  const std::vector<size_t> order = EpochOrder(seqs.size(), seed, epoch);
  std::vector<std::vector<const Sequence*>> batches;
  for (size_t start = 0; start < order.size();
       start += static_cast<size_t>(batch_size)) {
    std::vector<const Sequence*> batch;
    const size_t end =
        std::min(order.size(), start + static_cast<size_t>(batch_size));
    for (size_t i = start; i < end; ++i) batch.push_back(&seqs[order[i]]);
    batches.push_back(std::move(batch));
  }
  return batches;
}

void CheckPromptTraining(const std::vector<Sequence>& train, int64_t batch_size,
                         double lr, const char* what) {
  if (train.empty()) {
    throw Error(ErrorCode::kEmptyInput, fmt::format("{}: S_train is empty", what));
  }
  if (batch_size < 1 || !(lr > 0.0)) {
    throw Error(ErrorCode::kConfig,
                fmt::format("{}: needs batch_size >= 1 and lr > 0", what));
  }
}

}  // namespace

Adam::Adam(std::vector<Tensor> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (const Tensor& p : params_) {
    state_.m.emplace_back(p.numel(), 0.0);
    state_.v.emplace_back(p.numel(), 0.0);
  }
}

void Adam::Step(double lr, double sign) {
  ++state_.step;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state_.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state_.step));
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad() || p.grad().empty()) continue;
    const double* g = p.grad().data();
    double* w = p.mutable_data().data();
    double* m = state_.m[i].data();
    double* v = state_.v[i].data();
    for (int64_t j = 0; j < p.numel(); ++j) {
      const double gj = sign * g[j];
      m[j] = b1 * m[j] + (1.0 - b1) * gj;
      v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + options_.eps);
    }
  }
}

void Adam::ZeroGrad() {
  for (Tensor& p : params_) p.ZeroGrad();
}

double ClipGradNorm(const std::vector<Tensor>& params, double max_norm) {
  double total = 0.0;
  for (const Tensor& p : params) {
    for (double g : p.grad()) total += g * g;
  }
  const double norm = std::sqrt(total);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (const Tensor& p : params) {
      if (p.grad().empty()) continue;
      for (double& g : p.mutable_grad()) g *= scale;
    }
  }
  return norm;
}

TrainHistory Pretrain(Model& model, const std::vector<TokenSeq>& documents,
                      const PretrainConfig& config) {
  TrainHistory history;
  if (config.epochs <= 0) return history;
  ValidateDocuments(model, documents);
  if (config.batch_size < 1 || !(config.lr > 0.0)) {
    throw Error(ErrorCode::kConfig, "pretrain: needs batch_size >= 1 and lr > 0");
  }
  const bool packed = config.pack_length > 0;
  if (packed && (config.pack_length < 2 ||
                 config.pack_length > model.config().context_len ||
                 TotalTokens(documents) / config.pack_length < 2)) {
    throw Error(ErrorCode::kConfig,
                fmt::format("pretrain: pack_length {} needs 2 <= length <= context {} "
                            "and at least two windows of corpus",
                            config.pack_length, model.config().context_len));
  }
  TuneAllocator();
  Rng rng = MakeRng(config.seed, Stream::kShuffle);
  Rng offsets = MakeRng(config.seed, Stream::kOffsets);

  int64_t n_batches = 0;
  if (packed) {
    const int64_t windows = TotalTokens(documents) / config.pack_length - 1;
    n_batches = (windows + config.batch_size - 1) / config.batch_size;
  } else {
    n_batches = static_cast<int64_t>(
        LengthBatches(documents, config.batch_size, rng).size());
    rng = MakeRng(config.seed, Stream::kShuffle);
  }
  const int64_t total_steps = n_batches * config.epochs;
  auto lr_at = [&](int64_t step) {
    if (step < config.warmup_steps) {
      return config.lr * static_cast<double>(step + 1) /
             static_cast<double>(config.warmup_steps);
    }
    const double progress =
        static_cast<double>(step - config.warmup_steps) /
        static_cast<double>(std::max<int64_t>(1, total_steps - config.warmup_steps));
    const double floor = config.final_lr_fraction;
    return config.lr *
           (floor + (1.0 - floor) * 0.5 *
                        (1.0 + std::cos(std::numbers::pi * std::min(1.0, progress))));
  };

  std::vector<Tensor> params = model.Parameters();
  model.SetTrainable(true);
  Adam adam(params);
  int64_t step = 0;
  try {
    for (int64_t epoch = 0; epoch < config.epochs; ++epoch) {
      double sum = 0.0;
      int64_t count = 0;
      std::vector<std::vector<TokenSeq>> batches;
      if (packed) {
        std::vector<TokenSeq> windows = PackedWindows(documents, config.pack_length, rng);
        for (size_t start = 0; start < windows.size();
             start += static_cast<size_t>(config.batch_size)) {
          const size_t end = std::min(windows.size(),
                                      start + static_cast<size_t>(config.batch_size));
          batches.emplace_back(std::make_move_iterator(windows.begin() + start),
                               std::make_move_iterator(windows.begin() + end));
        }
      } else {
        for (const auto& idx : LengthBatches(documents, config.batch_size, rng)) {
          std::vector<TokenSeq>& batch = batches.emplace_back();
          for (size_t i : idx) batch.push_back(documents[i]);
        }
      }
      for (const std::vector<TokenSeq>& batch : batches) {
        const int64_t len = static_cast<int64_t>(batch.front().size());
        const int64_t span =
            config.position_span > 0
                ? std::min(config.position_span, model.config().context_len)
                : len;
        const int64_t offset =
            span > len ? UniformInt(offsets, 0, span - len) : 0;
        adam.ZeroGrad();
        Tape tape;
        Tensor loss = DocumentLoss(tape, model, batch, offset);
        CheckFiniteLoss(loss.item(), "pretrain", epoch);
        tape.Backward(loss);
        ClipGradNorm(params, config.clip_norm);
        adam.Step(lr_at(step++));
        history.batch_loss.push_back(loss.item());
        sum += loss.item() * static_cast<double>(batch.size());
        count += static_cast<int64_t>(batch.size());
      }
      history.epoch_loss.push_back(sum / static_cast<double>(count));
    }
  } catch (...) {
    model.SetTrainable(false);
    throw;
  }
  model.SetTrainable(false);
  adam.ZeroGrad();
  return history;
}

double CorpusLoss(const Model& model, const std::vector<TokenSeq>& documents,
                  int64_t batch_size) {
  ValidateDocuments(model, documents);
  FreezeGuard frozen(model);
  std::map<size_t, std::vector<size_t>> buckets;
  for (size_t i = 0; i < documents.size(); ++i) {
    buckets[documents[i].size()].push_back(i);
  }
  double total = 0.0;
  int64_t tokens = 0;
  for (const auto& [len, idx] : buckets) {
    for (size_t start = 0; start < idx.size();
         start += static_cast<size_t>(batch_size)) {
      std::vector<TokenSeq> batch;
      for (size_t i = start;
           i < std::min(idx.size(), start + static_cast<size_t>(batch_size)); ++i) {
        batch.push_back(documents[idx[i]]);
      }
      Tape tape;
      const double loss = DocumentLoss(tape, model, batch, 0).item();
      const int64_t n = static_cast<int64_t>(batch.size() * (len - 1));
      total += loss * static_cast<double>(n);
      tokens += n;
    }
  }
  return total / static_cast<double>(tokens);
}

std::string ObjectiveName(Objective objective) {
  return objective == Objective::kClm ? "clm" : "aligned_clm";
}

Objective ParseObjective(const std::string& name) {
  if (name == "clm") return Objective::kClm;
  if (name == "aligned_clm") return Objective::kAlignedClm;
  throw Error(ErrorCode::kConfig,
              fmt::format("unknown objective '{}' (clm, aligned_clm)", name));
}

SoftPrompt InitPrompt(const Model& model, int64_t l, uint64_t seed) {
  if (l < 1) {
    throw Error(ErrorCode::kConfig, fmt::format("prompt length {} < 1", l));
  }
  const int64_t e = model.config().embed_dim;
  const int64_t v = model.config().vocab_size;
  Rng rng = MakeRng(seed, Stream::kPrompt);
  const auto table = model.params().token_embedding.data();
  std::vector<double> values;
  values.reserve(l * e);
  for (int64_t i = 0; i < l; ++i) {
    const int64_t row = UniformInt(rng, 0, v - 1);
    values.insert(values.end(), table.begin() + row * e,
                  table.begin() + (row + 1) * e);
  }
  SoftPrompt prompt;
  prompt.weights = Tensor({l, e}, std::move(values));
  return prompt;
}

Tensor AttackLoss(Tape& tape, const Model& model, const Tensor* prompt,
                  const std::vector<const Sequence*>& batch,
                  Objective objective) {
  if (batch.empty()) {
    throw Error(ErrorCode::kEmptyInput, "attack_loss: empty batch");
  }
  const auto k = static_cast<int64_t>(batch.front()->prefix.size());
  const auto s = static_cast<int64_t>(batch.front()->suffix.size());
  const int64_t n = k + s;
  if (k < 1 || s < 1) {
    throw Error(ErrorCode::kLength, "attack_loss: empty prefix or suffix");
  }
  const int64_t l = prompt != nullptr ? prompt->dim(0) : 0;
  // Inputs drop the final suffix token: it predicts nothing.
  std::vector<TokenSeq> inputs;
  inputs.reserve(batch.size());
  for (const Sequence* seq : batch) {
    if (static_cast<int64_t>(seq->prefix.size()) != k ||
        static_cast<int64_t>(seq->suffix.size()) != s) {
      throw Error(ErrorCode::kLength, "attack_loss: ragged batch");
    }
    TokenSeq row = seq->prefix;
    row.insert(row.end(), seq->suffix.begin(), seq->suffix.end() - 1);
    inputs.push_back(std::move(row));
  }
  const int64_t b = static_cast<int64_t>(batch.size());
  const int64_t rows_per = l + n - 1;
  const int64_t e = model.config().embed_dim;
  Tensor hidden = Reshape(
      tape, model.ForwardHidden(tape, model.EmbedBatch(tape, inputs, prompt)),
      {b * rows_per, e});

  // Row l - 1 + j predicts token j of prefix ∥ suffix.
  const int64_t first = objective == Objective::kAlignedClm ? k : (l > 0 ? 0 : 1);
  std::vector<int64_t> rows;
  std::vector<int32_t> targets;
  for (int64_t i = 0; i < b; ++i) {
    for (int64_t j = first; j < n; ++j) {
      rows.push_back(i * rows_per + l - 1 + j);
      targets.push_back(j < k ? batch[i]->prefix[j] : batch[i]->suffix[j - k]);
    }
  }
  Tensor logits = model.Logits(tape, GatherRows(tape, hidden, rows));
  return TokenCrossEntropy(tape, logits, targets,
                           std::vector<bool>(targets.size(), true));
}

std::vector<size_t> EpochOrder(size_t n, uint64_t seed, int64_t epoch) {
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(DeriveSeed(DeriveSeed(seed, static_cast<uint64_t>(Stream::kShuffle)),
                     static_cast<uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

PromptResult TrainAttackPrompt(const Model& model,
                               const std::vector<Sequence>& train,
                               const AttackConfig& config) {
  PromptResult result;
  result.prompt = InitPrompt(model, config.l, config.seed);
  result.prompt.objective_tag = ObjectiveName(config.objective);
  if (config.epochs <= 0) return result;
  CheckPromptTraining(train, config.batch_size, config.lr, "attack");
  TuneAllocator();
  FreezeGuard frozen(model);
  Tensor weights = result.prompt.weights;
  weights.set_tracked(true);
  Adam adam({weights});
  for (int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    double sum = 0.0;
    size_t count = 0;
    for (const auto& batch :
         SequenceBatches(train, config.batch_size, config.seed, epoch)) {
      adam.ZeroGrad();
      Tape tape;
      Tensor loss = AttackLoss(tape, model, &weights, batch, config.objective);
      CheckFiniteLoss(loss.item(), "attack", epoch);
      tape.Backward(loss);
      ClipGradNorm({weights}, config.clip_norm);
      adam.Step(config.lr);
      result.history.batch_loss.push_back(loss.item());
      sum += loss.item() * static_cast<double>(batch.size());
      count += batch.size();
    }
    result.history.epoch_loss.push_back(sum / static_cast<double>(count));
  }
  result.prompt.weights = weights.Clone();
  return result;
}

Direction DefenseStepDirection(double loss, double theta) {
  return loss < theta ? Direction::kAscend : Direction::kDescend;
}

PromptResult TrainDefensePrompt(const Model& model,
                                const std::vector<Sequence>& train,
                                const DefenseConfig& config) {
  if (!(config.theta >= 0.0)) {
    throw Error(ErrorCode::kConfig,
                fmt::format("defense: theta {} must be >= 0", config.theta));
  }
  CheckPromptTraining(train, config.batch_size, config.lr, "defense");
  TuneAllocator();
  PromptResult result;
  result.prompt = InitPrompt(model, config.l, config.seed);
  result.prompt.objective_tag = "defense";
  result.prompt.converged = false;
  FreezeGuard frozen(model);
  Tensor weights = result.prompt.weights;
  weights.set_tracked(true);
  Adam adam({weights});
  for (int64_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    double sum = 0.0;
    size_t count = 0;
    for (const auto& batch :
         SequenceBatches(train, config.batch_size, config.seed, epoch)) {
      adam.ZeroGrad();
      Tape tape;
      Tensor loss =
          AttackLoss(tape, model, &weights, batch, Objective::kAlignedClm);
      CheckFiniteLoss(loss.item(), "defense", epoch);
      tape.Backward(loss);
      ClipGradNorm({weights}, config.clip_norm);
      const bool ascend =
          DefenseStepDirection(loss.item(), config.theta) == Direction::kAscend;
      adam.Step(config.lr, ascend ? -1.0 : 1.0);
      result.history.batch_loss.push_back(loss.item());
      sum += loss.item() * static_cast<double>(batch.size());
      count += batch.size();
    }
    const double mean = sum / static_cast<double>(count);
    result.history.epoch_loss.push_back(mean);
    if (mean >= config.theta) {
      result.prompt.converged = true;
      break;
    }
  }
  result.prompt.weights = weights.Clone();
  return result;
}

std::vector<double> ThetaSchedule(double base_train_loss, int64_t steps,
                                  double delta) {
  if (steps < 1) {
    throw Error(ErrorCode::kConfig, "theta_schedule: steps must be >= 1");
  }
  // Snap the start to a 2^-40 grid so each added 0.25 is exact.
  const double start =
      std::ldexp(std::round(std::ldexp(base_train_loss + delta, 40)), -40);
  std::vector<double> out;
  for (int64_t i = 0; i < steps; ++i) out.push_back(start + 0.25 * i);
  return out;
}

void SavePrompt(const std::string& path, const SoftPrompt& prompt,
                const std::map<std::string, std::string>& extra) {
  Checkpoint ck;
  ck.header = extra;
  ck.header["kind"] = "prompt";
  ck.header["objective_tag"] = prompt.objective_tag;
  ck.header["prompt_length"] = std::to_string(prompt.length());
  ck.header["embed_dim"] = std::to_string(prompt.weights.dim(1));
  ck.header["converged"] = prompt.converged ? "1" : "0";
  ck.tensors.emplace_back("prompt", prompt.weights);
  WriteCheckpoint(path, ck);
}

SoftPrompt LoadPrompt(const std::string& path) {
  const Checkpoint ck = ReadCheckpoint(path);
  if (ck.Get("kind") != "prompt") {
    throw Error(ErrorCode::kFormat,
                fmt::format("{}: expected a prompt checkpoint", path));
  }
  SoftPrompt prompt;
  prompt.weights = ck.Find("prompt").Clone();
  prompt.objective_tag = ck.Get("objective_tag");
  prompt.converged = ck.Get("converged") == "1";
  if (prompt.weights.rank() != 2 ||
      prompt.weights.dim(0) != ck.GetInt("prompt_length") ||
      prompt.weights.dim(1) != ck.GetInt("embed_dim")) {
    throw Error(ErrorCode::kFormat,
                fmt::format("{}: prompt shape disagrees with header", path));
  }
  return prompt;
}

}  // namespace memlab
