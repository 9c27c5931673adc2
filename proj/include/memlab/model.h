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

#ifndef MEMLAB_MODEL_H_
#define MEMLAB_MODEL_H_

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "memlab/tensor.h"

namespace memlab {

using TokenId = int32_t;

struct ModelConfig {
  int64_t vocab_size = 512;
  int64_t embed_dim = 64;
  int64_t n_layers = 2;
  int64_t n_heads = 4;
  // Maximum number of rows per forward pass, soft-prompt rows included.
  int64_t context_len = 256;
  int64_t mlp_ratio = 4;

  int64_t head_dim() const { return embed_dim / n_heads; }
  int64_t hidden_dim() const { return mlp_ratio * embed_dim; }
  // Throws kSpec on non-positive sizes or embed_dim % n_heads != 0.
  void Validate() const;

  bool operator==(const ModelConfig&) const = default;
};

struct BlockParameters {
  Tensor ln1_gain, ln1_bias;
  Tensor wq, bq, wk, bk, wv, bv;
  Tensor wo, bo;
  Tensor ln2_gain, ln2_bias;
  Tensor w_up, b_up, w_down, b_down;
};

struct ModelParameters {
  Tensor token_embedding;     // [V, e]; doubles as the tied output head
  Tensor position_embedding;  // [context_len, e]
  std::vector<BlockParameters> blocks;
  Tensor final_gain, final_bias;

  // Every tensor under a stable dotted name, in a fixed order.
  std::vector<std::pair<std::string, Tensor>> Named() const;
};

// Trainable parameter count implied by the config's shape formulas.
int64_t CountParams(const ModelConfig& config);

// Pre-LN decoder-only transformer with learned absolute positions and an
// output head tied to the token embedding.
//
// Forward passes take [T, e] or [B, T, e] embeddings. A soft prompt, when
// present, occupies positions 0..l-1 and the tokens follow from position l.
class Model {
 public:
  // Random initialisation (normal, std 0.02; residual projections scaled by
  // 1/sqrt(2 * n_layers)).
  Model(const ModelConfig& config, uint64_t seed);
  // Adopts existing tensors; throws kShape when they disagree with config.
  Model(const ModelConfig& config, ModelParameters params);

  const ModelConfig& config() const { return config_; }
  const ModelParameters& params() const { return params_; }
  ModelParameters& mutable_params() { return params_; }

  std::vector<Tensor> Parameters() const;
  void SetTrainable(bool trainable);
  // Sum of tensor sizes, counted at runtime.
  int64_t ParameterCount() const;
  // FNV-1a over names, shapes and raw bytes of every parameter.
  uint64_t Checksum() const;
  void ZeroGrad();

  // rows[i] = token_embedding[tokens[i]] + position_embedding[offset + i].
  Tensor Embed(Tape& tape, std::span<const TokenId> tokens,
               int64_t offset = 0) const;
  // Equal-length token rows, optionally preceded by `prompt` [l, e]. Returns
  // [B, l + T, e] with positions offset.. already added.
  Tensor EmbedBatch(Tape& tape, const std::vector<std::vector<TokenId>>& batch,
                    const Tensor* prompt, int64_t offset = 0) const;

  // Final-layer-norm hidden states, same shape as `embedded`.
  Tensor ForwardHidden(Tape& tape, const Tensor& embedded) const;
  // hidden[..., e] -> logits[..., V] through the tied head.
  Tensor Logits(Tape& tape, const Tensor& hidden) const;
  Tensor ForwardLogits(Tape& tape, const Tensor& embedded) const;

 private:
  void CheckShapes() const;
  void CheckTokens(std::span<const TokenId> tokens) const;

  ModelConfig config_;
  ModelParameters params_;
};

// Rounds every parameter to the nearest float32 so the in-memory model is
// identical to what a checkpoint round-trip produces.
void RoundToCheckpointPrecision(Model& model);

}  // namespace memlab

#endif  // MEMLAB_MODEL_H_
