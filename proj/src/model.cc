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

#include "memlab/model.h"

#include <bit>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "memlab/error.h"
#include "memlab/ops.h"

namespace memlab {
namespace {

constexpr double kInitStd = 0.02;

Tensor Normal(const Shape& shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> values(ShapeNumel(shape));
  for (double& v : values) v = dist(rng);
  return Tensor(shape, std::move(values));
}

Tensor Filled(const Shape& shape, double value) {
  return Tensor(shape, std::vector<double>(ShapeNumel(shape), value));
}

void ExpectShape(const Tensor& t, const Shape& shape, const std::string& name) {
  if (!t.defined() || t.shape() != shape) {
    throw Error(ErrorCode::kShape,
                fmt::format("parameter {} has shape {}, expected {}", name,
                            t.defined() ? ShapeToString(t.shape()) : "<none>",
                            ShapeToString(shape)));
  }
}

void Fnv(uint64_t& h, const void* data, size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
}

}  // namespace

void ModelConfig::Validate() const {
  if (vocab_size < 1 || embed_dim < 1 || n_layers < 0 || n_heads < 1 ||
      context_len < 1 || mlp_ratio < 1) {
    throw Error(ErrorCode::kSpec, "model config has a non-positive size");
  }
  if (embed_dim % n_heads != 0) {
    throw Error(ErrorCode::kSpec,
                fmt::format("embed_dim {} is not divisible by n_heads {}",
                            embed_dim, n_heads));
  }
}

std::vector<std::pair<std::string, Tensor>> ModelParameters::Named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("tok_emb", token_embedding);
  out.emplace_back("pos_emb", position_embedding);
  for (size_t i = 0; i < blocks.size(); ++i) {
    const BlockParameters& b = blocks[i];
    const std::string p = fmt::format("blocks.{}.", i);
    out.emplace_back(p + "ln1.gain", b.ln1_gain);
    out.emplace_back(p + "ln1.bias", b.ln1_bias);
    out.emplace_back(p + "attn.wq", b.wq);
    out.emplace_back(p + "attn.bq", b.bq);
    out.emplace_back(p + "attn.wk", b.wk);
    out.emplace_back(p + "attn.bk", b.bk);
    out.emplace_back(p + "attn.wv", b.wv);
    out.emplace_back(p + "attn.bv", b.bv);
    out.emplace_back(p + "attn.wo", b.wo);
    out.emplace_back(p + "attn.bo", b.bo);
    out.emplace_back(p + "ln2.gain", b.ln2_gain);
    out.emplace_back(p + "ln2.bias", b.ln2_bias);
    out.emplace_back(p + "mlp.w_up", b.w_up);
    out.emplace_back(p + "mlp.b_up", b.b_up);
    out.emplace_back(p + "mlp.w_down", b.w_down);
    out.emplace_back(p + "mlp.b_down", b.b_down);
  }
  out.emplace_back("final_ln.gain", final_gain);
  out.emplace_back("final_ln.bias", final_bias);
  return out;
}

int64_t CountParams(const ModelConfig& config) {
  config.Validate();
  const int64_t e = config.embed_dim;
  const int64_t h = config.hidden_dim();
  const int64_t per_layer = 2 * (2 * e)         // two layer norms
                            + 4 * (e * e + e)   // q, k, v, output projection
                            + (e * h + h)       // mlp up
                            + (h * e + e);      // mlp down
  return config.vocab_size * e + config.context_len * e +
         config.n_layers * per_layer + 2 * e;
}

Model::Model(const ModelConfig& config, uint64_t seed) : config_(config) {
  config_.Validate();
  std::mt19937_64 rng(seed);
  const int64_t e = config_.embed_dim;
  const int64_t h = config_.hidden_dim();
  const double residual_std =
      kInitStd / std::sqrt(2.0 * std::max<int64_t>(1, config_.n_layers));
  params_.token_embedding = Normal({config_.vocab_size, e}, kInitStd, rng);
  params_.position_embedding = Normal({config_.context_len, e}, kInitStd, rng);
  for (int64_t i = 0; i < config_.n_layers; ++i) {
    BlockParameters b;
    b.ln1_gain = Filled({e}, 1.0);
    b.ln1_bias = Filled({e}, 0.0);
    b.wq = Normal({e, e}, kInitStd, rng);
    b.bq = Filled({e}, 0.0);
    b.wk = Normal({e, e}, kInitStd, rng);
    b.bk = Filled({e}, 0.0);
    b.wv = Normal({e, e}, kInitStd, rng);
    b.bv = Filled({e}, 0.0);
    b.wo = Normal({e, e}, residual_std, rng);
    b.bo = Filled({e}, 0.0);
    b.ln2_gain = Filled({e}, 1.0);
    b.ln2_bias = Filled({e}, 0.0);
    b.w_up = Normal({e, h}, kInitStd, rng);
    b.b_up = Filled({h}, 0.0);
    b.w_down = Normal({h, e}, residual_std, rng);
    b.b_down = Filled({e}, 0.0);
    params_.blocks.push_back(std::move(b));
  }
  params_.final_gain = Filled({e}, 1.0);
  params_.final_bias = Filled({e}, 0.0);
}

Model::Model(const ModelConfig& config, ModelParameters params)
    : config_(config), params_(std::move(params)) {
  config_.Validate();
  CheckShapes();
}

void Model::CheckShapes() const {
  const int64_t e = config_.embed_dim;
  const int64_t h = config_.hidden_dim();
  ExpectShape(params_.token_embedding, {config_.vocab_size, e}, "tok_emb");
  ExpectShape(params_.position_embedding, {config_.context_len, e}, "pos_emb");
  if (static_cast<int64_t>(params_.blocks.size()) != config_.n_layers) {
    throw Error(ErrorCode::kShape,
                fmt::format("{} blocks for n_layers={}", params_.blocks.size(),
                            config_.n_layers));
  }
  for (const BlockParameters& b : params_.blocks) {
    ExpectShape(b.ln1_gain, {e}, "ln1.gain");
    ExpectShape(b.ln1_bias, {e}, "ln1.bias");
    for (const Tensor* w : {&b.wq, &b.wk, &b.wv, &b.wo}) {
      ExpectShape(*w, {e, e}, "attn weight");
    }
    for (const Tensor* bias : {&b.bq, &b.bk, &b.bv, &b.bo}) {
      ExpectShape(*bias, {e}, "attn bias");
    }
    ExpectShape(b.ln2_gain, {e}, "ln2.gain");
    ExpectShape(b.ln2_bias, {e}, "ln2.bias");
    ExpectShape(b.w_up, {e, h}, "mlp.w_up");
    ExpectShape(b.b_up, {h}, "mlp.b_up");
    ExpectShape(b.w_down, {h, e}, "mlp.w_down");
    ExpectShape(b.b_down, {e}, "mlp.b_down");
  }
  ExpectShape(params_.final_gain, {e}, "final_ln.gain");
  ExpectShape(params_.final_bias, {e}, "final_ln.bias");
}

std::vector<Tensor> Model::Parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : params_.Named()) out.push_back(t);
  return out;
}

void Model::SetTrainable(bool trainable) {
  for (Tensor& t : Parameters()) t.set_tracked(trainable);
}

int64_t Model::ParameterCount() const {
  int64_t n = 0;
  for (const Tensor& t : Parameters()) n += t.numel();
  return n;
}

uint64_t Model::Checksum() const {
  uint64_t h = 14695981039346656037ULL;
  for (const auto& [name, t] : params_.Named()) {
    Fnv(h, name.data(), name.size());
    for (int64_t d : t.shape()) Fnv(h, &d, sizeof(d));
    Fnv(h, t.data().data(), t.data().size_bytes());
  }
  return h;
}

void Model::ZeroGrad() {
  for (Tensor& t : Parameters()) t.ZeroGrad();
}

void Model::CheckTokens(std::span<const TokenId> tokens) const {
  for (TokenId id : tokens) {
    if (id < 0 || id >= config_.vocab_size) {
      throw Error(ErrorCode::kVocab,
                  fmt::format("token id {} outside [0, {})", id,
                              config_.vocab_size));
    }
  }
}

Tensor Model::Embed(Tape& tape, std::span<const TokenId> tokens,
                    int64_t offset) const {
  CheckTokens(tokens);
  const int64_t t = static_cast<int64_t>(tokens.size());
  if (offset < 0 || offset + t > config_.context_len) {
    throw Error(ErrorCode::kContextOverflow,
                fmt::format("positions {}..{} exceed context length {}",
                            offset, offset + t, config_.context_len));
  }
  std::vector<int64_t> ids(tokens.begin(), tokens.end());
  std::vector<int64_t> positions(t);
  std::iota(positions.begin(), positions.end(), offset);
  return Add(tape, GatherRows(tape, params_.token_embedding, ids),
             GatherRows(tape, params_.position_embedding, positions));
}

Tensor Model::EmbedBatch(Tape& tape,
                         const std::vector<std::vector<TokenId>>& batch,
                         const Tensor* prompt, int64_t offset) const {
  if (batch.empty()) {
    throw Error(ErrorCode::kEmptyInput, "embed: empty batch");
  }
  const int64_t e = config_.embed_dim;
  const int64_t b = static_cast<int64_t>(batch.size());
  const int64_t t = static_cast<int64_t>(batch.front().size());
  const int64_t l = prompt != nullptr ? prompt->dim(0) : 0;
  if (prompt != nullptr && (prompt->rank() != 2 || prompt->dim(1) != e)) {
    throw Error(ErrorCode::kDimension,
                fmt::format("prompt shape {} does not match embed_dim {}",
                            ShapeToString(prompt->shape()), e));
  }
  if (offset < 0 || offset + l + t > config_.context_len) {
    throw Error(ErrorCode::kContextOverflow,
                fmt::format("offset {} + prompt {} + tokens {} exceed context "
                            "length {}",
                            offset, l, t, config_.context_len));
  }
  std::vector<int64_t> ids;
  ids.reserve(b * t);
  for (const auto& row : batch) {
    if (static_cast<int64_t>(row.size()) != t) {
      throw Error(ErrorCode::kLength, "embed: ragged batch");
    }
    CheckTokens(row);
    ids.insert(ids.end(), row.begin(), row.end());
  }
  Tensor x = Reshape(tape, GatherRows(tape, params_.token_embedding, ids),
                     {b, t, e});
  if (prompt != nullptr) x = PrependRows(tape, *prompt, x);
  std::vector<int64_t> positions(l + t);
  std::iota(positions.begin(), positions.end(), offset);
  return AddBroadcast(tape, x,
                      GatherRows(tape, params_.position_embedding, positions));
}

Tensor Model::ForwardHidden(Tape& tape, const Tensor& embedded) const {
  const int64_t e = config_.embed_dim;
  const bool single = embedded.rank() == 2;
  if ((embedded.rank() != 2 && embedded.rank() != 3) ||
      embedded.dim(-1) != e) {
    throw Error(ErrorCode::kDimension,
                fmt::format("forward: expected [T,{0}] or [B,T,{0}], got {1}",
                            e, ShapeToString(embedded.shape())));
  }
  const int64_t t = embedded.dim(-2);
  if (t > config_.context_len) {
    throw Error(ErrorCode::kContextOverflow,
                fmt::format("{} rows exceed context length {}", t,
                            config_.context_len));
  }
  const int64_t heads = config_.n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(config_.head_dim()));

  Tensor x = single ? Reshape(tape, embedded, {1, t, e}) : embedded;
  for (const BlockParameters& p : params_.blocks) {
    Tensor h = LayerNorm(tape, x, p.ln1_gain, p.ln1_bias);
    Tensor q = SplitHeads(tape, AddBroadcast(tape, MatMul(tape, h, p.wq), p.bq),
                          heads);
    Tensor k = SplitHeads(tape, AddBroadcast(tape, MatMul(tape, h, p.wk), p.bk),
                          heads);
    Tensor v = SplitHeads(tape, AddBroadcast(tape, MatMul(tape, h, p.wv), p.bv),
                          heads);
    Tensor weights =
        CausalSoftmax(tape, BatchedMatMul(tape, q, k, true), scale);
    Tensor attended =
        MergeHeads(tape, BatchedMatMul(tape, weights, v, false), heads);
    x = Add(tape, x,
            AddBroadcast(tape, MatMul(tape, attended, p.wo), p.bo));

    Tensor h2 = LayerNorm(tape, x, p.ln2_gain, p.ln2_bias);
    Tensor up = Gelu(tape, AddBroadcast(tape, MatMul(tape, h2, p.w_up), p.b_up));
    x = Add(tape, x,
            AddBroadcast(tape, MatMul(tape, up, p.w_down), p.b_down));
  }
  Tensor out = LayerNorm(tape, x, params_.final_gain, params_.final_bias);
  return single ? Reshape(tape, out, {t, e}) : out;
}

Tensor Model::Logits(Tape& tape, const Tensor& hidden) const {
  return MatMulTransposed(tape, hidden, params_.token_embedding);
}

Tensor Model::ForwardLogits(Tape& tape, const Tensor& embedded) const {
  return Logits(tape, ForwardHidden(tape, embedded));
}

void RoundToCheckpointPrecision(Model& model) {
  for (Tensor& t : model.Parameters()) {
    for (double& v : t.mutable_data()) {
      v = static_cast<double>(static_cast<float>(v));
    }
  }
}

}  // namespace memlab
