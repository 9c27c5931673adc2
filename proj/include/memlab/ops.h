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

#ifndef MEMLAB_OPS_H_
#define MEMLAB_OPS_H_

#include <cstdint>
#include <span>
#include <vector>

#include "memlab/tensor.h"

namespace memlab {

// Every op records itself on `tape` when any input is tracked. Shapes use
// [..., n] for "any leading dims, last dim n".

// a[..., k] x b[k, n] -> [..., n]
Tensor MatMul(Tape& tape, const Tensor& a, const Tensor& b);
// a[..., k] x b[n, k]^T -> [..., n]
Tensor MatMulTransposed(Tape& tape, const Tensor& a, const Tensor& b);
// a[B, m, k] x b[B, k, n] -> [B, m, n], or b[B, n, k]^T when transpose_b.
Tensor BatchedMatMul(Tape& tape, const Tensor& a, const Tensor& b,
                     bool transpose_b);

Tensor Add(Tape& tape, const Tensor& a, const Tensor& b);
// y's shape must equal the trailing dims of x; y is repeated over the rest.
Tensor AddBroadcast(Tape& tape, const Tensor& x, const Tensor& y);
Tensor Mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor Scale(Tape& tape, const Tensor& x, double factor);
Tensor Sum(Tape& tape, const Tensor& x);

// Tanh approximation of GELU.
Tensor Gelu(Tape& tape, const Tensor& x);
Tensor LayerNorm(Tape& tape, const Tensor& x, const Tensor& gain,
                 const Tensor& bias, double eps = 1e-5);

// Softmax over the last dim, stabilised by max-subtraction.
Tensor RowSoftmax(Tape& tape, const Tensor& x);
// x[..., T, T]: entries above the diagonal are replaced by a large negative
// constant so that a following RowSoftmax assigns them zero weight.
Tensor CausalMask(Tape& tape, const Tensor& x);
// softmax(scale * x) over columns j <= i of each [T, T] matrix row i; columns
// j > i are exactly zero. Equals RowSoftmax(CausalMask(Scale(x, scale))).
Tensor CausalSoftmax(Tape& tape, const Tensor& x, double scale);

// table[R, C] gathered at `rows` -> [rows.size(), C]. Backward scatter-adds.
Tensor GatherRows(Tape& tape, const Tensor& table,
                  std::span<const int64_t> rows);
Tensor Reshape(Tape& tape, const Tensor& x, Shape shape);
// rows[l, e] placed in front of every batch item of x[B, T, e].
Tensor PrependRows(Tape& tape, const Tensor& rows, const Tensor& x);
// x[B, T, H * d] -> [B * H, T, d]
Tensor SplitHeads(Tape& tape, const Tensor& x, int64_t n_heads);
// x[B * H, T, d] -> [B, T, H * d]
Tensor MergeHeads(Tape& tape, const Tensor& x, int64_t n_heads);

// Mean negative log-likelihood of `targets` under softmax(logits) over the
// rows whose mask entry is true. logits is [T, V].
Tensor TokenCrossEntropy(Tape& tape, const Tensor& logits,
                         std::span<const int32_t> targets,
                         const std::vector<bool>& mask);

}  // namespace memlab

#endif  // MEMLAB_OPS_H_
