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

#ifndef MEMLAB_CHECKPOINT_H_
#define MEMLAB_CHECKPOINT_H_

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "memlab/model.h"
#include "memlab/tensor.h"

namespace memlab {

// Binary container for named tensors.
//
// Layout (all integers little-endian):
//   "MLCK"  u32 version
//   u32 header_bytes, then `key=value\n` lines
//   u32 tensor_count, then per tensor:
//     u32 name_bytes, name, u32 rank, i64 dims[rank], f32 values[numel]
//
// Values are stored as float32 and widened to double on load.
struct Checkpoint {
  static constexpr uint32_t kVersion = 1;

  std::map<std::string, std::string> header;
  std::vector<std::pair<std::string, Tensor>> tensors;

  // Throws kFormat when the key is missing.
  const std::string& Get(const std::string& key) const;
  int64_t GetInt(const std::string& key) const;
  const Tensor& Find(const std::string& name) const;
};

void WriteCheckpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint ReadCheckpoint(const std::string& path);

// Header keys used for model checkpoints.
void PutModelConfig(const ModelConfig& config,
                    std::map<std::string, std::string>& header);
ModelConfig GetModelConfig(const Checkpoint& checkpoint);

// `extra` entries are merged into the header (kind=model is always set).
void SaveModel(const std::string& path, const Model& model,
               const std::map<std::string, std::string>& extra = {});
Model LoadModel(const std::string& path);

}  // namespace memlab

#endif  // MEMLAB_CHECKPOINT_H_
