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

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include <gtest/gtest.h>

#include "memlab/checkpoint.h"
#include "memlab/error.h"
#include "memlab/model.h"

namespace memlab {
namespace {

std::string TempPath(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

ModelConfig SmallConfig() {
  ModelConfig cfg;
  cfg.vocab_size = 20;
  cfg.embed_dim = 8;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.context_len = 16;
  return cfg;
}

TEST(CheckpointTest, RoundTripsHeaderAndTensors) {
  Checkpoint ck;
  ck.header["kind"] = "test";
  ck.header["answer"] = "42";
  ck.tensors.emplace_back("a", Tensor({2, 3}, {1, -2, 3.5, 0, 0.25, -8}));
  ck.tensors.emplace_back("empty", Tensor({0, 4}));
  const std::string path = TempPath("memlab_ck_roundtrip.bin");
  WriteCheckpoint(path, ck);

  const Checkpoint r = ReadCheckpoint(path);
  EXPECT_EQ(r.header, ck.header);
  EXPECT_EQ(r.GetInt("answer"), 42);
  ASSERT_EQ(r.tensors.size(), 2u);
  EXPECT_EQ(r.tensors[0].first, "a");
  EXPECT_EQ(r.Find("a").shape(), (Shape{2, 3}));
  for (int i = 0; i < 6; ++i) {
    EXPECT_EQ(r.Find("a").data()[i], ck.tensors[0].second.data()[i]);
  }
  EXPECT_EQ(r.Find("empty").shape(), (Shape{0, 4}));
}

TEST(CheckpointTest, ValuesAreStoredAsFloat32) {
  Checkpoint ck;
  ck.tensors.emplace_back("x", Tensor({1}, {0.1}));
  const std::string path = TempPath("memlab_ck_f32.bin");
  WriteCheckpoint(path, ck);
  EXPECT_EQ(ReadCheckpoint(path).Find("x").data()[0],
            static_cast<double>(0.1f));
}

TEST(CheckpointTest, MissingKeyIsAFormatError) {
  Checkpoint ck;
  try {
    ck.Get("nope");
    FAIL() << "expected a format error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kFormat);
  }
}

TEST(CheckpointTest, BadMagicAndTruncationAreFormatErrors) {
  const std::string bad = TempPath("memlab_ck_bad.bin");
  std::ofstream(bad, std::ios::binary) << "NOPE0000";
  EXPECT_THROW(ReadCheckpoint(bad), Error);

  Checkpoint ck;
  ck.tensors.emplace_back("a", Tensor({8}, {1, 2, 3, 4, 5, 6, 7, 8}));
  const std::string path = TempPath("memlab_ck_trunc.bin");
  WriteCheckpoint(path, ck);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 3);
  try {
    ReadCheckpoint(path);
    FAIL() << "expected a format error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kFormat);
  }
}

TEST(CheckpointTest, ModelRoundTripMatchesRoundedModel) {
  Model model(SmallConfig(), 5);
  const std::string path = TempPath("memlab_ck_model.bin");
  SaveModel(path, model, {{"note", "x"}});
  const Model loaded = LoadModel(path);
  EXPECT_EQ(loaded.config(), SmallConfig());
  RoundToCheckpointPrecision(model);
  EXPECT_EQ(loaded.Checksum(), model.Checksum());
  EXPECT_EQ(ReadCheckpoint(path).Get("note"), "x");
}

TEST(CheckpointTest, ModelConfigHeaderRoundTrip) {
  Checkpoint ck;
  PutModelConfig(SmallConfig(), ck.header);
  EXPECT_EQ(GetModelConfig(ck), SmallConfig());
}

TEST(CheckpointTest, LoadingAPromptAsAModelFails) {
  Checkpoint ck;
  ck.header["kind"] = "prompt";
  const std::string path = TempPath("memlab_ck_prompt_as_model.bin");
  WriteCheckpoint(path, ck);
  EXPECT_THROW(LoadModel(path), Error);
}

}  // namespace
}  // namespace memlab
