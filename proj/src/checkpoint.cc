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

#include "memlab/checkpoint.h"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "memlab/error.h"

namespace memlab {
namespace {

constexpr char kMagic[4] = {'M', 'L', 'C', 'K'};
// Guards against absurd sizes in corrupt files before allocating.
constexpr uint64_t kMaxElements = uint64_t{1} << 32;

template <typename T>
void PutLe(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes, bytes + sizeof(T));
  }
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

class Reader {
 public:
  Reader(std::string data, std::string path)
      : data_(std::move(data)), path_(std::move(path)) {}

  template <typename T>
  T Le() {
    unsigned char bytes[sizeof(T)];
    Bytes(reinterpret_cast<char*>(bytes), sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
      std::reverse(bytes, bytes + sizeof(T));
    }
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
  }

  std::string String(size_t n) {
    std::string s(n, '\0');
    Bytes(s.data(), n);
    return s;
  }

  void Bytes(char* dst, size_t n) {
    if (n > data_.size() - pos_) {
      throw Error(ErrorCode::kFormat,
                  fmt::format("{}: truncated checkpoint", path_));
    }
    std::memcpy(dst, data_.data() + pos_, n);
    pos_ += n;
  }

  bool AtEnd() const { return pos_ == data_.size(); }
  const std::string& path() const { return path_; }

 private:
  std::string data_;
  std::string path_;
  size_t pos_ = 0;
};

}  // namespace

const std::string& Checkpoint::Get(const std::string& key) const {
  auto it = header.find(key);
  if (it == header.end()) {
    throw Error(ErrorCode::kFormat,
                fmt::format("checkpoint header has no key '{}'", key));
  }
  return it->second;
}

int64_t Checkpoint::GetInt(const std::string& key) const {
  const std::string& value = Get(key);
  try {
    size_t used = 0;
    const int64_t v = std::stoll(value, &used);
    if (used == value.size()) return v;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::kFormat,
              fmt::format("checkpoint key '{}' is not an integer: '{}'", key,
                          value));
}

const Tensor& Checkpoint::Find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw Error(ErrorCode::kFormat,
              fmt::format("checkpoint has no tensor '{}'", name));
}

void WriteCheckpoint(const std::string& path, const Checkpoint& checkpoint) {
  std::string header;
  for (const auto& [key, value] : checkpoint.header) {
    if (key.find_first_of("=\n") != std::string::npos ||
        value.find('\n') != std::string::npos) {
      throw Error(ErrorCode::kFormat,
                  fmt::format("header entry '{}' contains '=' or newline", key));
    }
    header += key + "=" + value + "\n";
  }
  std::string out(kMagic, sizeof(kMagic));
  PutLe<uint32_t>(out, Checkpoint::kVersion);
  PutLe<uint32_t>(out, static_cast<uint32_t>(header.size()));
  out += header;
  PutLe<uint32_t>(out, static_cast<uint32_t>(checkpoint.tensors.size()));
  for (const auto& [name, t] : checkpoint.tensors) {
    PutLe<uint32_t>(out, static_cast<uint32_t>(name.size()));
    out += name;
    PutLe<uint32_t>(out, static_cast<uint32_t>(t.rank()));
    for (int64_t d : t.shape()) PutLe<int64_t>(out, d);
    for (double v : t.data()) PutLe<float>(out, static_cast<float>(v));
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) {
    throw Error(ErrorCode::kIo, fmt::format("cannot open '{}' for writing", path));
  }
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw Error(ErrorCode::kIo, fmt::format("write to '{}' failed", path));
}

Checkpoint ReadCheckpoint(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) {
    throw Error(ErrorCode::kIo, fmt::format("cannot open '{}'", path));
  }
  std::ostringstream buffer;
  buffer << file.rdbuf();
  Reader in(buffer.str(), path);

  char magic[4];
  in.Bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw Error(ErrorCode::kFormat, fmt::format("{}: not a checkpoint", path));
  }
  const uint32_t version = in.Le<uint32_t>();
  if (version != Checkpoint::kVersion) {
    throw Error(ErrorCode::kFormat,
                fmt::format("{}: unsupported version {}", path, version));
  }
  Checkpoint ck;
  std::istringstream header(in.String(in.Le<uint32_t>()));
  for (std::string line; std::getline(header, line);) {
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kFormat,
                  fmt::format("{}: malformed header line '{}'", path, line));
    }
    ck.header[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const uint32_t count = in.Le<uint32_t>();
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = in.String(in.Le<uint32_t>());
    const uint32_t rank = in.Le<uint32_t>();
    if (rank > 8) {
      throw Error(ErrorCode::kFormat,
                  fmt::format("{}: tensor '{}' has rank {}", path, name, rank));
    }
    Shape shape(rank);
    uint64_t numel = 1;
    for (int64_t& d : shape) {
      d = in.Le<int64_t>();
      if (d < 0 || (d > 0 && numel > kMaxElements / static_cast<uint64_t>(d))) {
        throw Error(ErrorCode::kFormat,
                    fmt::format("{}: tensor '{}' has a bad shape", path, name));
      }
      numel *= static_cast<uint64_t>(d);
    }
    std::vector<double> values(numel);
    for (double& v : values) v = static_cast<double>(in.Le<float>());
    ck.tensors.emplace_back(std::move(name),
                            Tensor(std::move(shape), std::move(values)));
  }
  if (!in.AtEnd()) {
    throw Error(ErrorCode::kFormat, fmt::format("{}: trailing bytes", path));
  }
  return ck;
}

void PutModelConfig(const ModelConfig& config,
                    std::map<std::string, std::string>& header) {
  header["vocab_size"] = std::to_string(config.vocab_size);
  header["embed_dim"] = std::to_string(config.embed_dim);
  header["n_layers"] = std::to_string(config.n_layers);
  header["n_heads"] = std::to_string(config.n_heads);
  header["context_len"] = std::to_string(config.context_len);
  header["mlp_ratio"] = std::to_string(config.mlp_ratio);
}

ModelConfig GetModelConfig(const Checkpoint& checkpoint) {
  ModelConfig config;
  config.vocab_size = checkpoint.GetInt("vocab_size");
  config.embed_dim = checkpoint.GetInt("embed_dim");
  config.n_layers = checkpoint.GetInt("n_layers");
  config.n_heads = checkpoint.GetInt("n_heads");
  config.context_len = checkpoint.GetInt("context_len");
  config.mlp_ratio = checkpoint.GetInt("mlp_ratio");
  config.Validate();
  return config;
}

void SaveModel(const std::string& path, const Model& model,
               const std::map<std::string, std::string>& extra) {
  Checkpoint ck;
  ck.header = extra;
  ck.header["kind"] = "model";
  PutModelConfig(model.config(), ck.header);
  ck.tensors = model.params().Named();
  WriteCheckpoint(path, ck);
}

Model LoadModel(const std::string& path) {
  const Checkpoint ck = ReadCheckpoint(path);
  if (ck.Get("kind") != "model") {
    throw Error(ErrorCode::kFormat,
                fmt::format("{}: expected a model checkpoint, found '{}'", path,
                            ck.Get("kind")));
  }
  const ModelConfig config = GetModelConfig(ck);
  // Start from a correctly shaped skeleton and fill it by name.
  Model model(config, 0);
  for (auto& [name, t] : model.params().Named()) {
    const Tensor& stored = ck.Find(name);
    if (stored.shape() != t.shape()) {
      throw Error(ErrorCode::kShape,
                  fmt::format("{}: tensor '{}' has shape {}, expected {}", path,
                              name, ShapeToString(stored.shape()),
                              ShapeToString(t.shape())));
    }
    Tensor dst = t;
    std::copy(stored.data().begin(), stored.data().end(),
              dst.mutable_data().begin());
  }
  if (ck.tensors.size() != model.params().Named().size()) {
    throw Error(ErrorCode::kFormat,
                fmt::format("{}: unexpected extra tensors", path));
  }
  return model;
}

}  // namespace memlab
