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

#ifndef MEMLAB_RANDOM_H_
#define MEMLAB_RANDOM_H_

#include <cstdint>
#include <random>

namespace memlab {

using Rng = std::mt19937_64;

// SplitMix64 finaliser over (seed, stream): independent generators for the
// different consumers of one user-facing seed.
inline uint64_t DeriveSeed(uint64_t seed, uint64_t stream) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Stream ids, fixed so that adding a consumer never shifts another's draws.
enum class Stream : uint64_t {
  kBackground = 1,
  kSecrets = 2,
  kPlacement = 3,
  kSplit = 4,
  kModelInit = 5,
  kShuffle = 6,
  kPrompt = 7,
  kOffsets = 8,
};

inline Rng MakeRng(uint64_t seed, Stream stream) {
  return Rng(DeriveSeed(seed, static_cast<uint64_t>(stream)));
}

inline int64_t UniformInt(Rng& rng, int64_t lo, int64_t hi) {
  return std::uniform_int_distribution<int64_t>(lo, hi)(rng);
}

}  // namespace memlab

#endif  // MEMLAB_RANDOM_H_
