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

#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include "memlab/error.h"
#include "memlab/harness.h"

namespace memlab {
namespace {

// Reads known keys of one YAML mapping and rejects the rest.
class Section {
 public:
  Section(const YAML::Node& root, std::string name)
      : node_(root[name]), name_(std::move(name)) {
    if (node_ && !node_.IsMap()) {
      throw Error(ErrorCode::kConfig, fmt::format("config: '{}' must be a mapping", name_));
    }
  }

  template <typename T>
  void Read(const std::string& key, T& out) {
    known_.insert(key);
    if (!node_ || !node_[key]) return;
    try {
      out = node_[key].as<T>();
    } catch (const YAML::Exception& e) {
      throw Error(ErrorCode::kConfig,
                  fmt::format("config: {}.{}: {}", name_, key, e.what()));
    }
  }

  const YAML::Node& node() const { return node_; }
  void Known(const std::string& key) { known_.insert(key); }

  void CheckUnknown() const {
    if (!node_) return;
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!known_.count(key)) {
        throw Error(ErrorCode::kConfig,
                    fmt::format("config: unknown key '{}.{}'", name_, key));
      }
    }
  }

 private:
  YAML::Node node_;
  std::string name_;
  std::set<std::string> known_;
};

std::string Join(const std::vector<double>& values) {
  std::vector<std::string> parts;
  for (double v : values) parts.push_back(fmt::format("{}", v));
  return fmt::format("{}", fmt::join(parts, ","));
}

}  // namespace

std::string KindName(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::kBaseline: return "baseline";
    case ExperimentKind::kAttackSweep: return "attack_sweep";
    case ExperimentKind::kDefenseSweep: return "defense_sweep";
  }
  return "baseline";
}

ExperimentKind ParseKind(const std::string& name) {
  if (name == "baseline") return ExperimentKind::kBaseline;
  if (name == "attack_sweep") return ExperimentKind::kAttackSweep;
  if (name == "defense_sweep") return ExperimentKind::kDefenseSweep;
  throw Error(ErrorCode::kConfig,
              fmt::format("unknown experiment kind '{}' (baseline, "
                          "attack_sweep, defense_sweep)", name));
}

std::string AxisName(Axis axis) {
  switch (axis) {
    case Axis::kNone: return "none";
    case Axis::kPromptLength: return "prompt_length";
    case Axis::kSuffixSize: return "suffix_size";
    case Axis::kPrefixSize: return "prefix_size";
    case Axis::kBeamSize: return "beam_size";
    case Axis::kTheta: return "theta";
  }
  return "none";
}

Axis ParseAxis(const std::string& name) {
  for (Axis a : {Axis::kNone, Axis::kPromptLength, Axis::kSuffixSize,
                 Axis::kPrefixSize, Axis::kBeamSize, Axis::kTheta}) {
    if (AxisName(a) == name) return a;
  }
  throw Error(ErrorCode::kConfig,
              fmt::format("unknown axis '{}' (none, prompt_length, suffix_size, "
                          "prefix_size, beam_size, theta)", name));
}

ExperimentSpec ParseSpec(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw Error(ErrorCode::kConfig, fmt::format("config: {}", e.what()));
  }
  ExperimentSpec spec;
  if (root.IsNull()) return spec;
  if (!root.IsMap()) throw Error(ErrorCode::kConfig, "config: top level must be a mapping");
  Settings& st = spec.settings;

  const std::set<std::string> sections = {"corpus", "model", "pretrain", "benchmark",
                                          "attack", "defense", "decode", "experiment"};
  for (const auto& kv : root) {
    const auto key = kv.first.as<std::string>();
    if (!sections.count(key)) {
      throw Error(ErrorCode::kConfig, fmt::format("config: unknown section '{}'", key));
    }
  }

  Section corpus(root, "corpus");
  corpus.Read("seed", st.corpus.seed);
  corpus.Read("vocab_size", st.corpus.vocab_size);
  corpus.Read("n_background_docs", st.corpus.n_background_docs);
  corpus.Read("background_doc_len", st.corpus.background_doc_len);
  corpus.Read("n_secrets", st.corpus.n_secrets);
  corpus.Read("secret_len", st.corpus.secret_len);
  corpus.Known("duplication_profile");
  const YAML::Node tiers =
      corpus.node() ? corpus.node()["duplication_profile"] : YAML::Node();
  if (tiers.IsDefined() && !tiers.IsNull()) {
    if (!tiers.IsSequence()) {
      throw Error(ErrorCode::kConfig, "config: duplication_profile must be a list");
    }
    st.corpus.duplication_profile.clear();
    for (const auto& t : tiers) {
      if (!t["copies"] || !t["fraction"] || t.size() != 2) {
        throw Error(ErrorCode::kConfig,
                    "config: duplication_profile entries need copies and fraction");
      }
      st.corpus.duplication_profile.push_back(
          {t["copies"].as<int64_t>(), t["fraction"].as<double>()});
    }
  }
  corpus.CheckUnknown();

  Section model(root, "model");
  model.Read("vocab_size", st.model.vocab_size);
  model.Read("embed_dim", st.model.embed_dim);
  model.Read("n_layers", st.model.n_layers);
  model.Read("n_heads", st.model.n_heads);
  model.Read("context_len", st.model.context_len);
  model.Read("mlp_ratio", st.model.mlp_ratio);
  model.Read("seed", st.model_seed);
  model.CheckUnknown();

  Section pre(root, "pretrain");
  pre.Read("epochs", st.pretrain.epochs);
  pre.Read("lr", st.pretrain.lr);
  pre.Read("final_lr_fraction", st.pretrain.final_lr_fraction);
  pre.Read("warmup_steps", st.pretrain.warmup_steps);
  pre.Read("batch_size", st.pretrain.batch_size);
  pre.Read("clip_norm", st.pretrain.clip_norm);
  pre.Read("seed", st.pretrain.seed);
  pre.Read("position_span", st.pretrain.position_span);
  pre.Read("pack_length", st.pretrain.pack_length);
  pre.CheckUnknown();

  Section bench(root, "benchmark");
  bench.Read("k", st.benchmark.k);
  bench.Read("s", st.benchmark.s);
  bench.Read("train_fraction", st.benchmark.train_fraction);
  bench.CheckUnknown();

  Section attack(root, "attack");
  attack.Read("l", st.attack.l);
  std::string objective = ObjectiveName(st.attack.objective);
  attack.Read("objective", objective);
  st.attack.objective = ParseObjective(objective);
  attack.Read("epochs", st.attack.epochs);
  attack.Read("lr", st.attack.lr);
  attack.Read("batch_size", st.attack.batch_size);
  attack.Read("clip_norm", st.attack.clip_norm);
  attack.CheckUnknown();

  Section defense(root, "defense");
  defense.Read("theta", st.defense.theta);
  defense.Read("l", st.defense.l);
  defense.Read("max_epochs", st.defense.max_epochs);
  defense.Read("lr", st.defense.lr);
  defense.Read("batch_size", st.defense.batch_size);
  defense.Read("clip_norm", st.defense.clip_norm);
  defense.CheckUnknown();

  Section decode(root, "decode");
  decode.Read("beam_size", st.decode.beam_size);
  decode.Read("batch_size", st.decode.batch_size);
  decode.CheckUnknown();

  Section exp(root, "experiment");
  std::string kind = KindName(spec.kind), axis = AxisName(spec.axis);
  exp.Read("kind", kind);
  exp.Read("axis", axis);
  spec.kind = ParseKind(kind);
  spec.axis = ParseAxis(axis);
  exp.Read("values", spec.values);
  exp.Read("theta_steps", spec.theta_steps);
  exp.Read("theta_delta", spec.theta_delta);
  exp.Read("n_runs", spec.n_runs);
  exp.Read("base_seed", spec.base_seed);
  exp.Read("record_timing", spec.record_timing);
  exp.CheckUnknown();

  spec.Validate();
  return spec;
}

ExperimentSpec LoadSpec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, fmt::format("cannot open config '{}'", path));
  std::stringstream ss;
  ss << in.rdbuf();
  return ParseSpec(ss.str());
}

std::vector<std::string> DescribeSpec(const ExperimentSpec& spec) {
  const Settings& st = spec.settings;
  std::vector<std::string> tiers;
  for (const DuplicationTier& t : st.corpus.duplication_profile) {
    tiers.push_back(fmt::format("{}:{}", t.copies, t.fraction));
  }
  return {
      fmt::format("experiment.kind={}", KindName(spec.kind)),
      fmt::format("experiment.axis={}", AxisName(spec.axis)),
      fmt::format("experiment.values={}", Join(spec.values)),
      fmt::format("experiment.theta_steps={}", spec.theta_steps),
      fmt::format("experiment.theta_delta={}", spec.theta_delta),
      fmt::format("experiment.n_runs={}", spec.n_runs),
      fmt::format("experiment.base_seed={}", spec.base_seed),
      fmt::format("experiment.record_timing={}", spec.record_timing),
      fmt::format("corpus.seed={}", st.corpus.seed),
      fmt::format("corpus.vocab_size={}", st.corpus.vocab_size),
      fmt::format("corpus.n_background_docs={}", st.corpus.n_background_docs),
      fmt::format("corpus.background_doc_len={}", st.corpus.background_doc_len),
      fmt::format("corpus.n_secrets={}", st.corpus.n_secrets),
      fmt::format("corpus.secret_len={}", st.corpus.secret_len),
      fmt::format("corpus.duplication_profile={}", fmt::join(tiers, ",")),
      fmt::format("model.vocab_size={}", st.model.vocab_size),
      fmt::format("model.embed_dim={}", st.model.embed_dim),
      fmt::format("model.n_layers={}", st.model.n_layers),
      fmt::format("model.n_heads={}", st.model.n_heads),
      fmt::format("model.context_len={}", st.model.context_len),
      fmt::format("model.mlp_ratio={}", st.model.mlp_ratio),
      fmt::format("model.seed={}", st.model_seed),
      fmt::format("pretrain.epochs={}", st.pretrain.epochs),
      fmt::format("pretrain.lr={}", st.pretrain.lr),
      fmt::format("pretrain.final_lr_fraction={}", st.pretrain.final_lr_fraction),
      fmt::format("pretrain.warmup_steps={}", st.pretrain.warmup_steps),
      fmt::format("pretrain.batch_size={}", st.pretrain.batch_size),
      fmt::format("pretrain.clip_norm={}", st.pretrain.clip_norm),
      fmt::format("pretrain.seed={}", st.pretrain.seed),
      fmt::format("pretrain.position_span={}", st.pretrain.position_span),
      fmt::format("pretrain.pack_length={}", st.pretrain.pack_length),
      fmt::format("benchmark.k={}", st.benchmark.k),
      fmt::format("benchmark.s={}", st.benchmark.s),
      fmt::format("benchmark.train_fraction={}", st.benchmark.train_fraction),
      fmt::format("attack.l={}", st.attack.l),
      fmt::format("attack.objective={}", ObjectiveName(st.attack.objective)),
      fmt::format("attack.epochs={}", st.attack.epochs),
      fmt::format("attack.lr={}", st.attack.lr),
      fmt::format("attack.batch_size={}", st.attack.batch_size),
      fmt::format("attack.clip_norm={}", st.attack.clip_norm),
      fmt::format("defense.theta={}", st.defense.theta),
      fmt::format("defense.l={}", st.defense.l),
      fmt::format("defense.max_epochs={}", st.defense.max_epochs),
      fmt::format("defense.lr={}", st.defense.lr),
      fmt::format("defense.batch_size={}", st.defense.batch_size),
      fmt::format("defense.clip_norm={}", st.defense.clip_norm),
      fmt::format("decode.beam_size={}", st.decode.beam_size),
      fmt::format("decode.batch_size={}", st.decode.batch_size),
  };
}

uint64_t SpecHash(const ExperimentSpec& spec) {
  uint64_t h = 1469598103934665603ULL;
  for (const std::string& line : DescribeSpec(spec)) {
    for (unsigned char c : line + "\n") {
      h ^= c;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace memlab
