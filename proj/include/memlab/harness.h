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

#ifndef MEMLAB_HARNESS_H_
#define MEMLAB_HARNESS_H_

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "memlab/data.h"
#include "memlab/decode.h"
#include "memlab/metrics.h"
#include "memlab/model.h"
#include "memlab/optimize.h"

namespace memlab {

struct BenchmarkConfig {
  int64_t k = 25;
  int64_t s = 25;
  double train_fraction = 0.875;  // 700 / 100 on 800 secrets
};

enum class ExperimentKind { kBaseline, kAttackSweep, kDefenseSweep };
enum class Axis { kNone, kPromptLength, kSuffixSize, kPrefixSize, kBeamSize, kTheta };

std::string KindName(ExperimentKind kind);
ExperimentKind ParseKind(const std::string& name);
std::string AxisName(Axis axis);
Axis ParseAxis(const std::string& name);

// Every knob of a pipeline run. The seeds inside attack, defense and the
// benchmark split are replaced per run by base_seed + run index.
struct Settings {
  CorpusSpec corpus;
  ModelConfig model;
  uint64_t model_seed = 1;
  PretrainConfig pretrain;
  BenchmarkConfig benchmark;
  AttackConfig attack;
  DefenseConfig defense;
  DecodeConfig decode;  // max_new_tokens follows benchmark.s

  // Throws kConfig on inconsistent values.
  void Validate() const;
};

struct ExperimentSpec {
  ExperimentKind kind = ExperimentKind::kBaseline;
  Axis axis = Axis::kNone;
  // Empty with axis kNone: a single point at the fixed settings. For axis
  // kTheta with theta_steps > 0 the values come from ThetaSchedule.
  std::vector<double> values;
  int64_t theta_steps = 0;
  double theta_delta = 0.25;
  int64_t n_runs = 5;
  uint64_t base_seed = 1;
  // Wall-clock seconds in the CSV; off keeps reruns byte-identical.
  bool record_timing = false;
  Settings settings;

  void Validate() const;
};

// Canonical `key=value` lines covering every field. Used for CSV headers and
// the config hash (SpecHash).
std::vector<std::string> DescribeSpec(const ExperimentSpec& spec);
uint64_t SpecHash(const ExperimentSpec& spec);

// Reads the YAML config schema documented in configs/README.md. Missing keys
// keep their defaults; unknown keys are kConfig errors.
ExperimentSpec LoadSpec(const std::string& path);
ExperimentSpec ParseSpec(const std::string& yaml_text);

struct RunRecord {
  uint64_t spec_hash = 0;
  double value = 0.0;
  int64_t run = 0;
  uint64_t seed = 0;
  MetricsRecord metrics;
  double seconds = 0.0;
  // Prompt training summary; empty history for baselines.
  std::vector<double> epoch_loss;
  bool converged = true;
};

struct Aggregate {
  double mean = 0.0;
  double std = 0.0;
  double ci = 0.0;  // 95% t-interval half-width
};

// Mean, sample std (n - 1) and t(0.975, n - 1) * std / sqrt(n); zero spread
// for a single value.
Aggregate AggregateValues(const std::vector<double>& values);

struct AggregateRow {
  double value = 0.0;
  int64_t n = 0;
  Aggregate exact, fractional, ppl;
};

std::vector<AggregateRow> AggregateRecords(const std::vector<RunRecord>& records);

// Greedy or configured decoding of S_test with an optional prompt, plus
// teacher-forced perplexity on S_test.
MetricsRecord RunBaseline(const Model& model, const ExtractionBenchmark& bench,
                          const DecodeConfig& decode,
                          const Tensor* prompt = nullptr);

// Memo of trained prompts keyed by the full training input. Training is a
// pure function of that input, so a hit returns the same prompt a fresh run
// would produce.
class PromptCache {
 public:
  const PromptResult* Find(const std::string& key) const;
  void Insert(const std::string& key, PromptResult result);
  size_t size() const { return entries_.size(); }
  int64_t hits() const { return hits_; }

 private:
  std::map<std::string, PromptResult> entries_;
  mutable int64_t hits_ = 0;
};

struct SweepResult {
  std::vector<double> values;  // resolved axis values
  std::vector<RunRecord> records;
  std::vector<AggregateRow> aggregates;
  bool complete = true;
  std::string error;  // set when incomplete
};

using ProgressFn = std::function<void(const RunRecord&)>;

// Runs every axis value x run index in order. A failing run stops the sweep
// and returns the records so far with complete = false.
SweepResult RunSweep(const Model& model, const std::vector<PlantedSecret>& secrets,
                     const ExperimentSpec& spec, PromptCache* cache = nullptr,
                     const ProgressFn& progress = nullptr);

// Header comment lines, per-run rows, then AGG rows.
std::string FormatCsv(const ExperimentSpec& spec, const SweepResult& result);
void WriteCsv(const std::string& path, const ExperimentSpec& spec,
              const SweepResult& result);

// Per-run settings for one axis value: the value applied, seeds replaced by
// `seed`, decode length tied to the suffix size.
Settings SettingsForPoint(const ExperimentSpec& spec, double value, uint64_t seed);

// Mean aligned-CLM loss of the bare model over every benchmark sequence;
// the split-independent base of the theta schedule.
double BaseTrainLoss(const Model& model, const std::vector<PlantedSecret>& secrets,
                     const BenchmarkConfig& bench);

}  // namespace memlab

#endif  // MEMLAB_HARNESS_H_
