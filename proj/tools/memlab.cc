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

// memlab command-line driver.
//
//   memlab gen-corpus --config c.yaml --out corpus.txt [--bench bench.txt]
//   memlab pretrain   --config c.yaml --checkpoint model.ck
//   memlab baseline   --config c.yaml --checkpoint model.ck
//   memlab attack     --config c.yaml --checkpoint model.ck --out prompt.ck
//   memlab defend     --config c.yaml --checkpoint model.ck --out prompt.ck
//   memlab sweep      --config c.yaml --checkpoint model.ck --out sweep.csv
//   memlab report     sweep.csv [--baseline baseline.csv]
//
// Results go to stdout as one JSON object per line. Failures print
// {"error": <code>, "message": ...} to stderr and exit with status 2.

#include <chrono>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "memlab/checkpoint.h"
#include "memlab/data.h"
#include "memlab/error.h"
#include "memlab/harness.h"
#include "memlab/metrics.h"
#include "memlab/model.h"
#include "memlab/optimize.h"

namespace {

using json = nlohmann::json;
using namespace memlab;

struct Options {
  std::string config;
  std::optional<uint64_t> seed;
  std::string out;
  std::string checkpoint;
  std::string bench;
  std::string csv;
  std::string baseline_csv;
};

void Emit(const json& j) { std::cout << j.dump() << std::endl; }

ExperimentSpec Spec(const Options& o) {
  return o.config.empty() ? ExperimentSpec{} : LoadSpec(o.config);
}

std::string Require(const std::string& value, const char* flag) {
  if (value.empty()) {
    throw Error(ErrorCode::kConfig, fmt::format("{} is required", flag));
  }
  return value;
}

json MetricsJson(const MetricsRecord& m) {
  return {{"exact_rate", m.exact_rate},
          {"fractional_rate", m.fractional_rate},
          {"fractional_rate_macro", m.fractional_rate_macro},
          {"ppl", m.ppl},
          {"n_test", m.n_test}};
}

Model LoadChecked(const Options& o, const Settings& st) {
  Model model = LoadModel(Require(o.checkpoint, "--checkpoint"));
  if (!(model.config() == st.model)) {
    throw Error(ErrorCode::kConfig,
                "checkpoint model config differs from the config file");
  }
  return model;
}

void GenCorpus(const Options& o) {
  ExperimentSpec spec = Spec(o);
  if (o.seed) spec.settings.corpus.seed = *o.seed;
  const Settings& st = spec.settings;
  const Corpus corpus = GenerateCorpus(st.corpus);
  WriteCorpus(Require(o.out, "--out"), corpus.documents);
  const std::string bench_path = o.bench.empty() ? o.out + ".bench" : o.bench;
  const ExtractionBenchmark bench =
      MakeBenchmark(corpus.secrets, st.benchmark.k, st.benchmark.s,
                    st.benchmark.train_fraction, spec.base_seed);
  WriteBenchmark(bench_path, bench);
  Emit({{"command", "gen-corpus"},
        {"documents", corpus.documents.size()},
        {"secrets", corpus.secrets.size()},
        {"train", bench.train.size()},
        {"test", bench.test.size()},
        {"corpus", o.out},
        {"benchmark", bench_path}});
}

void PretrainCommand(const Options& o) {
  ExperimentSpec spec = Spec(o);
  Settings& st = spec.settings;
  if (o.seed) st.model_seed = st.pretrain.seed = *o.seed;
  const auto start = std::chrono::steady_clock::now();
  const Corpus corpus = GenerateCorpus(st.corpus);
  Model model(st.model, st.model_seed);
  const TrainHistory h = Pretrain(model, corpus.documents, st.pretrain);
  RoundToCheckpointPrecision(model);
  const std::string path = Require(o.checkpoint.empty() ? o.out : o.checkpoint,
                                   "--checkpoint");
  SaveModel(path, model, {{"corpus_seed", std::to_string(st.corpus.seed)}});
  Emit({{"command", "pretrain"},
        {"parameters", model.ParameterCount()},
        {"epoch_loss", h.epoch_loss},
        {"corpus_loss", CorpusLoss(model, corpus.documents)},
        {"seconds", std::chrono::duration<double>(
                        std::chrono::steady_clock::now() - start).count()},
        {"checkpoint", path}});
}

// Benchmark for a single run at `seed` (default: experiment.base_seed).
ExtractionBenchmark SingleBenchmark(const Settings& st, uint64_t seed) {
  const Corpus corpus = GenerateCorpus(st.corpus);
  return MakeBenchmark(corpus.secrets, st.benchmark.k, st.benchmark.s,
                       st.benchmark.train_fraction, seed);
}

void BaselineCommand(const Options& o) {
  const ExperimentSpec spec = Spec(o);
  const uint64_t seed = o.seed.value_or(spec.base_seed);
  const Settings st = SettingsForPoint(spec, 0.0, seed);
  const Model model = LoadChecked(o, st);
  const ExtractionBenchmark bench = SingleBenchmark(st, seed);
  Emit({{"command", "baseline"},
        {"seed", seed},
        {"metrics", MetricsJson(RunBaseline(model, bench, st.decode))}});
}

void PromptCommand(const Options& o, bool defend) {
  ExperimentSpec spec = Spec(o);
  spec.axis = Axis::kNone;
  spec.values.clear();
  spec.theta_steps = 0;
  const uint64_t seed = o.seed.value_or(spec.base_seed);
  const Settings st = SettingsForPoint(spec, 0.0, seed);
  const Model model = LoadChecked(o, st);
  const ExtractionBenchmark bench = SingleBenchmark(st, seed);
  const PromptResult r = defend ? TrainDefensePrompt(model, bench.train, st.defense)
                                : TrainAttackPrompt(model, bench.train, st.attack);
  json j = {{"command", defend ? "defend" : "attack"},
            {"seed", seed},
            {"epoch_loss", r.history.epoch_loss},
            {"objective_tag", r.prompt.objective_tag},
            {"converged", r.prompt.converged},
            {"metrics", MetricsJson(RunBaseline(model, bench, st.decode,
                                                &r.prompt.weights))}};
  if (defend) j["theta"] = st.defense.theta;
  if (!o.out.empty()) {
    SavePrompt(o.out, r.prompt, {{"seed", std::to_string(seed)}});
    j["prompt"] = o.out;
  }
  Emit(j);
}

void SweepCommand(const Options& o) {
  ExperimentSpec spec = Spec(o);
  if (o.seed) spec.base_seed = *o.seed;
  spec.Validate();
  const Model model = LoadChecked(o, spec.settings);
  const Corpus corpus = GenerateCorpus(spec.settings.corpus);
  const SweepResult r = RunSweep(model, corpus.secrets, spec, nullptr,
                                 [](const RunRecord& rec) {
                                   std::cerr << fmt::format(
                                       "value={} run={} exact={:.3f} ppl={:.3f}\n",
                                       rec.value, rec.run, rec.metrics.exact_rate,
                                       rec.metrics.ppl);
                                 });
  const std::string path = Require(o.out, "--out");
  WriteCsv(path, spec, r);
  Emit({{"command", "sweep"}, {"csv", path}, {"records", r.records.size()},
        {"complete", r.complete}});
  if (!r.complete) throw Error(ErrorCode::kTrainingFailure, r.error);
}

struct AggLine {
  double value;
  double exact_mean, exact_ci, ppl_mean;
};

std::vector<AggLine> ReadAggregates(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, fmt::format("cannot open '{}'", path));
  std::vector<AggLine> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("AGG,", 0) != 0) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 13) {
      throw Error(ErrorCode::kFormat, fmt::format("{}: malformed AGG row", path));
    }
    out.push_back({std::stod(f[2]), std::stod(f[4]), std::stod(f[6]), std::stod(f[10])});
  }
  if (out.empty()) throw Error(ErrorCode::kFormat, fmt::format("{}: no AGG rows", path));
  return out;
}

void ReportCommand(const Options& o) {
  const std::vector<AggLine> rows = ReadAggregates(o.csv);
  std::optional<AggLine> base;
  if (!o.baseline_csv.empty()) base = ReadAggregates(o.baseline_csv).front();
  for (const AggLine& r : rows) {
    json j = {{"value", r.value}, {"exact_mean", r.exact_mean},
              {"exact_ci", r.exact_ci}, {"ppl_mean", r.ppl_mean}};
    if (base) {
      j["pp_delta"] = TruncateOneDecimal(PpDelta(r.exact_mean, base->exact_mean));
      j["ppl_increase_pct"] =
          TruncateOneDecimal(RelativeIncrease(base->ppl_mean, r.ppl_mean));
      if (base->exact_mean > 0.0) {
        j["relative_reduction_pct"] =
            TruncateOneDecimal(RelativeReduction(base->exact_mean, r.exact_mean));
      }
    }
    Emit(j);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"memlab: soft-prompt extraction attacks and defenses on toy models"};
  app.require_subcommand(1);
  Options o;
  auto common = [&o](CLI::App* sub) {
    sub->add_option("--config", o.config, "YAML experiment config");
    sub->add_option("--seed", o.seed, "Seed override");
    sub->add_option("--out", o.out, "Output path");
    sub->add_option("--checkpoint", o.checkpoint, "Model checkpoint");
  };
  CLI::App* gen = app.add_subcommand("gen-corpus", "Write corpus and benchmark files");
  common(gen);
  gen->add_option("--bench", o.bench, "Benchmark output path");
  CLI::App* pre = app.add_subcommand("pretrain", "Pretrain a model on the corpus");
  common(pre);
  CLI::App* base = app.add_subcommand("baseline", "Greedy extraction without a prompt");
  common(base);
  CLI::App* attack = app.add_subcommand("attack", "Train an attack prompt");
  common(attack);
  CLI::App* defend = app.add_subcommand("defend", "Train a defense prompt");
  common(defend);
  CLI::App* sweep = app.add_subcommand("sweep", "Run an experiment sweep to CSV");
  common(sweep);
  CLI::App* report = app.add_subcommand("report", "Summarise sweep CSV aggregates");
  common(report);
  report->add_option("csv", o.csv, "Sweep CSV")->required();
  report->add_option("--baseline", o.baseline_csv, "Baseline CSV for deltas");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << json{{"error", "usage"}, {"message", e.what()}}.dump() << std::endl;
    return 2;
  }
  try {
    if (*gen) GenCorpus(o);
    if (*pre) PretrainCommand(o);
    if (*base) BaselineCommand(o);
    if (*attack) PromptCommand(o, false);
    if (*defend) PromptCommand(o, true);
    if (*sweep) SweepCommand(o);
    if (*report) ReportCommand(o);
  } catch (const Error& e) {
    std::cerr << json{{"error", std::string(ErrorCodeName(e.code()))},
                      {"message", e.what()}}.dump()
              << std::endl;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "internal"}, {"message", e.what()}}.dump()
              << std::endl;
    return 2;
  }
  return 0;
}
