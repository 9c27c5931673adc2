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

#include "memlab/harness.h"

#include <chrono>
#include <cmath>
#include <fstream>
#include <algorithm>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>
#include <fmt/format.h>

#include "memlab/error.h"

namespace memlab {
namespace {

bool IsIntegral(double v) { return std::floor(v) == v; }

void CheckConfig(bool ok, const std::string& message) {
  if (!ok) throw Error(ErrorCode::kConfig, message);
}

uint64_t HashSecrets(const std::vector<PlantedSecret>& secrets) {
  uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](uint64_t x) {
    h ^= x;
    h *= 1099511628211ULL;
  };
  for (const PlantedSecret& s : secrets) {
    mix(static_cast<uint64_t>(s.id));
    mix(static_cast<uint64_t>(s.copies));
    for (TokenId t : s.tokens) mix(static_cast<uint64_t>(t));
  }
  return h;
}

std::string CacheKey(ExperimentKind kind, const Settings& st, uint64_t seed,
                     uint64_t model_checksum, uint64_t secrets_hash) {
  const BenchmarkConfig& b = st.benchmark;
  std::string key = fmt::format("model={} secrets={} k={} s={} train={} seed={} ",
                                model_checksum, secrets_hash, b.k, b.s,
                                b.train_fraction, seed);
  if (kind == ExperimentKind::kAttackSweep) {
    const AttackConfig& a = st.attack;
    key += fmt::format("attack l={} obj={} epochs={} lr={} batch={} clip={}", a.l,
                       ObjectiveName(a.objective), a.epochs, a.lr, a.batch_size,
                       a.clip_norm);
  } else {
    const DefenseConfig& d = st.defense;
    key += fmt::format("defense theta={} l={} max_epochs={} lr={} batch={} clip={}",
                       d.theta, d.l, d.max_epochs, d.lr, d.batch_size, d.clip_norm);
  }
  return key;
}

std::vector<double> ResolveValues(const Model& model,
                                  const std::vector<PlantedSecret>& secrets,
                                  const ExperimentSpec& spec) {
  if (spec.axis == Axis::kNone) return {0.0};
  if (spec.axis == Axis::kTheta && spec.theta_steps > 0) {
    return ThetaSchedule(BaseTrainLoss(model, secrets, spec.settings.benchmark),
                         spec.theta_steps, spec.theta_delta);
  }
  return spec.values;
}

std::string Num(double v) { return fmt::format("{}", v); }

}  // namespace

void Settings::Validate() const {
  corpus.Validate();
  model.Validate();
  CheckConfig(model.vocab_size == corpus.vocab_size,
              fmt::format("model.vocab_size {} differs from corpus.vocab_size {}",
                          model.vocab_size, corpus.vocab_size));
  CheckConfig(benchmark.k >= 1 && benchmark.s >= 1,
              "benchmark.k and benchmark.s must be >= 1");
  CheckConfig(benchmark.k + benchmark.s <= corpus.secret_len,
              fmt::format("benchmark k + s = {} exceeds corpus.secret_len {}",
                          benchmark.k + benchmark.s, corpus.secret_len));
  CheckConfig(benchmark.train_fraction >= 0.0 && benchmark.train_fraction <= 1.0,
              "benchmark.train_fraction must lie in [0, 1]");
  CheckConfig(attack.l >= 1 && defense.l >= 1, "prompt lengths must be >= 1");
  CheckConfig(attack.epochs >= 1 && attack.lr > 0.0 && attack.batch_size >= 1,
              "attack needs epochs >= 1, lr > 0, batch_size >= 1");
  CheckConfig(defense.max_epochs >= 1 && defense.lr > 0.0 &&
                  defense.batch_size >= 1 && defense.theta >= 0.0,
              "defense needs max_epochs >= 1, lr > 0, batch_size >= 1, theta >= 0");
  CheckConfig(pretrain.epochs >= 0 && pretrain.lr > 0.0 && pretrain.batch_size >= 1,
              "pretrain needs epochs >= 0, lr > 0, batch_size >= 1");
  CheckConfig(pretrain.position_span <= model.context_len,
              "pretrain.position_span exceeds model.context_len");
  CheckConfig(pretrain.pack_length >= 0 && pretrain.pack_length <= model.context_len,
              "pretrain.pack_length must lie in [0, model.context_len]");
  CheckConfig(corpus.background_doc_len <= model.context_len,
              "corpus.background_doc_len exceeds model.context_len");
  const int64_t n = benchmark.k + benchmark.s;
  CheckConfig(std::max(attack.l, defense.l) + n <= model.context_len,
              fmt::format("prompt + k + s = {} exceeds model.context_len {}",
                          std::max(attack.l, defense.l) + n, model.context_len));
  decode.Validate();
}

void ExperimentSpec::Validate() const {
  CheckConfig(n_runs >= 1, "experiment.n_runs must be >= 1");
  for (size_t i = 1; i < values.size(); ++i) {
    CheckConfig(values[i] > values[i - 1],
                "experiment.values must be strictly increasing");
  }
  if (axis == Axis::kNone) {
    CheckConfig(values.empty(), "experiment.values needs an axis");
  } else if (axis == Axis::kTheta) {
    CheckConfig(kind == ExperimentKind::kDefenseSweep,
                "the theta axis needs kind defense_sweep");
    CheckConfig(values.empty() != (theta_steps == 0),
                "theta axis: give either experiment.values or theta_steps");
  } else {
    CheckConfig(!values.empty(), "experiment.values is empty");
    CheckConfig(theta_steps == 0, "theta_steps needs the theta axis");
    for (double v : values) {
      CheckConfig(IsIntegral(v) && v >= 1.0,
                  fmt::format("{} values must be integers >= 1", AxisName(axis)));
    }
    CheckConfig(axis != Axis::kPromptLength || kind != ExperimentKind::kBaseline,
                "a baseline has no prompt to vary");
  }
  settings.Validate();
  for (double v : values) SettingsForPoint(*this, v, base_seed);
}

Settings SettingsForPoint(const ExperimentSpec& spec, double value,
                          uint64_t seed) {
  Settings st = spec.settings;
  const auto iv = static_cast<int64_t>(value);
  switch (spec.axis) {
    case Axis::kNone: break;
    case Axis::kPromptLength:
      (spec.kind == ExperimentKind::kDefenseSweep ? st.defense.l : st.attack.l) = iv;
      break;
    case Axis::kSuffixSize: st.benchmark.s = iv; break;
    case Axis::kPrefixSize: st.benchmark.k = iv; break;
    case Axis::kBeamSize: st.decode.beam_size = iv; break;
    case Axis::kTheta: st.defense.theta = value; break;
  }
  st.attack.seed = seed;
  st.defense.seed = seed;
  st.decode.max_new_tokens = st.benchmark.s;
  st.Validate();
  return st;
}

Aggregate AggregateValues(const std::vector<double>& values) {
  Aggregate a;
  const auto n = static_cast<double>(values.size());
  if (values.empty()) return a;
  a.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() == 1) return a;
  double ss = 0.0;
  for (double v : values) ss += (v - a.mean) * (v - a.mean);
  a.std = std::sqrt(ss / (n - 1.0));
  const boost::math::students_t dist(n - 1.0);
  a.ci = boost::math::quantile(dist, 0.975) * a.std / std::sqrt(n);
  return a;
}

std::vector<AggregateRow> AggregateRecords(const std::vector<RunRecord>& records) {
  std::vector<AggregateRow> rows;
  size_t i = 0;
  while (i < records.size()) {
    std::vector<double> exact, frac, ppl;
    const double value = records[i].value;
    for (; i < records.size() && records[i].value == value; ++i) {
      exact.push_back(records[i].metrics.exact_rate);
      frac.push_back(records[i].metrics.fractional_rate);
      ppl.push_back(records[i].metrics.ppl);
    }
    rows.push_back({value, static_cast<int64_t>(exact.size()), AggregateValues(exact),
                    AggregateValues(frac), AggregateValues(ppl)});
  }
  return rows;
}

double BaseTrainLoss(const Model& model, const std::vector<PlantedSecret>& secrets,
                     const BenchmarkConfig& bench) {
  const ExtractionBenchmark all = MakeBenchmark(secrets, bench.k, bench.s, 1.0, 0);
  if (all.train.empty()) {
    throw Error(ErrorCode::kEmptyInput, "theta schedule: no benchmark sequences");
  }
  return MeanSuffixNll(model, nullptr, all.train);
}

MetricsRecord RunBaseline(const Model& model, const ExtractionBenchmark& bench,
                          const DecodeConfig& decode, const Tensor* prompt) {
  if (bench.test.empty()) {
    throw Error(ErrorCode::kEmptyInput, "baseline: S_test is empty");
  }
  std::vector<TokenSeq> prefixes, truth;
  for (const Sequence& s : bench.test) {
    prefixes.push_back(s.prefix);
    truth.push_back(s.suffix);
  }
  DecodeConfig cfg = decode;
  cfg.max_new_tokens = bench.s;
  const std::vector<TokenSeq> generated = DecodeAll(model, prompt, prefixes, cfg);
  MetricsRecord m;
  m.exact_rate = ExactExtractionRate(generated, truth);
  m.fractional_rate = FractionalExtractionRate(generated, truth);
  m.fractional_rate_macro = MacroFractionalExtractionRate(generated, truth);
  m.ppl = Perplexity(model, prompt, bench.test);
  m.n_test = static_cast<int64_t>(bench.test.size());
  return m;
}

const PromptResult* PromptCache::Find(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return nullptr;
  ++hits_;
  return &it->second;
}

void PromptCache::Insert(const std::string& key, PromptResult result) {
  entries_.insert_or_assign(key, std::move(result));
}

SweepResult RunSweep(const Model& model, const std::vector<PlantedSecret>& secrets,
                     const ExperimentSpec& spec, PromptCache* cache,
                     const ProgressFn& progress) {
  spec.Validate();
  SweepResult result;
  const uint64_t hash = SpecHash(spec);
  const uint64_t checksum = model.Checksum();
  const uint64_t secrets_hash = HashSecrets(secrets);
  try {
    result.values = ResolveValues(model, secrets, spec);
    for (double value : result.values) {
      for (int64_t run = 0; run < spec.n_runs; ++run) {
        const auto start = std::chrono::steady_clock::now();
        const uint64_t seed = spec.base_seed + static_cast<uint64_t>(run);
        const Settings st = SettingsForPoint(spec, value, seed);
        const ExtractionBenchmark bench =
            MakeBenchmark(secrets, st.benchmark.k, st.benchmark.s,
                          st.benchmark.train_fraction, seed);
        RunRecord rec;
        rec.spec_hash = hash;
        rec.value = value;
        rec.run = run;
        rec.seed = seed;
        if (spec.kind == ExperimentKind::kBaseline) {
          rec.metrics = RunBaseline(model, bench, st.decode);
        } else {
          const std::string key = CacheKey(spec.kind, st, seed, checksum, secrets_hash);
          const PromptResult* hit = cache != nullptr ? cache->Find(key) : nullptr;
          PromptResult trained;
          if (hit == nullptr) {
            trained = spec.kind == ExperimentKind::kAttackSweep
                          ? TrainAttackPrompt(model, bench.train, st.attack)
                          : TrainDefensePrompt(model, bench.train, st.defense);
            if (cache != nullptr) cache->Insert(key, trained);
            hit = &trained;
          }
          rec.epoch_loss = hit->history.epoch_loss;
          rec.converged = hit->prompt.converged;
          rec.metrics = RunBaseline(model, bench, st.decode, &hit->prompt.weights);
        }
        if (spec.record_timing) {
          rec.seconds = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - start)
                            .count();
        }
        result.records.push_back(rec);
        if (progress) progress(rec);
      }
    }
  } catch (const std::exception& e) {
    result.complete = false;
    result.error = e.what();
  }
  result.aggregates = AggregateRecords(result.records);
  return result;
}

std::string FormatCsv(const ExperimentSpec& spec, const SweepResult& result) {
  std::string out = "# memlab sweep\n";
  out += fmt::format("# spec_hash={:016x}\n", SpecHash(spec));
  for (const std::string& line : DescribeSpec(spec)) out += "# " + line + "\n";
  std::vector<std::string> values;
  for (double v : result.values) values.push_back(Num(v));
  out += fmt::format("# resolved_values={}\n", fmt::join(values, ","));
  out += "# seed=base_seed+run; each run draws a fresh train/test split\n";
  out += "# ci=95% two-sided Student t interval over runs, "
         "t(0.975,n-1)*std/sqrt(n); std uses n-1\n";
  out += "# agg_columns=AGG,axis,value,n,exact_mean,exact_std,exact_ci,"
         "fractional_mean,fractional_std,fractional_ci,ppl_mean,ppl_std,ppl_ci\n";
  if (result.complete) {
    out += "# status=complete\n";
  } else {
    std::string error = result.error;
    std::replace(error.begin(), error.end(), '\n', ' ');
    out += fmt::format("# status=incomplete error={}\n", error);
  }
  out += "axis,value,run,seed,exact_rate,fractional_rate,ppl,seconds\n";
  const std::string axis = AxisName(spec.axis);
  for (const RunRecord& r : result.records) {
    out += fmt::format("{},{},{},{},{:.6f},{:.6f},{:.3f},{:.3f}\n", axis,
                       Num(r.value), r.run, r.seed, r.metrics.exact_rate,
                       r.metrics.fractional_rate, r.metrics.ppl, r.seconds);
  }
  for (const AggregateRow& a : result.aggregates) {
    out += fmt::format(
        "AGG,{},{},{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.3f},{:.3f},{:.3f}\n",
        axis, Num(a.value), a.n, a.exact.mean, a.exact.std, a.exact.ci,
        a.fractional.mean, a.fractional.std, a.fractional.ci, a.ppl.mean, a.ppl.std,
        a.ppl.ci);
  }
  return out;
}

void WriteCsv(const std::string& path, const ExperimentSpec& spec,
              const SweepResult& result) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, fmt::format("cannot write '{}'", path));
  out << FormatCsv(spec, result);
  if (!out) throw Error(ErrorCode::kIo, fmt::format("write failed for '{}'", path));
}

}  // namespace memlab
