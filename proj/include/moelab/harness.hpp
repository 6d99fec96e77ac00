// Copyright 2026 The moelab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Sweep orchestration. A manifest lists architecture specs, shared train
// and corpus settings, seeds and an output root. Every (spec, train,
// corpus, seed) tuple hashes to a run id; its directory holds
//
//   spec.json        the architecture spec
//   run.json         train config, corpus spec, seed, grid flags
//   metrics.ndjson   one record per step
//   checkpoint.bin   final weights
//   summary.json     written last; its presence marks the run completed
//
// and the sweep root collects summary.csv, long.csv and failures.csv.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "moelab/arch_config.hpp"
#include "moelab/corpus.hpp"
#include "moelab/trainer.hpp"

namespace moelab {

inline constexpr const char* kManifestSchema = "moelab.manifest/1";
inline constexpr const char* kSummarySchema = "moelab.summary/1";

enum class GridKind {
  homogeneous,
  heterogeneous,
  generalist_augmented,
  lb_ablation,
  routing_ablation,
};

std::string to_string(GridKind kind);
GridKind parse_grid_kind(const std::string& text);

struct SweepRun {
  ModelArchSpec arch;
  // s = 1 dense-granular comparison runs, exempt from the FLOP-match check.
  bool dense_granular = false;
};

struct SweepManifest {
  GridKind grid = GridKind::homogeneous;
  std::vector<SweepRun> runs;
  TrainConfig train;
  CorpusSpec corpus;
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir = "runs";

  // Throws ConfigError naming the first offending run.
  void validate() const;
};

nlohmann::json to_json(const SweepManifest& m);
SweepManifest manifest_from_json(const nlohmann::json& j);
SweepManifest load_manifest(const std::filesystem::path& path);

struct PlanRequest {
  GridKind grid = GridKind::homogeneous;
  std::string base = "tiny";
  std::vector<std::int64_t> n_range;      // empty: published defaults
  std::vector<Granularity> g_range;       // empty: published defaults
  Rational s_max{8};
  std::vector<Rational> g_gen_range{Rational(1, 2)};
  std::vector<Rational> capacity_factors{Rational(1), Rational(2)};
  bool dense_granular = false;  // add flagged s = 1 equal-weight/pseudo-router runs
};

// Architecture rows for a grid over `base`; FLOP-matched except for
// flagged dense-granular runs.
std::vector<SweepRun> plan_runs(const PlanRequest& req);

struct RunSummary {
  std::string run_id;
  std::string spec_hash;
  std::string arch;
  Rational s;
  std::vector<ExpertPoolSpec> pools;
  Rational g_gen;
  double alpha_lb = 0.0;
  double gamma = 0.0;
  std::string routing;
  std::string dense_granular_mode;
  std::uint64_t seed = 0;
  std::int64_t steps = 0;
  double final_macro_ce = 0.0;
  std::vector<double> final_domain_ce;
  std::optional<double> final_imbalance;  // absent without routed pools
  double wall_clock_s = 0.0;
};

nlohmann::json to_json(const RunSummary& s);
RunSummary run_summary_from_json(const nlohmann::json& j);

struct RunFailure {
  std::string run_id;
  std::string arch;
  std::string error;
};

struct SweepOptions {
  std::size_t jobs = 1;
  bool force = false;  // rerun completed runs
  std::function<void(const std::string&)> log;  // optional progress lines
};

struct SweepResult {
  std::vector<RunSummary> summaries;  // sorted by (s, n)
  std::vector<RunFailure> failures;
  std::size_t executed = 0;
  std::size_t skipped = 0;
};

std::string run_id(const ModelArchSpec& arch, const TrainConfig& train,
                   const CorpusSpec& corpus, std::uint64_t seed);

// Mean over the last `window` records of the mean per-layer imbalance.
std::optional<double> final_imbalance(const std::vector<MetricsRecord>& records,
                                      std::size_t window = 10);

// Trains one run into `dir` and writes all its files.
RunSummary execute_run(const SweepRun& run, const TrainConfig& train,
                       const CorpusSpec& corpus, std::uint64_t seed,
                       const std::filesystem::path& dir);

// Completed runs are skipped unless forced; failures are recorded and the
// sweep continues. Writes summary.csv, long.csv and failures.csv.
SweepResult run_sweep(const SweepManifest& manifest, const SweepOptions& options = {});

// Completed summaries found under a sweep root, sorted by (s, n).
std::vector<RunSummary> collect_summaries(const std::filesystem::path& root);

void sort_summaries(std::vector<RunSummary>& rows);
std::string summary_csv(const std::vector<RunSummary>& rows);
std::string long_csv(const std::vector<RunSummary>& rows);

struct PlotTables {
  std::string fixed_n;
  std::string fixed_g;
  std::string fixed_s;
};

// Pivots keyed by n and g (single routed pool only) and by s (always).
PlotTables plot_tables(const std::vector<RunSummary>& rows);
void emit_plots_data(const std::vector<RunSummary>& rows, const std::filesystem::path& dir);

// Held-out macro CE recomputed from a run directory's checkpoint.
EvalResult evaluate_run_dir(const std::filesystem::path& dir);

}  // namespace moelab
