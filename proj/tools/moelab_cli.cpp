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

// moelab command line: plan, run, eval, export, count-params, validate.
//
// Environment: MOELAB_OUT is the default sweep root, MOELAB_SEED the
// default seed for planned sweeps.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "moelab/arch_config.hpp"
#include "moelab/errors.hpp"
#include "moelab/harness.hpp"
#include "moelab/spec_io.hpp"

namespace fs = std::filesystem;
using namespace moelab;

namespace {

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

ModelArchSpec resolve_arch(const std::string& spec_or_name) {
  if (fs::exists(spec_or_name)) return load_arch_spec(spec_or_name);
  if (auto arch = find_architecture(spec_or_name)) return *arch;
  throw ConfigError("'" + spec_or_name + "' is neither a spec file nor a known architecture");
}

nlohmann::json param_json(const ModelArchSpec& arch) {
  const auto c = count_params(arch);
  return {{"arch", arch.name},
          {"s", activation_sparsity(arch.layer).str()},
          {"active_non_embedding", c.active_non_embedding},
          {"total_non_embedding", c.total_non_embedding},
          {"router_params", c.router_params},
          {"embedding_params", c.embedding_params}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"moelab: mixture-of-experts granularity sweeps"};
  app.require_subcommand(1);

  // plan
  auto* plan = app.add_subcommand("plan", "Write a sweep manifest for a grid");
  std::string grid = "homogeneous", base = "tiny", manifest_out;
  std::vector<std::int64_t> n_range;
  std::vector<std::string> g_range, g_gen_range{"1/2"}, cf_range{"1", "2"};
  std::string s_max = "8";
  bool dense_granular = false;
  std::vector<std::uint64_t> seeds;
  std::int64_t steps = 200, batch = 16, seq = 32, eval_interval = 0;
  double peak_lr = 3e-3, skew = 1.0;
  int precision = 32;
  std::string corpus_kind = "mixture-of-domains", out_dir;
  std::size_t domains = 4;
  plan->add_option("--grid", grid,
                   "homogeneous | heterogeneous | generalist-augmented | lb-ablation | "
                   "routing-ablation")
      ->capture_default_str();
  plan->add_option("--base", base, "Base architecture")->capture_default_str();
  plan->add_option("--n", n_range, "Total expert counts (default 1..1024)");
  plan->add_option("--g", g_range, "Granularities, e.g. 1 1/2 1/4 (default 1..1/64)");
  plan->add_option("--s-max", s_max, "Largest activation sparsity")->capture_default_str();
  plan->add_option("--g-gen", g_gen_range, "Generalist granularities");
  plan->add_option("--cf", cf_range, "Capacity factors for routing-ablation");
  plan->add_flag("--dense-granular", dense_granular, "Add flagged s=1 dense-granular runs");
  plan->add_option("--seeds", seeds, "Seeds (default $MOELAB_SEED or 0)");
  plan->add_option("--steps", steps, "Optimizer steps per run")->capture_default_str();
  plan->add_option("--batch", batch, "Sequences per batch")->capture_default_str();
  plan->add_option("--seq", seq, "Sequence length")->capture_default_str();
  plan->add_option("--lr", peak_lr, "Peak learning rate")->capture_default_str();
  plan->add_option("--eval-interval", eval_interval, "Steps between evaluations (0: final)");
  plan->add_option("--precision", precision, "32 or 64")->capture_default_str();
  plan->add_option("--corpus", corpus_kind, "Corpus generator kind")->capture_default_str();
  plan->add_option("--domains", domains, "Corpus domains")->capture_default_str();
  plan->add_option("--skew", skew, "Corpus Zipf exponent")->capture_default_str();
  plan->add_option("--out", out_dir, "Sweep output root (default $MOELAB_OUT or runs)");
  plan->add_option("-o,--manifest", manifest_out, "Write the manifest here instead of stdout");

  // run
  auto* run = app.add_subcommand("run", "Execute a manifest");
  std::string manifest_path;
  std::size_t jobs = 1;
  bool resume = false, force = false;
  run->add_option("manifest", manifest_path, "Manifest file")->required();
  run->add_option("--jobs", jobs, "Concurrent runs")->capture_default_str();
  run->add_flag("--resume", resume, "Skip completed runs (the default)");
  run->add_flag("--force", force, "Rerun completed runs");

  // eval
  auto* eval = app.add_subcommand("eval", "Recompute held-out CE from a run checkpoint");
  std::string run_dir;
  eval->add_option("run_dir", run_dir, "Run directory")->required();

  // export
  auto* exp = app.add_subcommand("export", "Write fixed-n / fixed-g / fixed-s CSVs");
  std::string sweep_root, export_dir;
  exp->add_option("root", sweep_root, "Sweep root (default $MOELAB_OUT or runs)");
  exp->add_option("--to", export_dir, "Destination (default <root>/plots)");

  // count-params
  auto* count = app.add_subcommand("count-params", "Print parameter counts");
  std::vector<std::string> count_specs;
  bool all_published = false;
  count->add_option("specs", count_specs, "Spec files or architecture names");
  count->add_flag("--published", all_published, "All published architectures");

  // validate
  auto* validate = app.add_subcommand("validate", "Check FLOP matching of spec files");
  std::vector<std::string> validate_specs;
  validate->add_option("specs", validate_specs, "Spec files or architecture names")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*plan) {
      PlanRequest req;
      req.grid = parse_grid_kind(grid);
      req.base = base;
      req.n_range = n_range;
      for (const auto& g : g_range) req.g_range.push_back(Granularity::parse(g));
      req.s_max = Rational::parse(s_max);
      req.g_gen_range.clear();
      for (const auto& g : g_gen_range) req.g_gen_range.push_back(Rational::parse(g));
      req.capacity_factors.clear();
      for (const auto& cf : cf_range) req.capacity_factors.push_back(Rational::parse(cf));
      req.dense_granular = dense_granular;

      SweepManifest m;
      m.grid = req.grid;
      m.runs = plan_runs(req);
      m.train = TrainConfig::desk_defaults();
      m.train.batch_size = batch;
      m.train.seq_len = seq;
      m.train.peak_lr = peak_lr;
      m.train.warmup_steps = std::min<std::int64_t>(m.train.warmup_steps, steps);
      m.train.total_tokens = steps * batch * seq;
      m.train.eval_interval = eval_interval;
      m.train.precision_bits = precision;
      m.corpus.kind = parse_corpus_kind(corpus_kind);
      m.corpus.domains = domains;
      m.corpus.skew = skew;
      if (!m.runs.empty()) m.corpus.vocab = static_cast<std::size_t>(m.runs.front().arch.vocab);
      m.seeds = seeds.empty()
                    ? std::vector<std::uint64_t>{std::stoull(env_or("MOELAB_SEED", "0"))}
                    : seeds;
      m.output_dir = out_dir.empty() ? env_or("MOELAB_OUT", "runs") : out_dir;
      m.validate();
      const std::string text = to_json(m).dump(2) + "\n";
      if (manifest_out.empty()) {
        std::cout << text;
      } else {
        write_text_file(manifest_out, text);
        std::cerr << m.runs.size() << " runs x " << m.seeds.size() << " seeds -> "
                  << manifest_out << "\n";
      }
    } else if (*run) {
      (void)resume;
      SweepOptions opts;
      opts.jobs = jobs;
      opts.force = force;
      opts.log = [](const std::string& line) { std::cerr << line << "\n"; };
      const auto result = run_sweep(load_manifest(manifest_path), opts);
      std::cerr << result.executed << " executed, " << result.skipped << " skipped, "
                << result.failures.size() << " failed\n";
      return result.failures.empty() ? 0 : 1;
    } else if (*eval) {
      const auto r = evaluate_run_dir(run_dir);
      std::cout << nlohmann::json{{"macro_ce", r.macro_ce}, {"domain_ce", r.domain_ce}}.dump(2)
                << "\n";
    } else if (*exp) {
      const fs::path root = sweep_root.empty() ? env_or("MOELAB_OUT", "runs") : sweep_root;
      const auto rows = collect_summaries(root);
      if (rows.empty()) throw ConfigError("no completed runs under " + root.string());
      const fs::path dest = export_dir.empty() ? root / "plots" : fs::path(export_dir);
      emit_plots_data(rows, dest);
      std::cerr << rows.size() << " rows -> " << dest.string() << "\n";
    } else if (*count) {
      std::vector<ModelArchSpec> archs;
      if (all_published) archs = published_architectures();
      for (const auto& s : count_specs) archs.push_back(resolve_arch(s));
      if (archs.empty()) throw ConfigError("count-params needs a spec or --published");
      nlohmann::json out = nlohmann::json::array();
      for (const auto& a : archs) out.push_back(param_json(a));
      std::cout << out.dump(2) << "\n";
    } else if (*validate) {
      bool all_ok = true;
      for (const auto& s : validate_specs) {
        const auto arch = resolve_arch(s);
        arch.validate();
        const auto report = validate_flop_match(arch.layer);
        std::cout << s << ": " << (report.ok ? "ok" : "FAIL " + report.message)
                  << " (active fraction " << report.active_sum.str() << ")\n";
        all_ok = all_ok && report.ok;
      }
      return all_ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "moelab: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
