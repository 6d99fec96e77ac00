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

#include "moelab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "moelab/checkpoint.hpp"
#include "moelab/errors.hpp"
#include "moelab/spec_io.hpp"

namespace moelab {
namespace fs = std::filesystem;

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

template <typename F>
std::string join(const std::vector<ExpertPoolSpec>& pools, F field) {
  std::string out;
  for (std::size_t i = 0; i < pools.size(); ++i) {
    if (i) out += ';';
    out += field(pools[i]);
  }
  return out;
}

std::string n_list(const RunSummary& r) {
  return join(r.pools, [](const ExpertPoolSpec& p) { return std::to_string(p.total_count); });
}
std::string g_list(const RunSummary& r) {
  return join(r.pools, [](const ExpertPoolSpec& p) { return p.granularity.str(); });
}
std::string k_list(const RunSummary& r) {
  return join(r.pools, [](const ExpertPoolSpec& p) { return std::to_string(p.active_count); });
}
std::string imbalance_str(const RunSummary& r) {
  return r.final_imbalance ? fmt_double(*r.final_imbalance) : std::string();
}

ModelArchSpec with_layer(const ModelArchSpec& base, MoELayerSpec layer) {
  ModelArchSpec arch = base;
  layer.lb_weight = base.layer.lb_weight;
  layer.z_weight = base.layer.z_weight;
  layer.bias_step = base.layer.bias_step;
  layer.routing = base.layer.routing;
  arch.layer = std::move(layer);
  return arch;
}

bool fits(const ModelArchSpec& arch) {
  try {
    arch.validate();
    return true;
  } catch (const ConfigError&) {
    return false;
  }
}

void write_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  write_text_file(tmp, text);
  fs::rename(tmp, path);
}

template <typename T>
RunSummary train_into(const SweepRun& run, const TrainConfig& train, const SyntheticCorpus& corpus,
                      std::uint64_t seed, const fs::path& dir) {
  const auto t0 = std::chrono::steady_clock::now();
  auto model = TransformerLM<T>::build(run.arch, seed);
  std::ofstream metrics(dir / "metrics.ndjson", std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot open " + (dir / "metrics.ndjson").string());
  const auto batch = static_cast<std::size_t>(train.batch_size);
  const auto seq = static_cast<std::size_t>(train.seq_len);

  TrainHooks<T> hooks;
  hooks.next_batch = [&](std::int64_t step) { return corpus.train_batch(step, batch, seq); };
  hooks.evaluate = [&](const TransformerLM<T>& m) { return macro_avg_ce(m, corpus, seq); };
  hooks.on_record = [&](const MetricsRecord& r) { metrics << to_ndjson_line(r) << '\n'; };
  TrainResult result;
  try {
    result = train_run(model, train, hooks);
  } catch (...) {
    metrics.flush();
    throw;
  }
  metrics.close();
  save_checkpoint(dir / "checkpoint.bin", model, static_cast<std::uint64_t>(result.steps));

  const auto& layer = run.arch.layer;
  RunSummary s;
  s.spec_hash = hash_hex(fnv1a64(canonical_form(run.arch)));
  s.arch = run.arch.name;
  s.s = activation_sparsity(layer);
  s.pools = layer.pools;
  s.g_gen = layer.generalist;
  s.alpha_lb = layer.lb_weight;
  s.gamma = layer.bias_step;
  s.routing = layer.routing.str();
  s.dense_granular_mode = to_string(layer.dense_granular_mode);
  s.seed = seed;
  s.steps = result.steps;
  const auto& last = result.records.back();
  s.final_macro_ce = last.eval->macro_ce;
  s.final_domain_ce = last.eval->domain_ce;
  s.final_imbalance = final_imbalance(result.records);
  s.wall_clock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return s;
}

}  // namespace

std::string to_string(GridKind kind) {
  switch (kind) {
    case GridKind::homogeneous: return "homogeneous";
    case GridKind::heterogeneous: return "heterogeneous";
    case GridKind::generalist_augmented: return "generalist-augmented";
    case GridKind::lb_ablation: return "lb-ablation";
    case GridKind::routing_ablation: return "routing-ablation";
  }
  return "unknown";
}

GridKind parse_grid_kind(const std::string& text) {
  for (auto k : {GridKind::homogeneous, GridKind::heterogeneous, GridKind::generalist_augmented,
                 GridKind::lb_ablation, GridKind::routing_ablation}) {
    if (to_string(k) == text) return k;
  }
  throw ParseError("unknown grid '" + text + "'");
}

void SweepManifest::validate() const {
  if (runs.empty()) throw ConfigError("manifest has no runs");
  if (seeds.empty()) throw ConfigError("manifest has no seeds");
  if (output_dir.empty()) throw ConfigError("manifest has no output_dir");
  train.validate();
  corpus.validate();
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& arch = runs[i].arch;
    const std::string where = "run " + std::to_string(i) + " (" + arch.name + "): ";
    try {
      arch.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
    if (!runs[i].dense_granular) {
      const auto report = validate_flop_match(arch.layer);
      if (!report.ok) throw FlopMatchError(where + report.message);
    } else if (activation_sparsity(arch.layer) != Rational(1)) {
      throw ConfigError(where + "dense-granular runs must have s = 1");
    }
    if (arch.max_seq_len < train.seq_len) {
      throw ConfigError(where + "max_seq_len " + std::to_string(arch.max_seq_len) +
                        " below seq_len " + std::to_string(train.seq_len));
    }
    if (arch.vocab < static_cast<std::int64_t>(corpus.vocab)) {
      throw ConfigError(where + "vocab " + std::to_string(arch.vocab) +
                        " smaller than corpus vocab " + std::to_string(corpus.vocab));
    }
  }
}

nlohmann::json to_json(const SweepManifest& m) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& r : m.runs) {
    runs.push_back({{"spec", to_json(r.arch)}, {"dense_granular", r.dense_granular}});
  }
  return {{"schema", kManifestSchema}, {"grid", to_string(m.grid)},
          {"output_dir", m.output_dir},  {"seeds", m.seeds},
          {"train", to_json(m.train)},   {"corpus", to_json(m.corpus)},
          {"runs", std::move(runs)}};
}

SweepManifest manifest_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("manifest must be an object");
  if (j.value("schema", std::string()) != kManifestSchema) {
    throw ParseError(std::string("manifest schema must be ") + kManifestSchema);
  }
  SweepManifest m;
  try {
    m.grid = parse_grid_kind(j.at("grid").get<std::string>());
    m.output_dir = j.at("output_dir").get<std::string>();
    m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    m.train = train_config_from_json(j.at("train"), TrainConfig::desk_defaults());
    m.corpus = corpus_spec_from_json(j.at("corpus"));
    for (const auto& r : j.at("runs")) {
      m.runs.push_back({arch_spec_from_json(r.at("spec")), r.value("dense_granular", false)});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("manifest: ") + e.what());
  }
  return m;
}

SweepManifest load_manifest(const fs::path& path) {
  try {
    return manifest_from_json(nlohmann::json::parse(read_text_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::vector<SweepRun> plan_runs(const PlanRequest& req) {
  const auto base_opt = find_architecture(req.base);
  if (!base_opt) throw ConfigError("unknown architecture '" + req.base + "'");
  const ModelArchSpec& base = *base_opt;
  const auto n_range = req.n_range.empty() ? default_expert_counts() : req.n_range;
  const auto g_range = req.g_range.empty() ? default_granularities() : req.g_range;

  std::vector<SweepRun> runs;
  auto add = [&](ModelArchSpec arch, bool flagged = false) {
    if (fits(arch)) runs.push_back({std::move(arch), flagged});
  };
  const auto cells = enumerate_homogeneous_grid(n_range, g_range, req.s_max);

  switch (req.grid) {
    case GridKind::homogeneous:
      for (const auto& cell : cells) add(with_layer(base, cell));
      break;
    case GridKind::heterogeneous:
      for (const auto& row : enumerate_heterogeneous_grid()) {
        if (activation_sparsity(row) <= req.s_max) add(with_layer(base, row));
      }
      break;
    case GridKind::generalist_augmented:
      for (const auto& row :
           enumerate_generalist_grid(n_range, g_range, req.g_gen_range, req.s_max)) {
        add(with_layer(base, row));
      }
      break;
    case GridKind::lb_ablation:
      for (const auto& cell : cells) {
        for (double lb : {1e-2, 1e-4}) {
          for (double gamma : {0.0, 1e-3}) {
            auto arch = with_layer(base, cell);
            arch.layer.lb_weight = lb;
            arch.layer.bias_step = gamma;
            add(std::move(arch));
          }
        }
      }
      break;
    case GridKind::routing_ablation:
      for (const auto& cell : cells) {
        add(with_layer(base, cell));
        for (const auto& cf : req.capacity_factors) {
          auto arch = with_layer(base, cell);
          arch.layer.routing = RoutingPolicy::capacity(cf);
          add(std::move(arch));
        }
      }
      break;
  }

  if (req.dense_granular) {
    for (const auto& g : g_range) {
      if (g.value() == Rational(1)) continue;
      const std::int64_t n = flop_matched_active_count(g);
      MoELayerSpec layer;
      layer.pools.push_back({n, g, n});
      for (auto mode : {DenseGranularMode::equal_weight, DenseGranularMode::pseudo_router}) {
        layer.dense_granular_mode = mode;
        add(with_layer(base, layer), true);
      }
    }
  }
  return runs;
}

nlohmann::json to_json(const RunSummary& s) {
  nlohmann::json pools = nlohmann::json::array();
  for (const auto& p : s.pools) {
    pools.push_back({{"n", p.total_count}, {"g", p.granularity.str()}, {"k", p.active_count}});
  }
  nlohmann::json j = {{"schema", kSummarySchema},
                      {"run_id", s.run_id},
                      {"spec_hash", s.spec_hash},
                      {"arch", s.arch},
                      {"s", s.s.str()},
                      {"pools", std::move(pools)},
                      {"g_gen", s.g_gen.str()},
                      {"alpha_lb", s.alpha_lb},
                      {"gamma", s.gamma},
                      {"routing", s.routing},
                      {"dense_granular_mode", s.dense_granular_mode},
                      {"seed", s.seed},
                      {"steps", s.steps},
                      {"final_macro_ce", s.final_macro_ce},
                      {"final_domain_ce", s.final_domain_ce},
                      {"final_imbalance", nullptr},
                      {"wall_clock_s", s.wall_clock_s}};
  if (s.final_imbalance) j["final_imbalance"] = *s.final_imbalance;
  return j;
}

RunSummary run_summary_from_json(const nlohmann::json& j) {
  RunSummary s;
  try {
    s.run_id = j.at("run_id").get<std::string>();
    s.spec_hash = j.at("spec_hash").get<std::string>();
    s.arch = j.at("arch").get<std::string>();
    s.s = Rational::parse(j.at("s").get<std::string>());
    for (const auto& p : j.at("pools")) {
      s.pools.push_back({p.at("n").get<std::int64_t>(),
                         Granularity::parse(p.at("g").get<std::string>()),
                         p.at("k").get<std::int64_t>()});
    }
    s.g_gen = Rational::parse(j.at("g_gen").get<std::string>());
    s.alpha_lb = j.at("alpha_lb").get<double>();
    s.gamma = j.at("gamma").get<double>();
    s.routing = j.at("routing").get<std::string>();
    s.dense_granular_mode = j.at("dense_granular_mode").get<std::string>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.steps = j.at("steps").get<std::int64_t>();
    s.final_macro_ce = j.at("final_macro_ce").get<double>();
    s.final_domain_ce = j.at("final_domain_ce").get<std::vector<double>>();
    if (!j.at("final_imbalance").is_null()) s.final_imbalance = j["final_imbalance"].get<double>();
    s.wall_clock_s = j.at("wall_clock_s").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("run summary: ") + e.what());
  }
  return s;
}

std::string run_id(const ModelArchSpec& arch, const TrainConfig& train,
                   const CorpusSpec& corpus, std::uint64_t seed) {
  TrainConfig t = train;
  t.seed = seed;
  const std::string identity = canonical_form(arch) + "|" + to_json(t).dump() + "|" +
                               to_json(corpus).dump();
  return hash_hex(fnv1a64(identity));
}

std::optional<double> final_imbalance(const std::vector<MetricsRecord>& records,
                                      std::size_t window) {
  const std::size_t start = records.size() > window ? records.size() - window : 0;
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = start; i < records.size(); ++i) {
    const auto& li = records[i].layer_imbalance;
    if (li.empty()) continue;
    sum += std::accumulate(li.begin(), li.end(), 0.0) / static_cast<double>(li.size());
    ++count;
  }
  if (count == 0) return std::nullopt;
  return sum / static_cast<double>(count);
}

RunSummary execute_run(const SweepRun& run, const TrainConfig& train, const CorpusSpec& corpus,
                       std::uint64_t seed, const fs::path& dir) {
  TrainConfig cfg = train;
  cfg.seed = seed;
  fs::create_directories(dir);
  fs::remove(dir / "summary.json");
  fs::remove(dir / "failure.json");
  write_text_file(dir / "spec.json", to_json(run.arch).dump(2) + "\n");
  const nlohmann::json run_info = {{"train", to_json(cfg)},
                                   {"corpus", to_json(corpus)},
                                   {"seed", seed},
                                   {"dense_granular", run.dense_granular}};
  write_text_file(dir / "run.json", run_info.dump(2) + "\n");

  const SyntheticCorpus synthetic(corpus);
  RunSummary s = cfg.precision_bits == 64
                     ? train_into<double>(run, cfg, synthetic, seed, dir)
                     : train_into<float>(run, cfg, synthetic, seed, dir);
  s.run_id = run_id(run.arch, train, corpus, seed);
  write_atomic(dir / "summary.json", to_json(s).dump(2) + "\n");
  return s;
}

SweepResult run_sweep(const SweepManifest& manifest, const SweepOptions& options) {
  manifest.validate();
  const fs::path root(manifest.output_dir);
  fs::create_directories(root / "runs");
  write_text_file(root / "manifest.json", to_json(manifest).dump(2) + "\n");

  struct Job {
    const SweepRun* run;
    std::uint64_t seed;
    std::string id;
  };
  SweepResult result;
  std::vector<Job> pending;
  std::map<std::string, bool> seen;
  for (const auto& run : manifest.runs) {
    for (auto seed : manifest.seeds) {
      const auto id = run_id(run.arch, manifest.train, manifest.corpus, seed);
      if (seen.count(id)) continue;
      seen[id] = true;
      const fs::path summary = root / "runs" / id / "summary.json";
      if (!options.force && fs::exists(summary)) {
        result.summaries.push_back(
            run_summary_from_json(nlohmann::json::parse(read_text_file(summary))));
        ++result.skipped;
        continue;
      }
      pending.push_back({&run, seed, id});
    }
  }

  std::mutex mu;
  std::atomic<std::size_t> next{0};
  auto log = [&](const std::string& line) {
    if (!options.log) return;
    std::lock_guard<std::mutex> lock(mu);
    options.log(line);
  };
  auto worker = [&] {
    for (std::size_t i = next++; i < pending.size(); i = next++) {
      const Job& job = pending[i];
      const fs::path dir = root / "runs" / job.id;
      log("run " + job.id + " " + job.run->arch.name + " s=" +
          activation_sparsity(job.run->arch.layer).str() + " seed=" + std::to_string(job.seed));
      try {
        auto s = execute_run(*job.run, manifest.train, manifest.corpus, job.seed, dir);
        std::lock_guard<std::mutex> lock(mu);
        result.summaries.push_back(std::move(s));
        ++result.executed;
      } catch (const std::exception& e) {
        std::error_code ec;
        fs::create_directories(dir, ec);
        const nlohmann::json failure = {{"run_id", job.id}, {"error", e.what()}};
        std::ofstream(dir / "failure.json") << failure.dump(2) << '\n';
        log("run " + job.id + " failed: " + e.what());
        std::lock_guard<std::mutex> lock(mu);
        result.failures.push_back({job.id, job.run->arch.name, e.what()});
      }
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, pending.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < jobs; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }

  sort_summaries(result.summaries);
  std::sort(result.failures.begin(), result.failures.end(),
            [](const RunFailure& a, const RunFailure& b) { return a.run_id < b.run_id; });
  write_atomic(root / "summary.csv", summary_csv(result.summaries));
  write_atomic(root / "long.csv", long_csv(result.summaries));
  std::string timing = "run_id,wall_clock_s\n";
  for (const auto& s : result.summaries) timing += s.run_id + "," + fmt_double(s.wall_clock_s) + "\n";
  write_atomic(root / "timing.csv", timing);
  std::string failures = "run_id,arch,error\n";
  for (const auto& f : result.failures) {
    failures += f.run_id + "," + csv_field(f.arch) + "," + csv_field(f.error) + "\n";
  }
  write_atomic(root / "failures.csv", failures);
  return result;
}

std::vector<RunSummary> collect_summaries(const fs::path& root) {
  std::vector<RunSummary> rows;
  const fs::path runs = root / "runs";
  if (!fs::exists(runs)) return rows;
  for (const auto& entry : fs::directory_iterator(runs)) {
    const fs::path summary = entry.path() / "summary.json";
    if (fs::exists(summary)) {
      rows.push_back(run_summary_from_json(nlohmann::json::parse(read_text_file(summary))));
    }
  }
  sort_summaries(rows);
  return rows;
}

void sort_summaries(std::vector<RunSummary>& rows) {
  auto n_key = [](const RunSummary& r) {
    std::vector<std::int64_t> key;
    for (const auto& p : r.pools) key.push_back(p.total_count);
    return key;
  };
  std::sort(rows.begin(), rows.end(), [&](const RunSummary& a, const RunSummary& b) {
    if (a.s != b.s) return a.s < b.s;
    const auto na = n_key(a), nb = n_key(b);
    if (na != nb) return na < nb;
    return a.run_id < b.run_id;
  });
}

std::string summary_csv(const std::vector<RunSummary>& rows) {
  std::string out =
      "run_id,spec_hash,arch,s,n,g_list,k_list,g_gen,alpha_lb,gamma,routing,"
      "dense_granular_mode,seed,steps,final_macro_ce,final_imbalance\n";
  for (const auto& r : rows) {
    out += r.run_id + "," + r.spec_hash + "," + csv_field(r.arch) + "," + r.s.str() + "," +
           n_list(r) + "," + g_list(r) + "," + k_list(r) + "," + r.g_gen.str() + "," +
           fmt_double(r.alpha_lb) + "," + fmt_double(r.gamma) + "," + r.routing + "," +
           r.dense_granular_mode + "," + std::to_string(r.seed) + "," +
           std::to_string(r.steps) + "," + fmt_double(r.final_macro_ce) + "," +
           imbalance_str(r) + "\n";
  }
  return out;
}

std::string long_csv(const std::vector<RunSummary>& rows) {
  std::string out = "arch,s,n,g_list,g_gen,alpha_lb,gamma,routing,metric,value\n";
  for (const auto& r : rows) {
    const std::string prefix = csv_field(r.arch) + "," + r.s.str() + "," + n_list(r) + "," +
                               g_list(r) + "," + r.g_gen.str() + "," + fmt_double(r.alpha_lb) +
                               "," + fmt_double(r.gamma) + "," + r.routing + ",";
    out += prefix + "final_macro_ce," + fmt_double(r.final_macro_ce) + "\n";
    if (r.final_imbalance) out += prefix + "final_imbalance," + imbalance_str(r) + "\n";
    for (std::size_t d = 0; d < r.final_domain_ce.size(); ++d) {
      out += prefix + "domain_ce." + std::to_string(d) + "," +
             fmt_double(r.final_domain_ce[d]) + "\n";
    }
  }
  return out;
}

PlotTables plot_tables(const std::vector<RunSummary>& input) {
  std::vector<RunSummary> rows = input;
  sort_summaries(rows);
  const std::string tail_header =
      "g_gen,alpha_lb,gamma,routing,dense_granular_mode,seed,final_macro_ce,final_imbalance,"
      "run_id\n";
  auto tail = [](const RunSummary& r) {
    return r.g_gen.str() + "," + fmt_double(r.alpha_lb) + "," + fmt_double(r.gamma) + "," +
           r.routing + "," + r.dense_granular_mode + "," + std::to_string(r.seed) + "," +
           fmt_double(r.final_macro_ce) + "," + imbalance_str(r) + "," + r.run_id + "\n";
  };

  std::vector<const RunSummary*> single;
  for (const auto& r : rows) {
    if (r.pools.size() == 1) single.push_back(&r);
  }
  PlotTables t;
  auto by_n = single;
  std::stable_sort(by_n.begin(), by_n.end(), [](const RunSummary* a, const RunSummary* b) {
    return a->pools[0].total_count < b->pools[0].total_count;
  });
  t.fixed_n = "n,g,s," + tail_header;
  for (const auto* r : by_n) {
    t.fixed_n += std::to_string(r->pools[0].total_count) + "," + r->pools[0].granularity.str() +
                 "," + r->s.str() + "," + tail(*r);
  }
  auto by_g = single;
  std::stable_sort(by_g.begin(), by_g.end(), [](const RunSummary* a, const RunSummary* b) {
    return a->pools[0].granularity > b->pools[0].granularity;
  });
  t.fixed_g = "g,n,s," + tail_header;
  for (const auto* r : by_g) {
    t.fixed_g += r->pools[0].granularity.str() + "," + std::to_string(r->pools[0].total_count) +
                 "," + r->s.str() + "," + tail(*r);
  }
  t.fixed_s = "s,n,g_list," + tail_header;
  for (const auto& r : rows) t.fixed_s += r.s.str() + "," + n_list(r) + "," + g_list(r) + "," + tail(r);
  return t;
}

void emit_plots_data(const std::vector<RunSummary>& rows, const fs::path& dir) {
  fs::create_directories(dir);
  const auto t = plot_tables(rows);
  write_atomic(dir / "fixed_n.csv", t.fixed_n);
  write_atomic(dir / "fixed_g.csv", t.fixed_g);
  write_atomic(dir / "fixed_s.csv", t.fixed_s);
}

namespace {

template <typename T>
EvalResult evaluate_checkpoint(const ModelArchSpec& arch, const fs::path& ckpt,
                               std::uint64_t seed, const SyntheticCorpus& corpus,
                               std::size_t seq) {
  auto model = TransformerLM<T>::build(arch, seed);
  load_checkpoint(ckpt, model);
  return macro_avg_ce(model, corpus, seq);
}

}  // namespace

EvalResult evaluate_run_dir(const fs::path& dir) {
  const auto arch = load_arch_spec(dir / "spec.json");
  const auto info = nlohmann::json::parse(read_text_file(dir / "run.json"));
  const auto train = train_config_from_json(info.at("train"), TrainConfig::desk_defaults());
  const SyntheticCorpus corpus(corpus_spec_from_json(info.at("corpus")));
  const auto seq = static_cast<std::size_t>(train.seq_len);
  const auto ckpt = dir / "checkpoint.bin";
  return train.precision_bits == 64
             ? evaluate_checkpoint<double>(arch, ckpt, train.seed, corpus, seq)
             : evaluate_checkpoint<float>(arch, ckpt, train.seed, corpus, seq);
}

}  // namespace moelab
