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

#include "moelab/arch_config.hpp"

#include <algorithm>
#include <tuple>

namespace moelab {

namespace {

bool is_power_of_two(std::int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

bool has_router(const MoELayerSpec& spec) {
  return spec.dense_granular_mode != DenseGranularMode::equal_weight;
}

}  // namespace

Granularity::Granularity(Rational value) : value_(value) {
  if (value_ <= Rational(0) || value_ > Rational(1)) {
    throw ConfigError("granularity " + value_.str() + " outside (0, 1]");
  }
  if (!is_power_of_two(value_.den()) || value_.den() > kMaxDenominator) {
    throw ConfigError("granularity " + value_.str() +
                      " needs a power-of-two denominator <= " +
                      std::to_string(kMaxDenominator));
  }
}

std::int64_t flop_matched_active_count(const Granularity& g) {
  const Rational k = Rational(1) / g.value();
  if (!k.is_integer()) {
    throw FlopMatchError("granularity " + g.str() +
                         " has non-integer reciprocal " + k.str());
  }
  return k.num();
}

std::string to_string(DenseGranularMode mode) {
  switch (mode) {
    case DenseGranularMode::off: return "off";
    case DenseGranularMode::equal_weight: return "equal_weight";
    case DenseGranularMode::pseudo_router: return "pseudo_router";
  }
  return "off";
}

DenseGranularMode parse_dense_granular_mode(const std::string& text) {
  if (text == "off") return DenseGranularMode::off;
  if (text == "equal_weight") return DenseGranularMode::equal_weight;
  if (text == "pseudo_router") return DenseGranularMode::pseudo_router;
  throw ParseError("unknown dense_granular_mode '" + text + "'");
}

std::string RoutingPolicy::str() const {
  return mode == Mode::dropless ? std::string("dropless")
                                : "capacity:" + capacity_factor.str();
}

void MoELayerSpec::validate() const {
  if (pools.empty() && !has_generalist()) {
    throw ConfigError("layer has neither routed pools nor a generalist");
  }
  for (std::size_t i = 0; i < pools.size(); ++i) {
    const auto& p = pools[i];
    const std::string where = "pool " + std::to_string(i) + ": ";
    if (p.total_count < 1) throw ConfigError(where + "n must be positive");
    if (p.active_count < 1) throw ConfigError(where + "k must be positive");
    if (p.active_count > p.total_count) {
      throw ConfigError(where + "k=" + std::to_string(p.active_count) +
                        " exceeds n=" + std::to_string(p.total_count));
    }
  }
  if (has_generalist()) (void)Granularity(generalist);
  if (routing.mode == RoutingPolicy::Mode::capacity &&
      routing.capacity_factor <= Rational(0)) {
    throw ConfigError("capacity factor must be positive, got " +
                      routing.capacity_factor.str());
  }
  if (lb_weight < 0 || z_weight < 0 || bias_step < 0) {
    throw ConfigError("loss weights and bias step must be non-negative");
  }
  if (dense_granular_mode != DenseGranularMode::off) {
    const bool shape_ok = pools.size() == 1 && !has_generalist() &&
                          pools[0].active_count == pools[0].total_count &&
                          activation_sparsity(*this) == Rational(1);
    if (!shape_ok) {
      throw ConfigError("dense_granular_mode " + to_string(dense_granular_mode) +
                        " needs a single pool with k = n and s = 1 (s = " +
                        activation_sparsity(*this).str() + ")");
    }
  }
}

MoELayerSpec dense_layer() {
  MoELayerSpec spec;
  spec.generalist = Rational(1);
  return spec;
}

MoELayerSpec homogeneous_layer(std::int64_t n, Granularity g) {
  MoELayerSpec spec;
  spec.pools.push_back({n, g, flop_matched_active_count(g)});
  return spec;
}

Rational activation_sparsity(const MoELayerSpec& spec) {
  Rational s = spec.generalist;
  for (const auto& p : spec.pools) s += Rational(p.total_count) * p.granularity.value();
  return s;
}

Rational active_ffn_fraction(const MoELayerSpec& spec) {
  Rational a = spec.generalist;
  for (const auto& p : spec.pools) a += Rational(p.active_count) * p.granularity.value();
  return a;
}

FlopMatchReport validate_flop_match(const MoELayerSpec& spec) {
  FlopMatchReport report;
  report.active_sum = active_ffn_fraction(spec);
  std::string problems;
  for (std::size_t i = 0; i < spec.pools.size(); ++i) {
    const auto& p = spec.pools[i];
    if (p.active_count > p.total_count) {
      problems += "pool " + std::to_string(i) + " has k=" +
                  std::to_string(p.active_count) + " > n=" +
                  std::to_string(p.total_count) + "; ";
    }
  }
  if (report.active_sum != Rational(1)) {
    problems += "g_gen + sum(k_i * g_i) = " + report.active_sum.str() +
                " != 1; ";
  }
  report.ok = problems.empty();
  if (!report.ok) report.message = problems.substr(0, problems.size() - 2);
  return report;
}

std::int64_t ModelArchSpec::component_width(const Rational& g) const {
  const Rational w = g * Rational(ffn_dim());
  if (!w.is_integer()) {
    throw ConfigError("granularity " + g.str() + " of ffn width " +
                      std::to_string(ffn_dim()) +
                      " is not an integer width (" + w.str() + ")");
  }
  return w.num();
}

void ModelArchSpec::validate() const {
  if (layers < 1 || model_dim < 1 || heads < 1 || vocab < 1) {
    throw ConfigError("arch '" + name +
                      "': layers, model_dim, heads and vocab must be positive");
  }
  if (model_dim % heads != 0) {
    throw ConfigError("arch '" + name + "': model_dim " +
                      std::to_string(model_dim) + " not divisible by heads " +
                      std::to_string(heads));
  }
  if (ffn_multiplier != 4) {
    throw ConfigError("arch '" + name + "': ffn_multiplier must be 4");
  }
  if (max_seq_len < 0) throw ConfigError("max_seq_len must be >= 0");
  layer.validate();
  if (layer.has_generalist()) (void)component_width(layer.generalist);
  for (const auto& p : layer.pools) (void)component_width(p.granularity.value());
}

ParamCount count_params(const ModelArchSpec& arch) {
  arch.validate();
  const std::int64_t d = arch.model_dim;
  const auto& layer = arch.layer;

  std::int64_t active_width = 0;
  std::int64_t total_width = 0;
  std::int64_t router_per_layer = 0;
  if (layer.has_generalist()) {
    active_width += arch.component_width(layer.generalist);
    total_width += arch.component_width(layer.generalist);
  }
  for (const auto& p : layer.pools) {
    const std::int64_t w = arch.component_width(p.granularity.value());
    active_width += p.active_count * w;
    total_width += p.total_count * w;
    if (has_router(layer)) router_per_layer += d * p.total_count;
  }

  const std::int64_t shared = 4 * d * d + 2 * d;  // attention + two gains
  ParamCount pc;
  pc.active_non_embedding = arch.layers * (shared + 3 * d * active_width) + d;
  pc.total_non_embedding = arch.layers * (shared + 3 * d * total_width) + d;
  pc.router_params = arch.layers * router_per_layer;
  pc.embedding_params = 2 * arch.vocab * d + arch.max_seq_len * d;
  return pc;
}

std::vector<std::int64_t> default_expert_counts() {
  std::vector<std::int64_t> out;
  for (std::int64_t n = 1; n <= 1024; n *= 2) out.push_back(n);
  return out;
}

std::vector<Granularity> default_granularities() {
  std::vector<Granularity> out;
  for (std::int64_t den = 1; den <= Granularity::kMaxDenominator; den *= 2) {
    out.emplace_back(1, den);
  }
  return out;
}

namespace {

void sort_by_sparsity_then_n(std::vector<MoELayerSpec>& specs) {
  std::stable_sort(specs.begin(), specs.end(),
                   [](const MoELayerSpec& a, const MoELayerSpec& b) {
                     const auto sa = activation_sparsity(a);
                     const auto sb = activation_sparsity(b);
                     if (sa != sb) return sa < sb;
                     return a.pools.front().total_count <
                            b.pools.front().total_count;
                   });
}

}  // namespace

std::vector<MoELayerSpec> enumerate_homogeneous_grid(
    std::span<const std::int64_t> n_range,
    std::span<const Granularity> g_range, const Rational& s_max) {
  std::vector<MoELayerSpec> out;
  for (const auto n : n_range) {
    for (const auto& g : g_range) {
      const std::int64_t k = flop_matched_active_count(g);
      if (k > n) continue;
      if (Rational(n) * g.value() > s_max) continue;
      out.push_back(homogeneous_layer(n, g));
    }
  }
  sort_by_sparsity_then_n(out);
  return out;
}

std::vector<std::pair<std::int64_t, Granularity>> published_homogeneous_cells() {
  // (n, denominator of g) per shaded cell of the published grid figure.
  static constexpr std::pair<std::int64_t, std::int64_t> kCells[] = {
      {1, 1},     {2, 2},     {4, 4},     {8, 8},
      {2, 1},     {4, 2},     {8, 4},     {16, 8},   {32, 16},  {64, 32},
      {128, 64},  {4, 1},     {8, 2},     {16, 4},   {32, 8},   {64, 16},
      {128, 32},  {256, 64},  {8, 1},     {16, 2},   {32, 4},   {64, 8},
      {128, 16},  {256, 32},  {512, 64},  {16, 1},   {32, 2},   {64, 4},
      {128, 8},   {256, 16},  {512, 32},  {64, 2},   {128, 4},  {256, 8},
      {512, 16},  {128, 2},   {256, 4},   {512, 8},  {1024, 16}, {256, 2},
      {512, 4},   {1024, 8},  {512, 2},
  };
  std::vector<std::pair<std::int64_t, Granularity>> out;
  for (const auto& [n, den] : kCells) out.emplace_back(n, Granularity(1, den));
  return out;
}

std::vector<MoELayerSpec> enumerate_heterogeneous_grid() {
  // (denominator of g1, smallest n1); each family spans four doublings of n.
  static constexpr std::pair<std::int64_t, std::int64_t> kFamilies[] = {
      {2, 4}, {4, 8}, {8, 16}, {16, 16}};
  std::vector<MoELayerSpec> out;
  for (const auto& [den1, first_n1] : kFamilies) {
    const Granularity g1(1, den1);
    const Granularity g2(1, 2 * den1);
    // Each pool carries half the active FFN: k1*g1 = k2*g2 = 1/2.
    const std::int64_t k1 = den1 / 2;
    const std::int64_t k2 = den1;
    for (std::int64_t n1 = first_n1, i = 0; i < 4; ++i, n1 *= 2) {
      MoELayerSpec spec;
      spec.pools.push_back({n1, g1, k1});
      spec.pools.push_back({2 * n1, g2, k2});
      out.push_back(std::move(spec));
    }
  }
  return out;
}

std::vector<MoELayerSpec> enumerate_generalist_grid(
    std::span<const std::int64_t> n_range,
    std::span<const Granularity> g_range, std::span<const Rational> g_gen_range,
    const Rational& s_max) {
  std::vector<MoELayerSpec> out;
  for (const auto& g_gen : g_gen_range) {
    (void)Granularity(g_gen);
    const Rational routed = Rational(1) - g_gen;
    for (const auto n : n_range) {
      for (const auto& g : g_range) {
        const Rational k = routed / g.value();
        if (!k.is_integer() || k.num() < 1 || k.num() > n) continue;
        MoELayerSpec spec;
        spec.generalist = g_gen;
        spec.pools.push_back({n, g, k.num()});
        if (activation_sparsity(spec) > s_max) continue;
        out.push_back(std::move(spec));
      }
    }
  }
  sort_by_sparsity_then_n(out);
  return out;
}

std::int64_t token_budget(std::int64_t active_params,
                          const Rational& multiplier) {
  if (active_params <= 0) throw ConfigError("active_params must be positive");
  const Rational exact = multiplier * Rational(active_params);
  // Half away from zero.
  const __int128 twice = static_cast<__int128>(exact.num()) * 2;
  const __int128 den = exact.den();
  const __int128 rounded = twice >= 0 ? (twice + den) / (2 * den)
                                      : -((-twice + den) / (2 * den));
  return static_cast<std::int64_t>(rounded);
}

std::vector<ModelArchSpec> published_architectures() {
  struct Row {
    const char* name;
    std::int64_t layers, dim, heads;
  };
  static constexpr Row kRows[] = {
      {"10M", 3, 48, 3},     {"20M", 4, 96, 4},    {"50M", 5, 240, 6},
      {"80M", 8, 336, 7},    {"110M", 9, 432, 9},  {"200M", 10, 640, 10},
      {"300M", 12, 832, 13},
  };
  std::vector<ModelArchSpec> out;
  for (const auto& row : kRows) {
    ModelArchSpec arch;
    arch.name = row.name;
    arch.layers = row.layers;
    arch.model_dim = row.dim;
    arch.heads = row.heads;
    arch.vocab = 50'000;
    arch.layer = dense_layer();
    out.push_back(std::move(arch));
  }
  return out;
}

std::optional<ModelArchSpec> find_architecture(const std::string& name) {
  for (auto& arch : published_architectures()) {
    if (arch.name == name) return arch;
  }
  // Desk-scale shapes for quick experiments.
  ModelArchSpec arch;
  arch.layer = dense_layer();
  if (name == "tiny") {
    arch.name = "tiny";
    arch.layers = 2;
    arch.model_dim = 32;
    arch.heads = 2;
    arch.vocab = 64;
    arch.max_seq_len = 64;
    return arch;
  }
  if (name == "micro") {
    arch.name = "micro";
    arch.layers = 1;
    arch.model_dim = 16;
    arch.heads = 2;
    arch.vocab = 32;
    arch.max_seq_len = 32;
    return arch;
  }
  return std::nullopt;
}

}  // namespace moelab
