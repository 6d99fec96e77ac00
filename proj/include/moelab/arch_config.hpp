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

// Configuration algebra for MoE feed-forward layers: granularity, active
// and total expert counts, FLOP matching, activation sparsity, sweep grids
// and exact parameter counting.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moelab/rational.hpp"

namespace moelab {

// Expert intermediate width over the dense FFN intermediate width (4d).
// Always in (0, 1] with a power-of-two denominator no larger than
// kMaxDenominator.
class Granularity {
 public:
  static constexpr std::int64_t kMaxDenominator = 64;

  Granularity() = default;  // 1
  explicit Granularity(Rational value);
  Granularity(std::int64_t num, std::int64_t den)
      : Granularity(Rational(num, den)) {}

  static Granularity parse(const std::string& text) {
    return Granularity(Rational::parse(text));
  }

  const Rational& value() const { return value_; }
  std::string str() const { return value_.str(); }
  friend bool operator==(const Granularity&, const Granularity&) = default;
  friend auto operator<=>(const Granularity& a, const Granularity& b) {
    return a.value_ <=> b.value_;
  }

 private:
  Rational value_{1};
};

// k = 1/g. Throws FlopMatchError when 1/g is not an integer.
std::int64_t flop_matched_active_count(const Granularity& g);

struct ExpertPoolSpec {
  std::int64_t total_count = 1;   // n
  Granularity granularity;        // g
  std::int64_t active_count = 1;  // k

  friend bool operator==(const ExpertPoolSpec&, const ExpertPoolSpec&) = default;
};

enum class DenseGranularMode { off, equal_weight, pseudo_router };

std::string to_string(DenseGranularMode mode);
DenseGranularMode parse_dense_granular_mode(const std::string& text);

struct RoutingPolicy {
  enum class Mode { dropless, capacity };
  Mode mode = Mode::dropless;
  Rational capacity_factor{2};  // only read in capacity mode

  static RoutingPolicy dropless() { return {}; }
  static RoutingPolicy capacity(Rational factor) {
    return {Mode::capacity, factor};
  }
  std::string str() const;
  friend bool operator==(const RoutingPolicy&, const RoutingPolicy&) = default;
};

struct MoELayerSpec {
  std::vector<ExpertPoolSpec> pools;
  Rational generalist{0};  // g_gen; zero means no generalist
  RoutingPolicy routing;
  double lb_weight = 1e-2;  // alpha_LB
  double z_weight = 1e-3;   // alpha_RZ
  double bias_step = 0.0;   // gamma of the loss-free balancer
  DenseGranularMode dense_granular_mode = DenseGranularMode::off;

  bool has_generalist() const { return generalist.num() != 0; }

  // Structural checks only (k <= n, granularities legal, ablation shape).
  // FLOP matching is reported separately by validate_flop_match.
  void validate() const;

  friend bool operator==(const MoELayerSpec&, const MoELayerSpec&) = default;
};

// The dense baseline: a single always-on FFN of full width.
MoELayerSpec dense_layer();

// One routed pool; k defaults to the FLOP-matched 1/g.
MoELayerSpec homogeneous_layer(std::int64_t n, Granularity g);

// s = g_gen + sum_i n_i * g_i
Rational activation_sparsity(const MoELayerSpec& spec);

// g_gen + sum_i k_i * g_i
Rational active_ffn_fraction(const MoELayerSpec& spec);

struct FlopMatchReport {
  bool ok = false;
  Rational active_sum;
  std::string message;  // empty when ok
};

FlopMatchReport validate_flop_match(const MoELayerSpec& spec);

struct ModelArchSpec {
  std::string name;
  std::int64_t layers = 1;
  std::int64_t model_dim = 16;
  std::int64_t heads = 1;
  std::int64_t ffn_multiplier = 4;
  std::int64_t vocab = 256;
  // Learned absolute positions; counted with the embeddings. Zero leaves
  // positions out of the tally (the published table has no such column).
  std::int64_t max_seq_len = 0;
  MoELayerSpec layer;

  std::int64_t ffn_dim() const { return ffn_multiplier * model_dim; }
  // Intermediate width of an FFN component with granularity g.
  std::int64_t component_width(const Rational& g) const;
  void validate() const;

  friend bool operator==(const ModelArchSpec&, const ModelArchSpec&) = default;
};

struct ParamCount {
  std::int64_t active_non_embedding = 0;
  std::int64_t total_non_embedding = 0;
  std::int64_t router_params = 0;
  std::int64_t embedding_params = 0;

  friend bool operator==(const ParamCount&, const ParamCount&) = default;
};

// Attention 4d^2, SwiGLU FFN 3*d*4d per dense-equivalent, two RMS gains per
// layer plus a final gain, no biases. Routers and embeddings are reported in
// their own buckets.
ParamCount count_params(const ModelArchSpec& arch);

// Powers of two 1..1024 and granularities 1..1/64 used by the published
// homogeneous sweep.
std::vector<std::int64_t> default_expert_counts();
std::vector<Granularity> default_granularities();

// Every (n, g) with k = 1/g <= n and n*g <= s_max, ordered by (s, n).
std::vector<MoELayerSpec> enumerate_homogeneous_grid(
    std::span<const std::int64_t> n_range,
    std::span<const Granularity> g_range, const Rational& s_max);

// The (n, g) cells actually trained in the published homogeneous sweep.
std::vector<std::pair<std::int64_t, Granularity>> published_homogeneous_cells();

// Two-pool layers with n1 = n2/2, k1 = k2/2, g1 = 2*g2 and each pool
// carrying half of the active FFN; the rows of the published table.
std::vector<MoELayerSpec> enumerate_heterogeneous_grid();

// Homogeneous routed pools augmented with a generalist of granularity
// g_gen, routed k = (1 - g_gen)/g so the layer stays FLOP matched.
std::vector<MoELayerSpec> enumerate_generalist_grid(
    std::span<const std::int64_t> n_range,
    std::span<const Granularity> g_range, std::span<const Rational> g_gen_range,
    const Rational& s_max);

// round(multiplier * active_params), half away from zero.
std::int64_t token_budget(std::int64_t active_params,
                          const Rational& multiplier = Rational(20));

// Named architectures from the published table (vocab 50K).
std::vector<ModelArchSpec> published_architectures();
std::optional<ModelArchSpec> find_architecture(const std::string& name);

}  // namespace moelab
