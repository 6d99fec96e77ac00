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

// Token-choice routing on plain buffers: top-k selection, dropless and
// capacity-limited dispatch, per-batch load statistics, the closed-form
// auxiliary losses and the loss-free bias update. Nothing here builds graph
// nodes; the differentiable side lives in moe_layer.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "moelab/rational.hpp"

namespace moelab {

// Per-token selection for one pool. Slot s of token t lives at t * k + s.
struct RoutingOutcome {
  std::size_t tokens = 0;
  std::size_t experts = 0;  // n of the pool
  std::size_t k = 0;
  std::vector<std::int32_t> selected;  // expert id per slot
  std::vector<double> weights;         // combine weight per slot
  std::vector<std::uint8_t> dropped;   // 1 when the slot was dropped

  std::size_t slots() const { return tokens * k; }
  std::size_t drop_count() const;
};

// Top-k of (probs + bias) per token with ties going to the lower expert
// index. Combine weights come from probs alone, renormalised over the
// selection. `probs` is (tokens, n) row-major; `bias` is empty or has n
// entries. Throws ConfigError when k > n.
template <typename T>
RoutingOutcome select_topk(std::span<const T> probs, std::span<const double> bias,
                           std::size_t n, std::size_t k);

struct ExpertBatch {
  std::vector<std::size_t> tokens;  // ascending token positions
  std::vector<std::size_t> slots;   // matching flat slot index
};

struct Dispatch {
  std::vector<ExpertBatch> batches;     // one per expert
  std::vector<std::int64_t> raw_loads;  // assignments per expert before drops
  std::size_t dropped = 0;
};

// Every (token, slot) goes to its expert.
Dispatch dispatch_dropless(const RoutingOutcome& outcome);

// ceil(cf * tokens * k / n)
std::int64_t expert_capacity(const Rational& factor, std::size_t tokens,
                             std::size_t k, std::size_t n);

// Each expert keeps its highest-probability assignments (earlier token on
// ties) up to capacity. Overflow slots are flagged in `outcome.dropped` and
// the surviving weights of each token are renormalised.
template <typename T>
Dispatch dispatch_capacity(RoutingOutcome& outcome, std::span<const T> probs,
                           const Rational& factor);

struct RoutingStats {
  std::vector<double> f;  // assignments / (tokens * k); sums to 1
  std::vector<double> P;  // mean routing probability per expert; sums to 1
  std::vector<std::int64_t> raw_loads;
};

template <typename T>
RoutingStats routing_stats(const RoutingOutcome& outcome, std::span<const T> probs);

// N_E * sum_i f_i * P_i
double lb_loss(const RoutingStats& stats);
double lb_loss(std::span<const double> f, std::span<const double> P);

// (1/B) sum_b (log sum_j exp(logits[b, j]))^2
template <typename T>
double z_loss(std::span<const T> logits, std::size_t n);

// max(loads) / mean(loads). Throws ContractError when every load is zero.
double load_imbalance(std::span<const std::int64_t> loads);

struct RouterState {
  std::vector<double> bias;  // loss-free balancing bias, selection only
  double bias_step = 0.0;    // gamma
};

RouterState make_router_state(std::size_t n, double bias_step);

// b_i += gamma * sign(mean_load - load_i); a no-op when gamma is zero.
void update_loss_free_bias(RouterState& state,
                           std::span<const std::int64_t> raw_loads);

}  // namespace moelab
