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

#include "moelab/routing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "moelab/errors.hpp"

namespace moelab {

std::size_t RoutingOutcome::drop_count() const {
  return static_cast<std::size_t>(
      std::count(dropped.begin(), dropped.end(), std::uint8_t{1}));
}

template <typename T>
RoutingOutcome select_topk(std::span<const T> probs, std::span<const double> bias,
                           std::size_t n, std::size_t k) {
  if (n == 0 || k == 0 || k > n) {
    throw ConfigError("top-k routing needs 1 <= k <= n, got k=" +
                      std::to_string(k) + " n=" + std::to_string(n));
  }
  if (probs.size() % n != 0) {
    throw DimensionError("routing probabilities of size " +
                         std::to_string(probs.size()) + " for " +
                         std::to_string(n) + " experts");
  }
  if (!bias.empty() && bias.size() != n) {
    throw DimensionError("router bias has " + std::to_string(bias.size()) +
                         " entries for " + std::to_string(n) + " experts");
  }
  RoutingOutcome out;
  out.tokens = probs.size() / n;
  out.experts = n;
  out.k = k;
  out.selected.resize(out.slots());
  out.weights.resize(out.slots());
  out.dropped.assign(out.slots(), 0);

  std::vector<std::int32_t> order(n);
  std::vector<double> score(n);
  for (std::size_t t = 0; t < out.tokens; ++t) {
    const T* row = probs.data() + t * n;
    for (std::size_t e = 0; e < n; ++e) {
      score[e] = static_cast<double>(row[e]) + (bias.empty() ? 0.0 : bias[e]);
    }
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k),
                      order.end(), [&](std::int32_t a, std::int32_t b) {
                        if (score[a] != score[b]) return score[a] > score[b];
                        return a < b;
                      });
    double total = 0.0;
    for (std::size_t s = 0; s < k; ++s) {
      out.selected[t * k + s] = order[s];
      total += static_cast<double>(row[order[s]]);
    }
    for (std::size_t s = 0; s < k; ++s) {
      const double p = static_cast<double>(row[order[s]]);
      out.weights[t * k + s] = total > 0.0 ? p / total : 1.0 / static_cast<double>(k);
    }
  }
  return out;
}

namespace {

std::vector<std::int64_t> count_assignments(const RoutingOutcome& outcome) {
  std::vector<std::int64_t> loads(outcome.experts, 0);
  for (auto e : outcome.selected) ++loads[static_cast<std::size_t>(e)];
  return loads;
}

}  // namespace

Dispatch dispatch_dropless(const RoutingOutcome& outcome) {
  Dispatch d;
  d.batches.resize(outcome.experts);
  d.raw_loads = count_assignments(outcome);
  for (std::size_t slot = 0; slot < outcome.slots(); ++slot) {
    auto& batch = d.batches[static_cast<std::size_t>(outcome.selected[slot])];
    batch.tokens.push_back(slot / outcome.k);
    batch.slots.push_back(slot);
  }
  return d;
}

std::int64_t expert_capacity(const Rational& factor, std::size_t tokens,
                             std::size_t k, std::size_t n) {
  const Rational cap = factor * Rational(static_cast<std::int64_t>(tokens * k),
                                         static_cast<std::int64_t>(n));
  return cap.ceil();
}

template <typename T>
Dispatch dispatch_capacity(RoutingOutcome& outcome, std::span<const T> probs,
                           const Rational& factor) {
  if (factor <= Rational(0)) {
    throw ConfigError("capacity factor must be positive, got " + factor.str());
  }
  const std::size_t n = outcome.experts;
  const std::size_t k = outcome.k;
  const auto capacity = static_cast<std::size_t>(
      std::max<std::int64_t>(0, expert_capacity(factor, outcome.tokens, k, n)));

  Dispatch d = dispatch_dropless(outcome);
  for (std::size_t e = 0; e < n; ++e) {
    auto& batch = d.batches[e];
    if (batch.slots.size() <= capacity) continue;
    std::vector<std::size_t> rank(batch.slots.size());
    std::iota(rank.begin(), rank.end(), std::size_t{0});
    // Batches are in token order, so a stable sort settles ties by position.
    std::stable_sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) {
      return probs[batch.tokens[a] * n + e] > probs[batch.tokens[b] * n + e];
    });
    std::vector<std::uint8_t> keep(batch.slots.size(), 0);
    for (std::size_t r = 0; r < capacity; ++r) keep[rank[r]] = 1;
    ExpertBatch kept;
    for (std::size_t i = 0; i < batch.slots.size(); ++i) {
      if (keep[i]) {
        kept.tokens.push_back(batch.tokens[i]);
        kept.slots.push_back(batch.slots[i]);
      } else {
        outcome.dropped[batch.slots[i]] = 1;
        ++d.dropped;
      }
    }
    batch = std::move(kept);
  }

  for (std::size_t t = 0; t < outcome.tokens; ++t) {
    double total = 0.0;
    for (std::size_t s = 0; s < k; ++s) {
      const std::size_t slot = t * k + s;
      if (!outcome.dropped[slot]) {
        total += static_cast<double>(
            probs[t * n + static_cast<std::size_t>(outcome.selected[slot])]);
      }
    }
    for (std::size_t s = 0; s < k; ++s) {
      const std::size_t slot = t * k + s;
      const double p = static_cast<double>(
          probs[t * n + static_cast<std::size_t>(outcome.selected[slot])]);
      outcome.weights[slot] =
          (outcome.dropped[slot] || total <= 0.0) ? 0.0 : p / total;
    }
  }
  return d;
}

template <typename T>
RoutingStats routing_stats(const RoutingOutcome& outcome, std::span<const T> probs) {
  const std::size_t n = outcome.experts;
  if (probs.size() != outcome.tokens * n) {
    throw DimensionError("routing_stats: probabilities of size " +
                         std::to_string(probs.size()) + " for " +
                         std::to_string(outcome.tokens) + "x" + std::to_string(n));
  }
  RoutingStats stats;
  stats.raw_loads = count_assignments(outcome);
  stats.f.resize(n);
  stats.P.assign(n, 0.0);
  const double assignments = static_cast<double>(outcome.slots());
  for (std::size_t e = 0; e < n; ++e) {
    stats.f[e] = assignments > 0 ? static_cast<double>(stats.raw_loads[e]) / assignments
                                 : 0.0;
  }
  for (std::size_t t = 0; t < outcome.tokens; ++t) {
    for (std::size_t e = 0; e < n; ++e) stats.P[e] += static_cast<double>(probs[t * n + e]);
  }
  if (outcome.tokens > 0) {
    for (auto& p : stats.P) p /= static_cast<double>(outcome.tokens);
  }
  return stats;
}

double lb_loss(std::span<const double> f, std::span<const double> P) {
  if (f.size() != P.size()) {
    throw DimensionError("lb_loss: f has " + std::to_string(f.size()) +
                         " entries, P has " + std::to_string(P.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) acc += f[i] * P[i];
  return static_cast<double>(f.size()) * acc;
}

double lb_loss(const RoutingStats& stats) { return lb_loss(stats.f, stats.P); }

template <typename T>
double z_loss(std::span<const T> logits, std::size_t n) {
  if (n == 0 || logits.size() % n != 0) {
    throw DimensionError("z_loss: " + std::to_string(logits.size()) +
                         " logits for " + std::to_string(n) + " experts");
  }
  const std::size_t rows = logits.size() / n;
  if (rows == 0) return 0.0;
  double acc = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = logits.data() + r * n;
    const double mx = static_cast<double>(*std::max_element(row, row + n));
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(static_cast<double>(row[j]) - mx);
    const double lse = mx + std::log(total);
    acc += lse * lse;
  }
  return acc / static_cast<double>(rows);
}

double load_imbalance(std::span<const std::int64_t> loads) {
  if (loads.empty()) throw ContractError("load_imbalance of no experts");
  std::int64_t total = 0;
  for (auto l : loads) {
    if (l < 0) throw ContractError("negative expert load");
    total += l;
  }
  if (total == 0) throw ContractError("load_imbalance with all-zero loads");
  const double mean = static_cast<double>(total) / static_cast<double>(loads.size());
  return static_cast<double>(*std::max_element(loads.begin(), loads.end())) / mean;
}

RouterState make_router_state(std::size_t n, double bias_step) {
  return RouterState{std::vector<double>(n, 0.0), bias_step};
}

void update_loss_free_bias(RouterState& state,
                           std::span<const std::int64_t> raw_loads) {
  if (raw_loads.size() != state.bias.size()) {
    throw DimensionError("bias update with " + std::to_string(raw_loads.size()) +
                         " loads for " + std::to_string(state.bias.size()) +
                         " experts");
  }
  if (state.bias_step == 0.0 || raw_loads.empty()) return;
  // Compare n * load_i with the total to keep the sign test exact.
  const std::int64_t total = std::accumulate(raw_loads.begin(), raw_loads.end(),
                                             std::int64_t{0});
  const auto n = static_cast<std::int64_t>(raw_loads.size());
  for (std::size_t i = 0; i < raw_loads.size(); ++i) {
    const std::int64_t diff = total - n * raw_loads[i];
    const int sign = (diff > 0) - (diff < 0);
    state.bias[i] += state.bias_step * sign;
  }
}

template RoutingOutcome select_topk<float>(std::span<const float>, std::span<const double>,
                                           std::size_t, std::size_t);
template RoutingOutcome select_topk<double>(std::span<const double>, std::span<const double>,
                                            std::size_t, std::size_t);
template Dispatch dispatch_capacity<float>(RoutingOutcome&, std::span<const float>,
                                           const Rational&);
template Dispatch dispatch_capacity<double>(RoutingOutcome&, std::span<const double>,
                                            const Rational&);
template RoutingStats routing_stats<float>(const RoutingOutcome&, std::span<const float>);
template RoutingStats routing_stats<double>(const RoutingOutcome&, std::span<const double>);
template double z_loss<float>(std::span<const float>, std::size_t);
template double z_loss<double>(std::span<const double>, std::size_t);

}  // namespace moelab
