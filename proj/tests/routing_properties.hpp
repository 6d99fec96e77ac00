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

// Randomised routing property checks shared by the unit and acceptance
// suites. Each returns an empty string on success, else the first
// counterexample.

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "moelab/routing.hpp"

namespace moelab::testing {

struct RandomRouting {
  std::size_t tokens, n, k;
  std::vector<double> probs;
  std::vector<double> bias;
};

// Random softmax rows; `levels` > 0 quantises logits to force ties.
inline RandomRouting random_routing(std::mt19937_64& rng, int levels = 0) {
  RandomRouting r;
  r.tokens = 1 + rng() % 48;
  r.n = 1 + rng() % 12;
  r.k = 1 + rng() % r.n;
  std::normal_distribution<double> normal(0.0, 1.5);
  r.probs.resize(r.tokens * r.n);
  for (std::size_t t = 0; t < r.tokens; ++t) {
    double z = 0.0;
    std::vector<double> e(r.n);
    for (auto& x : e) {
      double logit = normal(rng);
      if (levels > 0) logit = std::round(logit * levels / 3.0);
      x = std::exp(logit);
      z += x;
    }
    for (std::size_t j = 0; j < r.n; ++j) r.probs[t * r.n + j] = e[j] / z;
  }
  if (rng() % 2) {
    r.bias.resize(r.n);
    for (auto& b : r.bias) b = 0.05 * normal(rng);
  }
  return r;
}

// Reference top-k: full stable sort by score descending.
inline std::vector<std::int32_t> reference_topk(const RandomRouting& r, std::size_t t) {
  std::vector<std::int32_t> order(r.n);
  std::iota(order.begin(), order.end(), 0);
  auto score = [&](std::int32_t e) {
    return r.probs[t * r.n + static_cast<std::size_t>(e)] +
           (r.bias.empty() ? 0.0 : r.bias[static_cast<std::size_t>(e)]);
  };
  std::stable_sort(order.begin(), order.end(),
                   [&](std::int32_t a, std::int32_t b) { return score(a) > score(b); });
  order.resize(r.k);
  return order;
}

inline std::string check_selection(const RandomRouting& r, const RoutingOutcome& out) {
  for (std::size_t t = 0; t < r.tokens; ++t) {
    const auto ref = reference_topk(r, t);
    double total = 0.0;
    for (auto e : ref) total += r.probs[t * r.n + static_cast<std::size_t>(e)];
    for (std::size_t s = 0; s < r.k; ++s) {
      if (out.selected[t * r.k + s] != ref[s]) {
        return "token " + std::to_string(t) + " slot " + std::to_string(s) + " selected " +
               std::to_string(out.selected[t * r.k + s]) + " expected " + std::to_string(ref[s]);
      }
      // Weights come from probs alone, renormalised over the selection.
      const double w = r.probs[t * r.n + static_cast<std::size_t>(ref[s])] / total;
      if (std::abs(out.weights[t * r.k + s] - w) > 1e-12) {
        return "token " + std::to_string(t) + " weight mismatch";
      }
    }
  }
  return {};
}

inline std::string check_dropless(const RandomRouting& r, const RoutingOutcome& out) {
  const auto d = dispatch_dropless(out);
  if (d.dropped != 0 || out.drop_count() != 0) return "dropless dispatch dropped a slot";
  std::size_t total = 0;
  for (std::size_t e = 0; e < r.n; ++e) {
    if (d.batches[e].tokens.size() != static_cast<std::size_t>(d.raw_loads[e])) {
      return "expert " + std::to_string(e) + " batch size differs from raw load";
    }
    total += d.batches[e].tokens.size();
  }
  if (total != r.tokens * r.k) return "dropless batches do not cover T*k slots";
  return {};
}

inline std::string check_capacity(const RandomRouting& r, const RoutingOutcome& selected,
                                  const Rational& cf) {
  RoutingOutcome out = selected;
  const auto d = dispatch_capacity<double>(out, r.probs, cf);
  const auto cap = expert_capacity(cf, r.tokens, r.k, r.n);
  std::size_t kept = 0;
  for (std::size_t e = 0; e < r.n; ++e) {
    if (static_cast<std::int64_t>(d.batches[e].tokens.size()) > cap) {
      return "expert " + std::to_string(e) + " exceeds capacity " + std::to_string(cap);
    }
    kept += d.batches[e].tokens.size();
  }
  if (kept + out.drop_count() != r.tokens * r.k || d.dropped != out.drop_count()) {
    return "kept + dropped != T*k";
  }
  // Reference keep set: per expert, highest prob first, earlier token on ties.
  for (std::size_t e = 0; e < r.n; ++e) {
    std::vector<std::pair<double, std::size_t>> assigned;  // (-prob, slot)
    for (std::size_t slot = 0; slot < out.slots(); ++slot) {
      if (static_cast<std::size_t>(out.selected[slot]) == e) {
        assigned.push_back({-r.probs[(slot / r.k) * r.n + e], slot});
      }
    }
    std::sort(assigned.begin(), assigned.end());
    for (std::size_t i = 0; i < assigned.size(); ++i) {
      const bool should_drop = static_cast<std::int64_t>(i) >= cap;
      if (static_cast<bool>(out.dropped[assigned[i].second]) != should_drop) {
        return "expert " + std::to_string(e) + " kept the wrong assignments";
      }
    }
  }
  for (std::size_t t = 0; t < r.tokens; ++t) {
    double sum = 0.0;
    bool any = false;
    for (std::size_t s = 0; s < r.k; ++s) {
      if (!out.dropped[t * r.k + s]) {
        sum += out.weights[t * r.k + s];
        any = true;
      } else if (out.weights[t * r.k + s] != 0.0) {
        return "dropped slot carries weight";
      }
    }
    if (any && std::abs(sum - 1.0) > 1e-6) return "surviving weights do not sum to 1";
  }
  return {};
}

// A capacity factor large enough that nothing can overflow behaves as dropless.
inline std::string check_unbounded_capacity(const RandomRouting& r, const RoutingOutcome& selected) {
  RoutingOutcome capped = selected;
  const auto d_cap = dispatch_capacity<double>(capped, r.probs,
                                               Rational(static_cast<std::int64_t>(r.n) * 1000));
  const auto d_free = dispatch_dropless(selected);
  if (capped.dropped != selected.dropped || capped.weights != selected.weights) {
    return "unbounded capacity changed drops or weights";
  }
  for (std::size_t e = 0; e < r.n; ++e) {
    if (d_cap.batches[e].tokens != d_free.batches[e].tokens ||
        d_cap.batches[e].slots != d_free.batches[e].slots) {
      return "unbounded capacity changed expert batches";
    }
  }
  return {};
}

// Bias moves the selection but weights stay a function of probs only.
inline std::string check_bias_neutrality(const RandomRouting& r, std::mt19937_64& rng) {
  auto shifted = r;
  shifted.bias.assign(r.n, 0.0);
  std::normal_distribution<double> normal(0.0, 0.5);
  for (auto& b : shifted.bias) b = normal(rng);
  const auto out = select_topk<double>(shifted.probs, shifted.bias, r.n, r.k);
  for (std::size_t t = 0; t < r.tokens; ++t) {
    double total = 0.0;
    for (std::size_t s = 0; s < r.k; ++s) {
      total += r.probs[t * r.n + static_cast<std::size_t>(out.selected[t * r.k + s])];
    }
    for (std::size_t s = 0; s < r.k; ++s) {
      const double p = r.probs[t * r.n + static_cast<std::size_t>(out.selected[t * r.k + s])];
      if (std::abs(out.weights[t * r.k + s] - p / total) > 1e-12) return "bias leaked into weights";
    }
  }
  return check_selection(shifted, out);
}

}  // namespace moelab::testing
