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

// The MoE feed-forward block: one token-choice router per expert pool,
// dropless or capacity-limited dispatch, an optional always-on generalist,
// and the load-balancing / router z auxiliary losses.

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "moelab/arch_config.hpp"
#include "moelab/init.hpp"
#include "moelab/ops.hpp"
#include "moelab/routing.hpp"
#include "moelab/tensor.hpp"

namespace moelab {

template <typename T>
struct FfnWeights {
  ad::Tensor<T> w_gate;  // (d, width)
  ad::Tensor<T> w_up;    // (d, width)
  ad::Tensor<T> w_down;  // (width, d)

  ad::Tensor<T> operator()(const ad::Tensor<T>& x) const {
    return ad::swiglu_ffn(x, w_gate, w_up, w_down);
  }
  std::size_t width() const { return w_gate.dim(1); }
  std::size_t param_count() const {
    return w_gate.size() + w_up.size() + w_down.size();
  }
};

template <typename T>
struct RouterAffinities {
  ad::Tensor<T> logits;  // (tokens, n)
  ad::Tensor<T> probs;   // softmax over experts
};

// Router logits and probabilities for `h`, plus the top-k selection under
// the state's loss-free bias.
template <typename T>
std::pair<RouterAffinities<T>, RoutingOutcome> route_topk(
    const ad::Tensor<T>& h, const ad::Tensor<T>& router_weight,
    const RouterState& state, std::size_t k);

// N_E * sum_i f_i * P_i with P taken from `probs` (differentiable) and f a
// per-batch constant.
template <typename T>
ad::Tensor<T> lb_loss_term(const ad::Tensor<T>& probs, std::span<const double> f);

// Batch mean of squared row log-sum-exp.
template <typename T>
ad::Tensor<T> z_loss_term(const ad::Tensor<T>& logits);

struct PoolStats {
  RoutingStats routing;
  double lb_loss = 0.0;
  double z_loss = 0.0;
  std::size_t assignments = 0;
  std::size_t dropped = 0;
};

template <typename T>
struct MoEOutput {
  ad::Tensor<T> hidden;
  ad::Tensor<T> lb_loss;  // summed over pools, unweighted
  ad::Tensor<T> z_loss;   // summed over pools, unweighted
  std::vector<PoolStats> stats;
};

// Routing decisions of one forward pass, one outcome per pool (after drops).
struct LayerTrace {
  std::vector<RoutingOutcome> pools;
};

struct RoutingControl {
  LayerTrace* trace = nullptr;
  bool replay = false;  // reuse trace->pools instead of selecting afresh
};

struct InitScales {
  double stddev = 0.02;
  double out_stddev = 0.02;  // down projections
};

template <typename T>
class MoELayer {
 public:
  struct Pool {
    ExpertPoolSpec spec;
    ad::Tensor<T> router;  // (d, n); undefined for equal_weight
    RouterState state;
    std::vector<FfnWeights<T>> experts;
  };

  MoELayer(MoELayerSpec spec, std::size_t model_dim, std::size_t ffn_dim,
           ParamInit<T>& init, InitScales scales = {});

  MoEOutput<T> forward(const ad::Tensor<T>& h, RoutingControl control = {}) const;

  // Applies the loss-free bias rule to every pool with the loads of `stats`.
  void update_loss_free_bias(std::span<const PoolStats> stats);

  const MoELayerSpec& spec() const { return spec_; }
  std::size_t model_dim() const { return model_dim_; }
  const std::optional<FfnWeights<T>>& generalist() const { return generalist_; }
  const std::vector<Pool>& pools() const { return pools_; }
  std::vector<Pool>& mutable_pools() { return pools_; }

  std::vector<RouterState> router_states() const;
  // Throws ConfigError unless pool count and expert counts line up.
  void set_router_states(std::vector<RouterState> states);

  void collect_parameters(const std::string& prefix,
                          std::vector<NamedParam<T>>& out) const;

 private:
  MoEOutput<T> routed_forward(const ad::Tensor<T>& h, RoutingControl control) const;
  MoEOutput<T> dense_granular_forward(const ad::Tensor<T>& h) const;

  MoELayerSpec spec_;
  std::size_t model_dim_;
  std::optional<FfnWeights<T>> generalist_;
  std::vector<Pool> pools_;
};

}  // namespace moelab
