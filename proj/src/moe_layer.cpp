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

#include "moelab/moe_layer.hpp"

#include <string>

namespace moelab {

namespace {

template <typename T>
FfnWeights<T> make_ffn(std::size_t d, std::size_t width, ParamInit<T>& init,
                       const InitScales& scales) {
  FfnWeights<T> ffn;
  ffn.w_gate = init.normal({d, width}, scales.stddev);
  ffn.w_up = init.normal({d, width}, scales.stddev);
  ffn.w_down = init.normal({width, d}, scales.out_stddev);
  return ffn;
}

std::size_t checked_width(const Rational& g, std::size_t ffn_dim) {
  const Rational w = g * Rational(static_cast<std::int64_t>(ffn_dim));
  if (!w.is_integer() || w.num() < 1) {
    throw ConfigError("granularity " + g.str() + " of ffn width " +
                      std::to_string(ffn_dim) + " gives width " + w.str());
  }
  return static_cast<std::size_t>(w.num());
}

// Batches of the slots that survived dispatch, as recorded in `outcome`.
Dispatch dispatch_kept(const RoutingOutcome& outcome) {
  Dispatch d;
  d.batches.resize(outcome.experts);
  d.raw_loads.assign(outcome.experts, 0);
  for (std::size_t slot = 0; slot < outcome.slots(); ++slot) {
    const auto e = static_cast<std::size_t>(outcome.selected[slot]);
    ++d.raw_loads[e];
    if (outcome.dropped[slot]) {
      ++d.dropped;
      continue;
    }
    d.batches[e].tokens.push_back(slot / outcome.k);
    d.batches[e].slots.push_back(slot);
  }
  return d;
}

// Running sum that starts from the first term rather than from zeros.
template <typename T>
struct Accumulator {
  ad::Tensor<T> total;
  void operator+=(const ad::Tensor<T>& t) {
    total = total.defined() ? ad::add(total, t) : t;
  }
  ad::Tensor<T> value_or_zeros(ad::Shape shape) const {
    return total.defined() ? total : ad::Tensor<T>::zeros(std::move(shape));
  }
};

}  // namespace

template <typename T>
std::pair<RouterAffinities<T>, RoutingOutcome> route_topk(
    const ad::Tensor<T>& h, const ad::Tensor<T>& router_weight,
    const RouterState& state, std::size_t k) {
  RouterAffinities<T> aff;
  aff.logits = ad::matmul(h, router_weight);
  aff.probs = ad::softmax(aff.logits, 1);
  auto outcome = select_topk<T>(aff.probs.values(), state.bias,
                                router_weight.dim(1), k);
  return {std::move(aff), std::move(outcome)};
}

template <typename T>
ad::Tensor<T> lb_loss_term(const ad::Tensor<T>& probs, std::span<const double> f) {
  const std::size_t n = probs.dim(1);
  if (f.size() != n) {
    throw DimensionError("lb_loss_term: " + std::to_string(f.size()) +
                         " load fractions for " + std::to_string(n) + " experts");
  }
  std::vector<T> fv(f.begin(), f.end());
  auto frac = ad::Tensor<T>::from({n}, std::move(fv));
  return ad::scale(ad::sum(ad::mul(ad::column_mean(probs), frac)),
                   static_cast<T>(n));
}

template <typename T>
ad::Tensor<T> z_loss_term(const ad::Tensor<T>& logits) {
  return ad::mean(ad::square(ad::logsumexp_rows(logits)));
}

template <typename T>
MoELayer<T>::MoELayer(MoELayerSpec spec, std::size_t model_dim,
                      std::size_t ffn_dim, ParamInit<T>& init,
                      InitScales scales)
    : spec_(std::move(spec)), model_dim_(model_dim) {
  spec_.validate();
  if (spec_.has_generalist()) {
    generalist_ = make_ffn(model_dim, checked_width(spec_.generalist, ffn_dim),
                           init, scales);
  }
  const bool routed = spec_.dense_granular_mode != DenseGranularMode::equal_weight;
  for (const auto& ps : spec_.pools) {
    Pool pool;
    pool.spec = ps;
    const auto n = static_cast<std::size_t>(ps.total_count);
    if (routed) pool.router = init.normal({model_dim, n}, scales.stddev);
    pool.state = make_router_state(n, spec_.bias_step);
    const std::size_t width = checked_width(ps.granularity.value(), ffn_dim);
    for (std::size_t e = 0; e < n; ++e) {
      pool.experts.push_back(make_ffn(model_dim, width, init, scales));
    }
    pools_.push_back(std::move(pool));
  }
}

template <typename T>
MoEOutput<T> MoELayer<T>::forward(const ad::Tensor<T>& h,
                                  RoutingControl control) const {
  if (h.rank() != 2 || h.dim(1) != model_dim_) {
    throw DimensionError("MoE layer of width " + std::to_string(model_dim_) +
                         " given hidden states " + ad::shape_str(h.shape()));
  }
  if (spec_.dense_granular_mode != DenseGranularMode::off) {
    return dense_granular_forward(h);
  }
  return routed_forward(h, control);
}

template <typename T>
MoEOutput<T> MoELayer<T>::routed_forward(const ad::Tensor<T>& h,
                                         RoutingControl control) const {
  const std::size_t tokens = h.dim(0);
  if (control.replay && (!control.trace || control.trace->pools.size() != pools_.size())) {
    throw ConfigError("routing replay needs one recorded outcome per pool");
  }
  Accumulator<T> out, lb_total, z_total;
  MoEOutput<T> result;
  if (generalist_) out += (*generalist_)(h);

  for (std::size_t p = 0; p < pools_.size(); ++p) {
    const Pool& pool = pools_[p];
    const auto n = static_cast<std::size_t>(pool.spec.total_count);
    const auto k = static_cast<std::size_t>(pool.spec.active_count);

    RouterAffinities<T> aff;
    RoutingOutcome outcome;
    Dispatch dispatch;
    if (control.replay) {
      aff.logits = ad::matmul(h, pool.router);
      aff.probs = ad::softmax(aff.logits, 1);
      outcome = control.trace->pools[p];
      if (outcome.tokens != tokens || outcome.experts != n || outcome.k != k) {
        throw ConfigError("recorded routing for pool " + std::to_string(p) +
                          " does not match the batch or pool shape");
      }
      dispatch = dispatch_kept(outcome);
    } else {
      std::tie(aff, outcome) = route_topk(h, pool.router, pool.state, k);
      dispatch = spec_.routing.mode == RoutingPolicy::Mode::dropless
                     ? dispatch_dropless(outcome)
                     : dispatch_capacity<T>(outcome, aff.probs.values(),
                                            spec_.routing.capacity_factor);
      if (control.trace) control.trace->pools.push_back(outcome);
    }

    // Differentiable combine weights: selected probabilities renormalised
    // over the slots that survived dispatch.
    std::vector<std::size_t> picked(outcome.slots());
    std::vector<T> kept(outcome.slots());
    for (std::size_t slot = 0; slot < outcome.slots(); ++slot) {
      picked[slot] = (slot / k) * n + static_cast<std::size_t>(outcome.selected[slot]);
      kept[slot] = outcome.dropped[slot] ? T{0} : T{1};
    }
    auto selected = ad::reshape(ad::gather(aff.probs, picked), {tokens, k});
    auto weights = ad::renormalize_rows(selected, std::span<const T>(kept));

    for (std::size_t e = 0; e < n; ++e) {
      const auto& batch = dispatch.batches[e];
      if (batch.tokens.empty()) continue;
      auto y = pool.experts[e](ad::gather_rows(h, batch.tokens));
      y = ad::scale_rows(y, ad::gather(weights, batch.slots));
      out += ad::index_add_rows(y, batch.tokens, tokens);
    }

    PoolStats ps;
    ps.routing = routing_stats<T>(outcome, aff.probs.values());
    auto lb = lb_loss_term(aff.probs, ps.routing.f);
    auto z = z_loss_term(aff.logits);
    ps.lb_loss = static_cast<double>(lb.item());
    ps.z_loss = static_cast<double>(z.item());
    ps.assignments = outcome.slots();
    ps.dropped = dispatch.dropped;
    lb_total += lb;
    z_total += z;
    result.stats.push_back(std::move(ps));
  }

  result.hidden = out.value_or_zeros({tokens, model_dim_});
  result.lb_loss = lb_total.value_or_zeros({});
  result.z_loss = z_total.value_or_zeros({});
  return result;
}

template <typename T>
MoEOutput<T> MoELayer<T>::dense_granular_forward(const ad::Tensor<T>& h) const {
  const std::size_t tokens = h.dim(0);
  const Pool& pool = pools_.front();
  const std::size_t n = pool.experts.size();
  Accumulator<T> out;
  MoEOutput<T> result;
  PoolStats ps;
  ps.routing.raw_loads.assign(n, static_cast<std::int64_t>(tokens));
  ps.routing.f.assign(n, 1.0 / static_cast<double>(n));
  ps.assignments = tokens * n;

  if (spec_.dense_granular_mode == DenseGranularMode::equal_weight) {
    const T w = T{1} / static_cast<T>(n);
    for (const auto& expert : pool.experts) out += ad::scale(expert(h), w);
    ps.routing.P.assign(n, 1.0 / static_cast<double>(n));
    result.z_loss = ad::Tensor<T>::zeros({});
  } else {
    auto logits = ad::matmul(h, pool.router);
    auto probs = ad::softmax(logits, 1);
    std::vector<std::size_t> column(tokens);
    for (std::size_t e = 0; e < n; ++e) {
      for (std::size_t t = 0; t < tokens; ++t) column[t] = t * n + e;
      out += ad::scale_rows(pool.experts[e](h), ad::gather(probs, column));
    }
    ps.routing.P.assign(n, 0.0);
    const auto pv = probs.values();
    for (std::size_t t = 0; t < tokens; ++t) {
      for (std::size_t e = 0; e < n; ++e) ps.routing.P[e] += static_cast<double>(pv[t * n + e]);
    }
    for (auto& v : ps.routing.P) v /= static_cast<double>(tokens);
    result.z_loss = z_loss_term(logits);
    ps.z_loss = static_cast<double>(result.z_loss.item());
  }
  result.hidden = out.value_or_zeros({tokens, model_dim_});
  result.lb_loss = ad::Tensor<T>::zeros({});
  result.stats.push_back(std::move(ps));
  return result;
}

template <typename T>
void MoELayer<T>::update_loss_free_bias(std::span<const PoolStats> stats) {
  if (spec_.dense_granular_mode != DenseGranularMode::off) return;
  if (stats.size() != pools_.size()) {
    throw ConfigError("bias update given stats for " + std::to_string(stats.size()) +
                      " pools, layer has " + std::to_string(pools_.size()));
  }
  for (std::size_t p = 0; p < pools_.size(); ++p) {
    moelab::update_loss_free_bias(pools_[p].state, stats[p].routing.raw_loads);
  }
}

template <typename T>
std::vector<RouterState> MoELayer<T>::router_states() const {
  std::vector<RouterState> out;
  for (const auto& pool : pools_) out.push_back(pool.state);
  return out;
}

template <typename T>
void MoELayer<T>::set_router_states(std::vector<RouterState> states) {
  if (states.size() != pools_.size()) {
    throw ConfigError("router state for " + std::to_string(states.size()) +
                      " pools, layer has " + std::to_string(pools_.size()));
  }
  for (std::size_t p = 0; p < pools_.size(); ++p) {
    if (states[p].bias.size() != pools_[p].experts.size()) {
      throw ConfigError("router state of pool " + std::to_string(p) + " has " +
                        std::to_string(states[p].bias.size()) + " experts, pool has " +
                        std::to_string(pools_[p].experts.size()));
    }
  }
  for (std::size_t p = 0; p < pools_.size(); ++p) pools_[p].state = std::move(states[p]);
}

template <typename T>
void MoELayer<T>::collect_parameters(const std::string& prefix,
                                     std::vector<NamedParam<T>>& out) const {
  auto push_ffn = [&](const std::string& name, ParamBucket bucket,
                      const FfnWeights<T>& ffn) {
    out.push_back({name + ".w_gate", bucket, ffn.w_gate});
    out.push_back({name + ".w_up", bucket, ffn.w_up});
    out.push_back({name + ".w_down", bucket, ffn.w_down});
  };
  if (generalist_) push_ffn(prefix + "generalist", ParamBucket::generalist, *generalist_);
  for (std::size_t p = 0; p < pools_.size(); ++p) {
    const std::string pool_name = prefix + "pool" + std::to_string(p);
    if (pools_[p].router.defined()) {
      out.push_back({pool_name + ".router", ParamBucket::router, pools_[p].router});
    }
    for (std::size_t e = 0; e < pools_[p].experts.size(); ++e) {
      push_ffn(pool_name + ".expert" + std::to_string(e), ParamBucket::expert,
               pools_[p].experts[e]);
    }
  }
}

#define MOELAB_INSTANTIATE_MOE(T)                                              \
  template class MoELayer<T>;                                                  \
  template std::pair<RouterAffinities<T>, RoutingOutcome> route_topk(          \
      const ad::Tensor<T>&, const ad::Tensor<T>&, const RouterState&,          \
      std::size_t);                                                            \
  template ad::Tensor<T> lb_loss_term(const ad::Tensor<T>&,                    \
                                      std::span<const double>);                \
  template ad::Tensor<T> z_loss_term(const ad::Tensor<T>&);

MOELAB_INSTANTIATE_MOE(float)
MOELAB_INSTANTIATE_MOE(double)

}  // namespace moelab
