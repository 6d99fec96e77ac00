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

#include "moelab/trainer.hpp"

#include <cmath>
#include <numbers>

#include "moelab/routing.hpp"

namespace moelab {

TrainConfig TrainConfig::desk_defaults() {
  TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.seq_len = 128;
  return cfg;
}

std::int64_t TrainConfig::total_steps() const {
  return tokens_per_step() > 0 ? total_tokens / tokens_per_step() : 0;
}

void TrainConfig::validate() const {
  if (batch_size < 1 || seq_len < 1) throw ConfigError("batch_size and seq_len must be positive");
  if (peak_lr <= 0) throw ConfigError("peak_lr must be positive");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (warmup_steps < 0) throw ConfigError("warmup_steps must be >= 0");
  if (end_lr_fraction < 0 || end_lr_fraction > 1) {
    throw ConfigError("end_lr_fraction must lie in [0, 1]");
  }
  if (precision_bits != 32 && precision_bits != 64) {
    throw ConfigError("precision_bits must be 32 or 64");
  }
  if (eval_interval < 0) throw ConfigError("eval_interval must be >= 0");
  if (total_steps() < std::max<std::int64_t>(warmup_steps, 1)) {
    throw ConfigError("total_tokens " + std::to_string(total_tokens) + " gives " +
                      std::to_string(total_steps()) + " steps, fewer than warmup " +
                      std::to_string(warmup_steps));
  }
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return {{"batch_size", cfg.batch_size},   {"seq_len", cfg.seq_len},
          {"peak_lr", cfg.peak_lr},         {"beta1", cfg.beta1},
          {"beta2", cfg.beta2},             {"adam_eps", cfg.adam_eps},
          {"warmup_steps", cfg.warmup_steps}, {"end_lr_fraction", cfg.end_lr_fraction},
          {"total_tokens", cfg.total_tokens}, {"seed", cfg.seed},
          {"precision_bits", cfg.precision_bits}, {"eval_interval", cfg.eval_interval}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig cfg) {
  if (!j.is_object()) throw ParseError("train config must be an object");
  for (const auto& item : j.items()) {
    const auto& key = item.key();
    const auto& v = item.value();
    try {
      if (key == "batch_size") cfg.batch_size = v.get<std::int64_t>();
      else if (key == "seq_len") cfg.seq_len = v.get<std::int64_t>();
      else if (key == "peak_lr") cfg.peak_lr = v.get<double>();
      else if (key == "beta1") cfg.beta1 = v.get<double>();
      else if (key == "beta2") cfg.beta2 = v.get<double>();
      else if (key == "adam_eps") cfg.adam_eps = v.get<double>();
      else if (key == "warmup_steps") cfg.warmup_steps = v.get<std::int64_t>();
      else if (key == "end_lr_fraction") cfg.end_lr_fraction = v.get<double>();
      else if (key == "total_tokens") cfg.total_tokens = v.get<std::int64_t>();
      else if (key == "seed") cfg.seed = v.get<std::uint64_t>();
      else if (key == "precision_bits") cfg.precision_bits = v.get<int>();
      else if (key == "eval_interval") cfg.eval_interval = v.get<std::int64_t>();
      else throw ParseError("unknown key '" + key + "' in train config");
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("train." + key + ": " + e.what());
    }
  }
  return cfg;
}

double total_loss(double ce, double lb, double z, const LossWeights& w) {
  return ce + w.lb * lb + w.z * z;
}

template <typename T>
ad::Tensor<T> total_loss(const ad::Tensor<T>& ce, const ad::Tensor<T>& lb,
                         const ad::Tensor<T>& z, const LossWeights& w) {
  auto loss = ce;
  if (w.lb != 0.0) loss = ad::add(loss, ad::scale(lb, static_cast<T>(w.lb)));
  if (w.z != 0.0) loss = ad::add(loss, ad::scale(z, static_cast<T>(w.z)));
  return loss;
}

double lr_at(std::int64_t step, const TrainConfig& cfg) {
  const std::int64_t total = cfg.total_steps();
  if (step < 0 || step > total) {
    throw std::out_of_range("lr_at: step " + std::to_string(step) + " outside [0, " +
                            std::to_string(total) + "]");
  }
  if (step < cfg.warmup_steps) {
    return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  const std::int64_t span = total - cfg.warmup_steps;
  const double progress =
      span > 0 ? static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(span)
               : 1.0;
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return cfg.peak_lr * (cfg.end_lr_fraction + (1.0 - cfg.end_lr_fraction) * cosine);
}

template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState& state,
               double lr, double beta1, double beta2, double eps) {
  if (grads.size() != params.size()) {
    throw DimensionError("adam_step: " + std::to_string(grads.size()) +
                         " gradients for " + std::to_string(params.size()) + " parameters");
  }
  if (state.m.empty() && state.t == 0) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("adam_step: optimizer state does not match parameter size");
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = static_cast<double>(grads[i]);
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] = static_cast<T>(static_cast<double>(params[i]) -
                               lr * m_hat / (std::sqrt(v_hat) + eps));
  }
}

template <typename T>
AdamOptimizer<T>::AdamOptimizer(std::vector<ad::Tensor<T>> params, double beta1,
                                double beta2, double eps)
    : params_(std::move(params)), states_(params_.size()),
      beta1_(beta1), beta2_(beta2), eps_(eps) {}

template <typename T>
void AdamOptimizer<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename T>
void AdamOptimizer<T>::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    // Parameters that took no part in the loss see a zero gradient.
    auto grad = p.mutable_grad();
    adam_step<T>(p.mutable_values(), grad, states_[i], lr, beta1_, beta2_, eps_);
  }
}

nlohmann::json to_json(const MetricsRecord& r) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : r.pools) {
    nlohmann::json pools = nlohmann::json::array();
    for (const auto& p : layer) {
      pools.push_back({{"raw_loads", p.raw_loads}, {"f", p.f}, {"P", p.P},
                       {"lb_loss", p.lb_loss}, {"z_loss", p.z_loss},
                       {"imbalance", p.imbalance}});
    }
    layers.push_back(std::move(pools));
  }
  nlohmann::json j = {{"schema", kMetricsSchema},
                      {"step", r.step},
                      {"lr", r.lr},
                      {"train_ce", r.train_ce},
                      {"lb_loss", r.lb_loss},
                      {"z_loss", r.z_loss},
                      {"total_loss", r.total_loss},
                      {"layer_imbalance", r.layer_imbalance},
                      {"dropped_fraction", r.dropped_fraction},
                      {"pools", std::move(layers)}};
  if (r.eval) {
    j["eval_macro_ce"] = r.eval->macro_ce;
    j["eval_domain_ce"] = r.eval->domain_ce;
  }
  if (r.error) j["error"] = *r.error;
  return j;
}

std::string to_ndjson_line(const MetricsRecord& r) { return to_json(r).dump(); }

template <typename T>
LossBreakdown<T> compute_losses(const TransformerLM<T>& model, const TokenBatch& batch,
                                const LossWeights& weights, ModelTrace* trace,
                                bool replay) {
  LossBreakdown<T> out;
  out.output = model.forward(batch.inputs, batch.batch, batch.seq, trace, replay);
  out.ce = ad::cross_entropy(out.output.logits, std::span<const std::int32_t>(batch.targets));
  out.lb = out.output.lb_loss;
  out.z = out.output.z_loss;
  out.total = total_loss(out.ce, out.lb, out.z, weights);
  return out;
}

namespace {

MetricsRecord make_record(std::int64_t step, double lr, double ce, double lb, double z,
                          double total,
                          const std::vector<std::vector<PoolStats>>& stats) {
  MetricsRecord r;
  r.step = step;
  r.lr = lr;
  r.train_ce = ce;
  r.lb_loss = lb;
  r.z_loss = z;
  r.total_loss = total;
  std::size_t dropped = 0, assignments = 0;
  for (const auto& layer : stats) {
    std::vector<PoolRecord> pools;
    double worst = 0.0;
    for (const auto& ps : layer) {
      PoolRecord pr;
      pr.raw_loads = ps.routing.raw_loads;
      pr.f = ps.routing.f;
      pr.P = ps.routing.P;
      pr.lb_loss = ps.lb_loss;
      pr.z_loss = ps.z_loss;
      pr.imbalance = load_imbalance(pr.raw_loads);
      worst = std::max(worst, pr.imbalance);
      dropped += ps.dropped;
      assignments += ps.assignments;
      pools.push_back(std::move(pr));
    }
    if (!layer.empty()) r.layer_imbalance.push_back(worst);
    r.pools.push_back(std::move(pools));
  }
  r.dropped_fraction = assignments > 0 ? static_cast<double>(dropped) /
                                             static_cast<double>(assignments)
                                       : 0.0;
  return r;
}

std::string locate_non_finite(double ce, const std::vector<std::vector<PoolStats>>& stats) {
  for (std::size_t l = 0; l < stats.size(); ++l) {
    for (std::size_t p = 0; p < stats[l].size(); ++p) {
      if (!std::isfinite(stats[l][p].lb_loss)) {
        return "layer " + std::to_string(l) + " pool " + std::to_string(p) +
               " component lb_loss";
      }
      if (!std::isfinite(stats[l][p].z_loss)) {
        return "layer " + std::to_string(l) + " pool " + std::to_string(p) +
               " component z_loss";
      }
    }
  }
  if (!std::isfinite(ce)) return "component ce";
  return "component total_loss";
}

}  // namespace

template <typename T>
TrainResult train_run(TransformerLM<T>& model, const TrainConfig& cfg,
                      const TrainHooks<T>& hooks) {
  cfg.validate();
  if (!hooks.next_batch) throw ContractError("train_run needs a batch source");
  const auto weights = LossWeights::from(model.arch().layer);
  std::vector<ad::Tensor<T>> params;
  for (const auto& p : model.parameters()) params.push_back(p.tensor);
  AdamOptimizer<T> adam(params, cfg.beta1, cfg.beta2, cfg.adam_eps);

  TrainResult result;
  const std::int64_t total = cfg.total_steps();
  for (std::int64_t step = 1; step <= total; ++step) {
    const TokenBatch batch = hooks.next_batch(step);
    adam.zero_grad();
    auto losses = compute_losses(model, batch, weights);
    const double lr = lr_at(step, cfg);
    auto record = make_record(step, lr, static_cast<double>(losses.ce.item()),
                              static_cast<double>(losses.lb.item()),
                              static_cast<double>(losses.z.item()),
                              static_cast<double>(losses.total.item()),
                              losses.output.stats);
    if (!std::isfinite(record.total_loss)) {
      const std::string where = locate_non_finite(record.train_ce, losses.output.stats);
      record.error = "non-finite loss at step " + std::to_string(step) + ": " + where;
      if (hooks.on_record) hooks.on_record(record);
      result.records.push_back(record);
      throw NonFiniteLossError(*record.error, record);
    }
    ad::backward(losses.total);
    adam.step(lr);
    model.update_loss_free_bias(losses.output.stats);

    const bool eval_now = hooks.evaluate &&
                          (step == total ||
                           (cfg.eval_interval > 0 && step % cfg.eval_interval == 0));
    if (eval_now) record.eval = hooks.evaluate(model);
    if (hooks.on_record) hooks.on_record(record);
    result.records.push_back(std::move(record));
    result.steps = step;
  }
  return result;
}

#define MOELAB_INSTANTIATE_TRAINER(T)                                                 \
  template ad::Tensor<T> total_loss(const ad::Tensor<T>&, const ad::Tensor<T>&,       \
                                    const ad::Tensor<T>&, const LossWeights&);        \
  template void adam_step(std::span<T>, std::span<const T>, AdamState&, double,       \
                          double, double, double);                                    \
  template class AdamOptimizer<T>;                                                    \
  template LossBreakdown<T> compute_losses(const TransformerLM<T>&, const TokenBatch&, \
                                           const LossWeights&, ModelTrace*, bool);    \
  template TrainResult train_run(TransformerLM<T>&, const TrainConfig&,               \
                                 const TrainHooks<T>&);

MOELAB_INSTANTIATE_TRAINER(float)
MOELAB_INSTANTIATE_TRAINER(double)

}  // namespace moelab
