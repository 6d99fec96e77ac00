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

// Training loop: cross entropy plus weighted auxiliary losses, Adam, linear
// warmup into cosine decay, loss-free bias updates after each optimizer
// step, and one metrics record per step.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "moelab/lm_model.hpp"

namespace moelab {

struct TrainConfig {
  std::int64_t batch_size = 512;
  std::int64_t seq_len = 2048;
  double peak_lr = 4e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  std::int64_t warmup_steps = 50;
  double end_lr_fraction = 0.1;
  std::int64_t total_tokens = 0;
  std::uint64_t seed = 0;
  int precision_bits = 32;          // 32 or 64
  std::int64_t eval_interval = 0;   // 0: evaluate at the final step only

  // Desk-scale shape: 32 x 128 batches, same schedule constants.
  static TrainConfig desk_defaults();

  std::int64_t tokens_per_step() const { return batch_size * seq_len; }
  // total_tokens / tokens_per_step, rounded down.
  std::int64_t total_steps() const;
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

struct LossWeights {
  double lb = 0.0;  // alpha_LB
  double z = 0.0;   // alpha_RZ

  static LossWeights from(const MoELayerSpec& spec) {
    return {spec.lb_weight, spec.z_weight};
  }
};

// L_CE + alpha_LB * L_LB + alpha_RZ * L_RZ
double total_loss(double ce, double lb, double z, const LossWeights& w);
template <typename T>
ad::Tensor<T> total_loss(const ad::Tensor<T>& ce, const ad::Tensor<T>& lb,
                         const ad::Tensor<T>& z, const LossWeights& w);

// Linear warmup from 0 to peak over warmup_steps, then cosine from peak to
// end_lr_fraction * peak at total_steps. Throws std::out_of_range outside
// [0, total_steps].
double lr_at(std::int64_t step, const TrainConfig& cfg);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t t = 0;
};

// One bias-corrected Adam update of `params` in place.
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState& state,
               double lr, double beta1, double beta2, double eps = 1e-8);

// Adam over a fixed list of tensors, one state per tensor.
template <typename T>
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<ad::Tensor<T>> params, double beta1, double beta2,
                double eps);
  void zero_grad();
  void step(double lr);
  std::int64_t steps_taken() const { return states_.empty() ? 0 : states_.front().t; }

 private:
  std::vector<ad::Tensor<T>> params_;
  std::vector<AdamState> states_;
  double beta1_, beta2_, eps_;
};

struct PoolRecord {
  std::vector<std::int64_t> raw_loads;
  std::vector<double> f;
  std::vector<double> P;
  double lb_loss = 0.0;
  double z_loss = 0.0;
  double imbalance = 1.0;
};

struct EvalResult {
  double macro_ce = 0.0;
  std::vector<double> domain_ce;
};

struct MetricsRecord {
  std::int64_t step = 0;
  double lr = 0.0;
  double train_ce = 0.0;
  double lb_loss = 0.0;  // raw, summed over layers and pools
  double z_loss = 0.0;   // raw, summed over layers and pools
  double total_loss = 0.0;
  std::vector<double> layer_imbalance;  // max/mean expert load, worst pool
  double dropped_fraction = 0.0;
  std::vector<std::vector<PoolRecord>> pools;  // [layer][pool]
  std::optional<EvalResult> eval;
  std::optional<std::string> error;  // set on the diagnostic record of an abort
};

inline constexpr const char* kMetricsSchema = "moelab.metrics/1";

nlohmann::json to_json(const MetricsRecord& r);
// One line, no trailing newline.
std::string to_ndjson_line(const MetricsRecord& r);

struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<std::int32_t> inputs;   // batch * seq
  std::vector<std::int32_t> targets;  // batch * seq, inputs shifted by one
};

// Thrown after the diagnostic record was emitted.
class NonFiniteLossError : public std::runtime_error {
 public:
  NonFiniteLossError(const std::string& what, MetricsRecord record)
      : std::runtime_error(what), record_(std::move(record)) {}
  const MetricsRecord& record() const { return record_; }

 private:
  MetricsRecord record_;
};

template <typename T>
struct TrainHooks {
  std::function<TokenBatch(std::int64_t step)> next_batch;
  std::function<EvalResult(const TransformerLM<T>&)> evaluate;  // optional
  std::function<void(const MetricsRecord&)> on_record;          // optional
};

struct TrainResult {
  std::vector<MetricsRecord> records;
  std::int64_t steps = 0;
};

// Runs cfg.total_steps() optimizer steps. Update number s (1-based) uses
// lr_at(s, cfg).
template <typename T>
TrainResult train_run(TransformerLM<T>& model, const TrainConfig& cfg,
                      const TrainHooks<T>& hooks);

// Cross entropy, auxiliary losses and their weighted sum for one batch,
// without touching the model.
template <typename T>
struct LossBreakdown {
  ad::Tensor<T> ce, lb, z, total;
  LMOutput<T> output;
};

template <typename T>
LossBreakdown<T> compute_losses(const TransformerLM<T>& model, const TokenBatch& batch,
                                const LossWeights& weights, ModelTrace* trace = nullptr,
                                bool replay = false);

}  // namespace moelab
