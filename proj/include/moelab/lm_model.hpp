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

// Causal decoder-only transformer whose every FFN is a MoELayer. Pre-norm
// residual blocks with RMS norms, learned absolute positions and an untied
// output projection.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "moelab/arch_config.hpp"
#include "moelab/moe_layer.hpp"

namespace moelab {

template <typename T>
struct TransformerBlock {
  ad::Tensor<T> attn_norm;  // (d)
  ad::Tensor<T> wq, wk, wv, wo;  // (d, d)
  ad::Tensor<T> ffn_norm;  // (d)
  MoELayer<T> moe;
};

struct ModelTrace {
  std::vector<LayerTrace> layers;
};

template <typename T>
struct LMOutput {
  ad::Tensor<T> logits;   // (batch * seq, vocab)
  ad::Tensor<T> lb_loss;  // raw, summed over layers and pools
  ad::Tensor<T> z_loss;   // raw, summed over layers and pools
  std::vector<std::vector<PoolStats>> stats;  // [layer][pool]
};

template <typename T>
class TransformerLM {
 public:
  // Deterministic from `seed`. Needs arch.max_seq_len > 0.
  static TransformerLM build(const ModelArchSpec& arch, std::uint64_t seed);

  // `ids` holds batch sequences of length seq, row-major.
  // With `trace` set and `replay` false the routing of every layer is
  // recorded; with `replay` true it is reused instead of recomputed.
  LMOutput<T> forward(std::span<const std::int32_t> ids, std::size_t batch,
                      std::size_t seq, ModelTrace* trace = nullptr,
                      bool replay = false) const;

  // Every trainable tensor in declaration order.
  std::vector<NamedParam<T>> parameters() const;

  // Parameter tally over the instantiated weights.
  ParamCount tally() const;

  void update_loss_free_bias(const std::vector<std::vector<PoolStats>>& stats);

  std::vector<RouterState> router_states() const;  // layer-major, pool-minor
  void set_router_states(const std::vector<RouterState>& states);

  const ModelArchSpec& arch() const { return arch_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<TransformerBlock<T>>& blocks() const { return blocks_; }

 private:
  TransformerLM() = default;

  ModelArchSpec arch_;
  std::uint64_t seed_ = 0;
  ad::Tensor<T> token_embedding_;     // (V, d)
  ad::Tensor<T> position_embedding_;  // (max_seq_len, d)
  std::vector<TransformerBlock<T>> blocks_;
  ad::Tensor<T> final_norm_;  // (d)
  ad::Tensor<T> output_;      // (d, V)
};

}  // namespace moelab
