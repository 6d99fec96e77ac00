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

#include "moelab/lm_model.hpp"

#include <cmath>

namespace moelab {

template <typename T>
TransformerLM<T> TransformerLM<T>::build(const ModelArchSpec& arch,
                                         std::uint64_t seed) {
  arch.validate();
  if (arch.max_seq_len < 1) {
    throw ConfigError("arch '" + arch.name + "' needs max_seq_len > 0 to build a model");
  }
  TransformerLM model;
  model.arch_ = arch;
  model.seed_ = seed;
  ParamInit<T> init(seed);
  const auto d = static_cast<std::size_t>(arch.model_dim);
  const auto vocab = static_cast<std::size_t>(arch.vocab);
  const double stddev = 0.02;
  const double out_stddev = stddev / std::sqrt(2.0 * static_cast<double>(arch.layers));
  const InitScales scales{stddev, out_stddev};

  model.token_embedding_ = init.normal({vocab, d}, stddev);
  model.position_embedding_ =
      init.normal({static_cast<std::size_t>(arch.max_seq_len), d}, stddev);
  for (std::int64_t l = 0; l < arch.layers; ++l) {
    auto attn_norm = init.ones({d});
    auto wq = init.normal({d, d}, stddev);
    auto wk = init.normal({d, d}, stddev);
    auto wv = init.normal({d, d}, stddev);
    auto wo = init.normal({d, d}, out_stddev);
    auto ffn_norm = init.ones({d});
    MoELayer<T> moe(arch.layer, d, static_cast<std::size_t>(arch.ffn_dim()), init,
                    scales);
    model.blocks_.push_back(TransformerBlock<T>{attn_norm, wq, wk, wv, wo, ffn_norm,
                                                std::move(moe)});
  }
  model.final_norm_ = init.ones({d});
  model.output_ = init.normal({d, vocab}, stddev);
  return model;
}

template <typename T>
LMOutput<T> TransformerLM<T>::forward(std::span<const std::int32_t> ids,
                                      std::size_t batch, std::size_t seq,
                                      ModelTrace* trace, bool replay) const {
  if (ids.size() != batch * seq) {
    throw DimensionError("forward: " + std::to_string(ids.size()) + " ids for batch " +
                         std::to_string(batch) + " x seq " + std::to_string(seq));
  }
  if (seq == 0 || seq > static_cast<std::size_t>(arch_.max_seq_len)) {
    throw ConfigError("sequence length " + std::to_string(seq) + " outside [1, " +
                      std::to_string(arch_.max_seq_len) + "]");
  }
  if (replay && (!trace || trace->layers.size() != blocks_.size())) {
    throw ConfigError("routing replay needs a trace with one entry per layer");
  }
  if (trace && !replay) trace->layers.assign(blocks_.size(), LayerTrace{});

  std::vector<std::int32_t> positions(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    positions[i] = static_cast<std::int32_t>(i % seq);
  }
  auto x = ad::add(ad::embedding(token_embedding_, ids),
                   ad::embedding(position_embedding_, std::span<const std::int32_t>(positions)));

  LMOutput<T> out;
  ad::Tensor<T> lb_total, z_total;
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const auto& blk = blocks_[l];
    auto a = ad::rms_norm(x, blk.attn_norm);
    auto att = ad::causal_attention(ad::matmul(a, blk.wq), ad::matmul(a, blk.wk),
                                    ad::matmul(a, blk.wv), batch, seq,
                                    static_cast<std::size_t>(arch_.heads));
    x = ad::add(x, ad::matmul(att, blk.wo));

    RoutingControl control;
    if (trace) control = RoutingControl{&trace->layers[l], replay};
    auto moe = blk.moe.forward(ad::rms_norm(x, blk.ffn_norm), control);
    x = ad::add(x, moe.hidden);
    lb_total = lb_total.defined() ? ad::add(lb_total, moe.lb_loss) : moe.lb_loss;
    z_total = z_total.defined() ? ad::add(z_total, moe.z_loss) : moe.z_loss;
    out.stats.push_back(std::move(moe.stats));
  }
  out.logits = ad::matmul(ad::rms_norm(x, final_norm_), output_);
  out.lb_loss = lb_total;
  out.z_loss = z_total;
  return out;
}

template <typename T>
std::vector<NamedParam<T>> TransformerLM<T>::parameters() const {
  std::vector<NamedParam<T>> out;
  out.push_back({"token_embedding", ParamBucket::embedding, token_embedding_});
  out.push_back({"position_embedding", ParamBucket::embedding, position_embedding_});
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const auto& blk = blocks_[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    out.push_back({p + "attn_norm", ParamBucket::shared, blk.attn_norm});
    out.push_back({p + "wq", ParamBucket::shared, blk.wq});
    out.push_back({p + "wk", ParamBucket::shared, blk.wk});
    out.push_back({p + "wv", ParamBucket::shared, blk.wv});
    out.push_back({p + "wo", ParamBucket::shared, blk.wo});
    out.push_back({p + "ffn_norm", ParamBucket::shared, blk.ffn_norm});
    blk.moe.collect_parameters(p + "moe.", out);
  }
  out.push_back({"final_norm", ParamBucket::shared, final_norm_});
  out.push_back({"output", ParamBucket::embedding, output_});
  return out;
}

template <typename T>
ParamCount TransformerLM<T>::tally() const {
  ParamCount pc;
  std::int64_t inactive = 0;
  for (const auto& param : parameters()) {
    const auto size = static_cast<std::int64_t>(param.tensor.size());
    switch (param.bucket) {
      case ParamBucket::embedding: pc.embedding_params += size; break;
      case ParamBucket::router: pc.router_params += size; break;
      default: pc.total_non_embedding += size; break;
    }
  }
  for (const auto& blk : blocks_) {
    for (const auto& pool : blk.moe.pools()) {
      const auto per_expert = static_cast<std::int64_t>(pool.experts.front().param_count());
      inactive += (pool.spec.total_count - pool.spec.active_count) * per_expert;
    }
  }
  pc.active_non_embedding = pc.total_non_embedding - inactive;
  return pc;
}

template <typename T>
void TransformerLM<T>::update_loss_free_bias(
    const std::vector<std::vector<PoolStats>>& stats) {
  if (stats.size() != blocks_.size()) {
    throw ConfigError("bias update with stats for " + std::to_string(stats.size()) +
                      " layers, model has " + std::to_string(blocks_.size()));
  }
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    blocks_[l].moe.update_loss_free_bias(stats[l]);
  }
}

template <typename T>
std::vector<RouterState> TransformerLM<T>::router_states() const {
  std::vector<RouterState> out;
  for (const auto& blk : blocks_) {
    for (auto& s : blk.moe.router_states()) out.push_back(std::move(s));
  }
  return out;
}

template <typename T>
void TransformerLM<T>::set_router_states(const std::vector<RouterState>& states) {
  std::size_t at = 0;
  for (auto& blk : blocks_) {
    const std::size_t pools = blk.moe.pools().size();
    if (at + pools > states.size()) {
      throw ConfigError("too few router states for the model's pools");
    }
    blk.moe.set_router_states(
        std::vector<RouterState>(states.begin() + static_cast<std::ptrdiff_t>(at),
                                 states.begin() + static_cast<std::ptrdiff_t>(at + pools)));
    at += pools;
  }
  if (at != states.size()) throw ConfigError("too many router states for the model");
}

template class TransformerLM<float>;
template class TransformerLM<double>;

}  // namespace moelab
