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

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "moelab/corpus.hpp"
#include "moelab/errors.hpp"
#include "moelab/trainer.hpp"

namespace moelab {
namespace {

TrainConfig small_config(std::int64_t steps, std::size_t batch = 4, std::size_t seq = 8) {
  TrainConfig cfg;
  cfg.batch_size = static_cast<std::int64_t>(batch);
  cfg.seq_len = static_cast<std::int64_t>(seq);
  cfg.peak_lr = 3e-3;
  cfg.warmup_steps = 3;
  cfg.total_tokens = steps * cfg.tokens_per_step();
  return cfg;
}

ModelArchSpec tiny_moe(std::int64_t n, std::int64_t den) {
  auto arch = *find_architecture("tiny");
  arch.layer = homogeneous_layer(n, Granularity(1, den));
  return arch;
}

template <typename T>
TrainHooks<T> corpus_hooks(const SyntheticCorpus& corpus, const TrainConfig& cfg) {
  TrainHooks<T> hooks;
  hooks.next_batch = [&corpus, cfg](std::int64_t step) {
    return corpus.train_batch(step, static_cast<std::size_t>(cfg.batch_size),
                              static_cast<std::size_t>(cfg.seq_len));
  };
  return hooks;
}

double mean_imbalance(const std::vector<MetricsRecord>& records, std::size_t begin,
                      std::size_t end) {
  double sum = 0;
  std::size_t count = 0;
  for (std::size_t i = begin; i < end; ++i) {
    for (double v : records[i].layer_imbalance) {
      sum += v;
      ++count;
    }
  }
  return sum / static_cast<double>(count);
}

TEST(TotalLoss, Composition) {
  EXPECT_DOUBLE_EQ(total_loss(2.0, 1.0, 4.0, {0.0, 0.0}), 2.0);
  EXPECT_NEAR(total_loss(2.0, 1.0, 4.0, {1e-2, 1e-3}), 2.014, 1e-15);
  const auto w = LossWeights::from(MoELayerSpec{});
  EXPECT_EQ(w.lb, 1e-2);
  EXPECT_EQ(w.z, 1e-3);
}

TEST(LearningRate, ScheduleEndpoints) {
  TrainConfig cfg;
  cfg.batch_size = 1;
  cfg.seq_len = 1;
  cfg.peak_lr = 4e-4;
  cfg.warmup_steps = 50;
  cfg.total_tokens = 1050;
  ASSERT_EQ(cfg.total_steps(), 1050);
  EXPECT_EQ(lr_at(0, cfg), 0.0);
  EXPECT_NEAR(lr_at(25, cfg), 2e-4, 1e-18);
  EXPECT_NEAR(lr_at(50, cfg), 4e-4, 1e-18);
  EXPECT_NEAR(lr_at(1050, cfg), 0.1 * 4e-4, 1e-18);
  // Cosine midpoint: peak * (0.1 + 0.9 * (1 + cos(pi/2)) / 2) = 0.55 * peak.
  EXPECT_NEAR(lr_at(550, cfg), 0.55 * 4e-4, 1e-16);
  EXPECT_THROW(lr_at(-1, cfg), std::out_of_range);
  EXPECT_THROW(lr_at(1051, cfg), std::out_of_range);
}

TEST(LearningRate, ContinuousAndMonotoneAroundWarmup) {
  TrainConfig cfg;
  cfg.batch_size = 1;
  cfg.seq_len = 1;
  cfg.peak_lr = 1.0;
  cfg.warmup_steps = 50;
  cfg.total_tokens = 400;
  EXPECT_NEAR(lr_at(49, cfg), 0.98, 1e-12);
  EXPECT_NEAR(lr_at(51, cfg), 0.1 + 0.9 * (1 + std::cos(std::numbers::pi / 350.0)) / 2, 1e-12);
  EXPECT_LT(1.0 - lr_at(51, cfg), 1e-4);
  for (std::int64_t s = 1; s <= 400; ++s) {
    if (s <= 50) {
      EXPECT_GT(lr_at(s, cfg), lr_at(s - 1, cfg));
    } else {
      EXPECT_LT(lr_at(s, cfg), lr_at(s - 1, cfg));
    }
  }
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<double> p{1.0, -2.0};
  const std::vector<double> g{1.0, -3.0};
  AdamState state;
  adam_step<double>(p, g, state, 1e-3, 0.9, 0.95);
  // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
  EXPECT_NEAR(p[0], 1.0 - 1e-3 / (1.0 + 1e-8), 1e-15);
  EXPECT_NEAR(p[1], -2.0 + 1e-3 * 3.0 / (3.0 + 1e-8), 1e-15);
  EXPECT_EQ(state.t, 1);

  // Second step by hand.
  const std::vector<double> g2{0.5, 0.0};
  adam_step<double>(p, g2, state, 1e-3, 0.9, 0.95);
  const double m = (0.9 * 0.1 * 1.0 + 0.1 * 0.5) / (1 - 0.81);
  const double v = (0.95 * 0.05 * 1.0 + 0.05 * 0.25) / (1 - 0.9025);
  EXPECT_NEAR(p[0], 1.0 - 1e-3 / (1.0 + 1e-8) - 1e-3 * m / (std::sqrt(v) + 1e-8), 1e-15);
}

TEST(Adam, ZeroGradientsLeaveParamsUnchanged) {
  std::vector<float> p{0.25f, -1.5f, 3.0f};
  const auto before = p;
  const std::vector<float> g(3, 0.0f);
  AdamState state;
  for (int i = 0; i < 5; ++i) adam_step<float>(p, g, state, 1e-2, 0.9, 0.95);
  EXPECT_EQ(p, before);
}

TEST(Adam, ShapeMismatchThrows) {
  std::vector<double> p(3, 0.0);
  const std::vector<double> g(2, 0.0);
  AdamState state;
  EXPECT_THROW(adam_step<double>(p, g, state, 1e-3, 0.9, 0.95), DimensionError);
  AdamState wrong;
  wrong.m.assign(4, 0.0);
  wrong.v.assign(4, 0.0);
  wrong.t = 1;
  const std::vector<double> g3(3, 0.0);
  EXPECT_THROW(adam_step<double>(p, g3, wrong, 1e-3, 0.9, 0.95), DimensionError);
}

TEST(TrainConfig, JsonRoundTripAndErrors) {
  auto cfg = small_config(10);
  cfg.seed = 9;
  cfg.precision_bits = 64;
  const auto back = train_config_from_json(to_json(cfg));
  EXPECT_EQ(to_json(back), to_json(cfg));
  EXPECT_THROW(train_config_from_json(nlohmann::json{{"bogus", 1}}), ParseError);
  auto bad = cfg;
  bad.total_tokens = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  const auto desk = TrainConfig::desk_defaults();
  EXPECT_EQ(desk.batch_size, 32);
  EXPECT_EQ(desk.seq_len, 128);
  EXPECT_EQ(desk.warmup_steps, 50);
  EXPECT_EQ(desk.end_lr_fraction, 0.1);
}

TEST(TrainRun, SmokeRunProducesOneRecordPerStep) {
  CorpusSpec cs;
  cs.vocab = 64;
  const SyntheticCorpus corpus(cs);
  const auto cfg = small_config(10);
  auto model = TransformerLM<float>::build(tiny_moe(4, 1), 1);
  auto hooks = corpus_hooks<float>(corpus, cfg);
  std::vector<std::string> streamed;
  hooks.on_record = [&](const MetricsRecord& r) { streamed.push_back(to_ndjson_line(r)); };
  const auto result = train_run(model, cfg, hooks);
  ASSERT_EQ(result.records.size(), 10u);
  EXPECT_EQ(streamed.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) {
    const auto& r = result.records[i];
    EXPECT_EQ(r.step, static_cast<std::int64_t>(i + 1));
    EXPECT_DOUBLE_EQ(r.lr, lr_at(r.step, cfg));
    EXPECT_TRUE(std::isfinite(r.total_loss));
    EXPECT_EQ(r.dropped_fraction, 0.0);
    ASSERT_EQ(r.layer_imbalance.size(), 2u);
    for (double v : r.layer_imbalance) EXPECT_GE(v, 1.0);
    EXPECT_NEAR(r.total_loss, total_loss(r.train_ce, r.lb_loss, r.z_loss, {1e-2, 1e-3}), 1e-5);
    const auto j = nlohmann::json::parse(streamed[i]);
    EXPECT_EQ(j.at("schema"), kMetricsSchema);
    EXPECT_EQ(j.at("step"), r.step);
  }
}

TEST(TrainRun, CapacityRunReportsDrops) {
  CorpusSpec cs;
  const SyntheticCorpus corpus(cs);
  const auto cfg = small_config(3);
  auto arch = tiny_moe(8, 1);
  arch.layer.pools[0].active_count = 1;
  arch.layer.routing = RoutingPolicy::capacity(Rational(1, 2));
  auto model = TransformerLM<float>::build(arch, 2);
  const auto result = train_run(model, cfg, corpus_hooks<float>(corpus, cfg));
  for (const auto& r : result.records) {
    EXPECT_GT(r.dropped_fraction, 0.0);  // half capacity must drop
    EXPECT_LE(r.dropped_fraction, 1.0);
  }
}

TEST(TrainRun, MetricsStreamIsDeterministic) {
  CorpusSpec cs;
  const SyntheticCorpus corpus(cs);
  auto cfg = small_config(6);
  cfg.eval_interval = 3;
  auto run = [&] {
    auto model = TransformerLM<float>::build(tiny_moe(8, 2), 5);
    auto hooks = corpus_hooks<float>(corpus, cfg);
    hooks.evaluate = [&](const TransformerLM<float>& m) { return macro_avg_ce(m, corpus, 8); };
    std::string out;
    for (const auto& r : train_run(model, cfg, hooks).records) out += to_ndjson_line(r) + "\n";
    return out;
  };
  const auto a = run();
  EXPECT_EQ(a, run());
  EXPECT_NE(a.find("eval_macro_ce"), std::string::npos);
}

// d total = d ce + a_lb * d lb + a_z * d z, each component differentiated on
// its own with the routing replayed.
TEST(TrainRun, TotalLossGradientDecomposes) {
  CorpusSpec cs;
  const SyntheticCorpus corpus(cs);
  auto model = TransformerLM<double>::build(tiny_moe(8, 2), 6);
  const auto batch = corpus.train_batch(0, 2, 8);
  const LossWeights w{0.3, 0.05};
  auto params = model.parameters();
  auto grads_of = [&](auto pick) {
    for (auto& p : params) p.tensor.zero_grad();
    ModelTrace trace;
    compute_losses(model, batch, w, &trace, false);
    auto losses = compute_losses(model, batch, w, &trace, true);
    ad::backward(pick(losses));
    std::vector<std::vector<double>> out;
    for (auto& p : params) {
      const auto g = p.tensor.mutable_grad();
      out.emplace_back(g.begin(), g.end());
    }
    return out;
  };
  const auto total = grads_of([](auto& l) { return l.total; });
  const auto ce = grads_of([](auto& l) { return l.ce; });
  const auto lb = grads_of([](auto& l) { return l.lb; });
  const auto z = grads_of([](auto& l) { return l.z; });
  double worst = 0, scale = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (std::size_t k = 0; k < total[i].size(); ++k) {
      const double combined = ce[i][k] + w.lb * lb[i][k] + w.z * z[i][k];
      worst = std::max(worst, std::abs(total[i][k] - combined));
      scale = std::max(scale, std::abs(total[i][k]));
    }
  }
  EXPECT_LE(worst, 1e-12 * std::max(scale, 1.0));
  EXPECT_GT(scale, 0.0);
}

TEST(TrainRun, BiasStepDoesNotTouchFirstLoss) {
  CorpusSpec cs;
  const SyntheticCorpus corpus(cs);
  const auto cfg = small_config(4);
  auto run = [&](double gamma) {
    auto arch = tiny_moe(8, 2);
    arch.layer.bias_step = gamma;
    auto model = TransformerLM<double>::build(arch, 7);
    return train_run(model, cfg, corpus_hooks<double>(corpus, cfg)).records;
  };
  const auto off = run(0.0);
  const auto on = run(1e-2);
  EXPECT_EQ(off[0].total_loss, on[0].total_loss);
  EXPECT_EQ(off[0].train_ce, on[0].train_ce);
  EXPECT_EQ(off[0].lb_loss, on[0].lb_loss);
  EXPECT_NE(off[1].lb_loss, on[1].lb_loss);  // the bias moved routing from step 2 on
}

TEST(TrainRun, NonFiniteLossAbortsWithDiagnostic) {
  CorpusSpec cs;
  const SyntheticCorpus corpus(cs);
  const auto cfg = small_config(4);
  auto model = TransformerLM<double>::build(tiny_moe(4, 1), 8);
  for (auto& p : model.parameters()) {
    if (p.name == "layer1.moe.pool0.router") {
      auto t = p.tensor;
      t.mutable_values()[0] = std::numeric_limits<double>::quiet_NaN();
    }
  }
  auto hooks = corpus_hooks<double>(corpus, cfg);
  std::vector<MetricsRecord> seen;
  hooks.on_record = [&](const MetricsRecord& r) { seen.push_back(r); };
  try {
    train_run(model, cfg, hooks);
    FAIL() << "expected NonFiniteLossError";
  } catch (const NonFiniteLossError& e) {
    ASSERT_TRUE(e.record().error.has_value());
    EXPECT_EQ(e.record().step, 1);
    EXPECT_NE(e.record().error->find("layer 1"), std::string::npos) << *e.record().error;
    ASSERT_FALSE(seen.empty());
    EXPECT_TRUE(seen.back().error.has_value());
  }
}

// Directional checks on a skewed corpus: routing imbalance falls under the
// balancing loss, and held-out CE drops well below its initial value.
TEST(TrainRun, SkewedCorpusBalancesAndLearns) {
  CorpusSpec cs;
  cs.vocab = 64;
  cs.skew = 1.5;
  cs.seed = 7;
  const SyntheticCorpus corpus(cs);
  auto cfg = small_config(300, 16, 32);
  cfg.warmup_steps = 20;
  cfg.seed = 1;
  auto arch = tiny_moe(8, 2);  // s = 4
  arch.layer.lb_weight = 1e-2;
  auto model = TransformerLM<float>::build(arch, 1);
  const double initial = macro_avg_ce(model, corpus, 32).macro_ce;
  auto hooks = corpus_hooks<float>(corpus, cfg);
  hooks.evaluate = [&](const TransformerLM<float>& m) { return macro_avg_ce(m, corpus, 32); };
  const auto records = train_run(model, cfg, hooks).records;
  ASSERT_EQ(records.size(), 300u);
  const std::size_t window = records.size() / 5;
  const double first = mean_imbalance(records, 0, window);
  const double last = mean_imbalance(records, records.size() - window, records.size());
  EXPECT_LT(last, first);
  ASSERT_TRUE(records.back().eval.has_value());
  EXPECT_LE(records.back().eval->macro_ce, 0.7 * initial);
}

}  // namespace
}  // namespace moelab
