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

#include <algorithm>
#include <set>

#include "moelab/arch_config.hpp"
#include "moelab/errors.hpp"
#include "published_tables.hpp"

namespace moelab {
namespace {

using testing::matches_displayed;
using testing::non_embedding_oracle;

ModelArchSpec arch_named(const std::string& name) {
  auto a = find_architecture(name);
  EXPECT_TRUE(a.has_value()) << name;
  return *a;
}

TEST(Rational, ArithmeticIsExact) {
  EXPECT_EQ(Rational(1, 2) + Rational(1, 4), Rational(3, 4));
  EXPECT_EQ(Rational(2, 4), Rational(1, 2));
  EXPECT_EQ(Rational(1, 8) + Rational(7) * Rational(1, 8), Rational(1));
  EXPECT_EQ(Rational::parse("7/8"), Rational(7, 8));
  EXPECT_EQ(Rational::parse("0.5"), Rational(1, 2));
  EXPECT_EQ(Rational::parse("3"), Rational(3));
  EXPECT_EQ(Rational(7, 8).str(), "7/8");
  EXPECT_THROW(Rational::parse("1/0"), ParseError);
  EXPECT_EQ(Rational::parse("-1.5"), Rational(-3, 2));
  EXPECT_THROW(Rational::parse("abc"), ParseError);
}

TEST(Granularity, PowerOfTwoDenominatorsOnly) {
  EXPECT_NO_THROW(Granularity(1, 64));
  EXPECT_THROW(Granularity(1, 128), ConfigError);
  EXPECT_THROW(Granularity(1, 3), ConfigError);
  EXPECT_THROW(Granularity(3, 2), ConfigError);
  EXPECT_THROW(Granularity(0, 1), ConfigError);
  EXPECT_EQ(Granularity::parse("1/8").value(), Rational(1, 8));
}

TEST(FlopMatchedActiveCount, ReciprocalOfGranularity) {
  EXPECT_EQ(flop_matched_active_count(Granularity(1, 1)), 1);
  EXPECT_EQ(flop_matched_active_count(Granularity(1, 2)), 2);
  EXPECT_EQ(flop_matched_active_count(Granularity(1, 64)), 64);
  EXPECT_THROW(flop_matched_active_count(Granularity(3, 4)), FlopMatchError);
}

TEST(ActivationSparsity, Examples) {
  EXPECT_EQ(activation_sparsity(homogeneous_layer(64, Granularity(1, 2))), Rational(32));
  MoELayerSpec het;
  het.pools = {{4, Granularity(1, 2), 1}, {8, Granularity(1, 4), 2}};
  EXPECT_EQ(activation_sparsity(het), Rational(4));
  MoELayerSpec gen = homogeneous_layer(16, Granularity(1, 4));
  gen.generalist = Rational(1, 2);
  EXPECT_EQ(activation_sparsity(gen), Rational(9, 2));
}

TEST(ValidateFlopMatch, Examples) {
  MoELayerSpec a;
  a.pools = {{4, Granularity(1, 2), 2}};
  EXPECT_TRUE(validate_flop_match(a).ok);

  MoELayerSpec b;
  b.generalist = Rational(1, 8);
  b.pools = {{16, Granularity(1, 8), 7}};
  EXPECT_TRUE(validate_flop_match(b).ok);

  MoELayerSpec c;
  c.pools = {{4, Granularity(1, 2), 3}};
  const auto report = validate_flop_match(c);
  EXPECT_FALSE(report.ok);
  EXPECT_EQ(report.active_sum, Rational(3, 2));
  EXPECT_NE(report.message.find("3/2"), std::string::npos) << report.message;

  MoELayerSpec d;
  d.pools = {{1, Granularity(1, 2), 2}};
  EXPECT_FALSE(validate_flop_match(d).ok);
}

TEST(MoELayerSpec, DenseGranularModeNeedsUnitSparsity) {
  auto spec = homogeneous_layer(4, Granularity(1, 2));
  spec.dense_granular_mode = DenseGranularMode::equal_weight;
  EXPECT_THROW(spec.validate(), ConfigError);
  MoELayerSpec ok;
  ok.pools = {{4, Granularity(1, 4), 4}};
  ok.dense_granular_mode = DenseGranularMode::pseudo_router;
  EXPECT_NO_THROW(ok.validate());
}

TEST(ModelArchSpec, ValidatesShape) {
  auto arch = arch_named("tiny");
  arch.heads = 3;
  EXPECT_THROW(arch.validate(), ConfigError);
  arch = arch_named("tiny");
  arch.ffn_multiplier = 3;
  EXPECT_THROW(arch.validate(), ConfigError);
}

TEST(CountParams, PublishedDenseRowsExact) {
  EXPECT_EQ(count_params(arch_named("10M")).active_non_embedding, 110928);
  EXPECT_EQ(count_params(arch_named("50M")).active_non_embedding, 4610640);
  EXPECT_EQ(count_params(arch_named("110M")).active_non_embedding, 26882064);
  auto a50 = arch_named("50M");
  a50.layer = homogeneous_layer(64, Granularity(1, 1));
  EXPECT_EQ(count_params(a50).total_non_embedding, 222338640);
}

TEST(CountParams, EveryPublishedRowAtDisplayedPrecision) {
  for (const auto& row : testing::published_param_rows()) {
    auto arch = arch_named(row.arch);
    arch.layer = row.sparsity == 1 ? dense_layer()
                                   : homogeneous_layer(row.sparsity, Granularity(1, 1));
    const auto c = count_params(arch);
    EXPECT_TRUE(matches_displayed(c.active_non_embedding, row.active))
        << row.arch << " s=" << row.sparsity << " active " << c.active_non_embedding;
    EXPECT_TRUE(matches_displayed(c.total_non_embedding, row.total))
        << row.arch << " s=" << row.sparsity << " total " << c.total_non_embedding;
  }
}

TEST(CountParams, MatchesIndependentFormula) {
  for (const auto& arch0 : published_architectures()) {
    for (std::int64_t s : {1, 2, 8, 64}) {
      for (std::int64_t den : {1, 4, 16}) {
        if (s * den > 1024) continue;
        auto arch = arch0;
        arch.layer = homogeneous_layer(s * den, Granularity(1, den));
        const auto c = count_params(arch);
        EXPECT_EQ(c.active_non_embedding, non_embedding_oracle(arch.layers, arch.model_dim, 1));
        EXPECT_EQ(c.total_non_embedding, non_embedding_oracle(arch.layers, arch.model_dim, s));
        EXPECT_EQ(c.router_params, arch.layers * arch.model_dim * s * den);
        EXPECT_EQ(c.embedding_params, 2 * arch.vocab * arch.model_dim);
      }
    }
  }
}

TEST(CountParams, InactiveDifferenceIsExact) {
  const auto base = arch_named("20M");
  const auto active_dense = count_params(base).active_non_embedding;
  for (const auto& layer : enumerate_homogeneous_grid(default_expert_counts(),
                                                      default_granularities(), Rational(64))) {
    auto arch = base;
    arch.layer = layer;
    const auto c = count_params(arch);
    EXPECT_EQ(c.active_non_embedding, active_dense);
    const auto s = activation_sparsity(layer);
    ASSERT_TRUE(s.is_integer());
    const std::int64_t d = arch.model_dim;
    EXPECT_EQ(c.total_non_embedding - c.active_non_embedding, 12 * d * d * arch.layers * (s.num() - 1));
  }
}

TEST(CountParams, GeneralistCountsAsActive) {
  auto arch = arch_named("10M");
  arch.layer = homogeneous_layer(16, Granularity(1, 4));
  arch.layer.generalist = Rational(1, 2);
  arch.layer.pools[0].active_count = 2;
  ASSERT_TRUE(validate_flop_match(arch.layer).ok);
  const auto c = count_params(arch);
  EXPECT_EQ(c.active_non_embedding, 110928);
  const std::int64_t d = arch.model_dim;
  // total FFN = s = 9/2 dense equivalents
  EXPECT_EQ(c.total_non_embedding,
            arch.layers * (4 * d * d + 12 * d * d * 9 / 2 + 2 * d) + d);
}

TEST(CountParams, PositionEmbeddingsInEmbeddingBucket) {
  auto arch = arch_named("tiny");
  const auto c = count_params(arch);
  EXPECT_EQ(c.embedding_params, 2 * arch.vocab * arch.model_dim + arch.max_seq_len * arch.model_dim);
}

// Brute-force reference for the homogeneous enumeration.
std::set<std::pair<std::int64_t, Rational>> brute_cells(const std::vector<std::int64_t>& ns,
                                                        const std::vector<Granularity>& gs,
                                                        const Rational& s_max) {
  std::set<std::pair<std::int64_t, Rational>> out;
  for (auto n : ns)
    for (const auto& g : gs) {
      const auto k = Rational(1) / g.value();
      if (k <= Rational(n) && Rational(n) * g.value() <= s_max) out.insert({n, g.value()});
    }
  return out;
}

std::set<std::pair<std::int64_t, Rational>> cells_of(const std::vector<MoELayerSpec>& layers) {
  std::set<std::pair<std::int64_t, Rational>> out;
  for (const auto& l : layers) out.insert({l.pools.at(0).total_count, l.pools[0].granularity.value()});
  return out;
}

TEST(HomogeneousGrid, SmallExample) {
  const std::vector<std::int64_t> ns{2};
  const std::vector<Granularity> gs{Granularity(1, 1), Granularity(1, 2)};
  const auto grid = enumerate_homogeneous_grid(ns, gs, Rational(128));
  ASSERT_EQ(grid.size(), 2u);
  // Ordered by s: (2, 1/2) has s = 1, (2, 1) has s = 2.
  EXPECT_EQ(grid[0].pools[0], (ExpertPoolSpec{2, Granularity(1, 2), 2}));
  EXPECT_EQ(grid[1].pools[0], (ExpertPoolSpec{2, Granularity(1, 1), 1}));
}

TEST(HomogeneousGrid, MatchesBruteForceAndIsFlopMatched) {
  const auto ns = default_expert_counts();
  const auto gs = default_granularities();
  for (const auto& s_max : {Rational(1), Rational(4), Rational(32), Rational(256), Rational(1024)}) {
    const auto grid = enumerate_homogeneous_grid(ns, gs, s_max);
    EXPECT_EQ(cells_of(grid), brute_cells(ns, gs, s_max)) << s_max;
    Rational prev_s(0);
    for (const auto& layer : grid) {
      EXPECT_TRUE(validate_flop_match(layer).ok);
      const auto& p = layer.pools[0];
      EXPECT_EQ(activation_sparsity(layer), Rational(p.total_count) * p.granularity.value());
      EXPECT_GE(activation_sparsity(layer), prev_s);
      prev_s = activation_sparsity(layer);
    }
  }
}

TEST(HomogeneousGrid, UnitSparsityGivesDenseGranularCandidates) {
  for (const auto& layer :
       enumerate_homogeneous_grid(default_expert_counts(), default_granularities(), Rational(1))) {
    EXPECT_EQ(layer.pools[0].active_count, layer.pools[0].total_count);
    EXPECT_EQ(activation_sparsity(layer), Rational(1));
  }
}

TEST(HomogeneousGrid, PublishedCellsAreInsideTheRule) {
  const auto full = cells_of(enumerate_homogeneous_grid(default_expert_counts(),
                                                        default_granularities(), Rational(256)));
  const auto published = published_homogeneous_cells();
  EXPECT_EQ(published.size(), 43u);
  for (const auto& [n, g] : published) EXPECT_TRUE(full.count({n, g.value()})) << n << " " << g.str();
  EXPECT_TRUE(full.count({512, Rational(1, 2)}));
  EXPECT_FALSE(full.count({2, Rational(1, 4)}));
  auto has = [&](std::int64_t n, Rational g) {
    return std::any_of(published.begin(), published.end(),
                       [&](const auto& c) { return c.first == n && c.second.value() == g; });
  };
  EXPECT_TRUE(has(512, Rational(1, 2)));
  EXPECT_FALSE(has(2, Rational(1, 4)));
}

TEST(HeterogeneousGrid, EqualsPublishedRows) {
  const auto rows = testing::published_heterogeneous_rows();
  std::vector<MoELayerSpec> expected;
  std::vector<Rational> expected_s;
  for (const auto& [spec, s] : rows) {
    expected.push_back(spec);
    expected_s.push_back(s);
  }
  const auto got = enumerate_heterogeneous_grid();
  ASSERT_EQ(got.size(), expected.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    EXPECT_EQ(got[i].pools, expected[i].pools) << i;
    EXPECT_EQ(activation_sparsity(got[i]), expected_s[i]) << i;
    EXPECT_TRUE(validate_flop_match(got[i]).ok);
    const auto& p = got[i].pools;
    EXPECT_EQ(Rational(p[0].active_count) * p[0].granularity.value(), Rational(1, 2));
    EXPECT_EQ(Rational(p[1].active_count) * p[1].granularity.value(), Rational(1, 2));
  }
}

TEST(GeneralistGrid, FlopMatchedWithGeneralist) {
  const std::vector<std::int64_t> ns{4, 8, 16, 32};
  const std::vector<Granularity> gs{Granularity(1, 2), Granularity(1, 4), Granularity(1, 8)};
  const std::vector<Rational> gens{Rational(1, 2), Rational(1, 4), Rational(1, 8)};
  const auto grid = enumerate_generalist_grid(ns, gs, gens, Rational(8));
  EXPECT_FALSE(grid.empty());
  for (const auto& layer : grid) {
    EXPECT_TRUE(validate_flop_match(layer).ok);
    EXPECT_TRUE(layer.has_generalist());
    EXPECT_LE(activation_sparsity(layer), Rational(8));
  }
  // g_gen = 1/8 with g = 1/8 leaves k = 7
  const bool has_seven = std::any_of(grid.begin(), grid.end(), [](const MoELayerSpec& l) {
    return l.generalist == Rational(1, 8) && l.pools[0].active_count == 7;
  });
  EXPECT_TRUE(has_seven);
}

TEST(TokenBudget, Examples) {
  EXPECT_EQ(token_budget(1000000000), 20000000000);
  EXPECT_EQ(token_budget(123, Rational(0)), 0);
  EXPECT_EQ(token_budget(52700000), 1054000000);
  EXPECT_EQ(token_budget(3, Rational(1, 2)), 2);  // 1.5 rounds away from zero
  EXPECT_EQ(token_budget(1000, Rational(5)), 5000);
}

}  // namespace
}  // namespace moelab
