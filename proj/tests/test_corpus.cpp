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
#include <map>
#include <set>

#include "moelab/corpus.hpp"
#include "moelab/errors.hpp"

namespace moelab {
namespace {

std::vector<double> unigram(const std::vector<std::int32_t>& tokens, std::size_t vocab) {
  std::vector<double> p(vocab, 1.0);  // add-one smoothing
  for (auto t : tokens) p[static_cast<std::size_t>(t)] += 1.0;
  const double total = static_cast<double>(tokens.size() + vocab);
  for (auto& v : p) v /= total;
  return p;
}

double kl(const std::vector<double>& p, const std::vector<double>& q) {
  double sum = 0;
  for (std::size_t i = 0; i < p.size(); ++i) sum += p[i] * std::log(p[i] / q[i]);
  return sum;
}

TEST(Corpus, SameSeedSameTokens) {
  for (auto kind : {CorpusKind::markov_chain, CorpusKind::template_grammar,
                    CorpusKind::mixture_of_domains}) {
    CorpusSpec spec;
    spec.kind = kind;
    spec.seed = 11;
    const SyntheticCorpus a(spec), b(spec);
    for (std::size_t d = 0; d < a.domain_count(); ++d) {
      const auto ta = a.domain_stream(d, 1000);
      EXPECT_EQ(ta.size(), 1000u);
      EXPECT_EQ(ta, b.domain_stream(d, 1000));
      for (auto t : ta) {
        EXPECT_GE(t, 0);
        EXPECT_LT(t, 64);
      }
    }
    EXPECT_EQ(a.train_batch(3, 4, 16).inputs, b.train_batch(3, 4, 16).inputs);
    spec.seed = 12;
    EXPECT_NE(SyntheticCorpus(spec).domain_stream(0, 1000), a.domain_stream(0, 1000));
  }
}

TEST(Corpus, DomainsHaveDistinctMarginals) {
  for (auto kind : {CorpusKind::markov_chain, CorpusKind::template_grammar,
                    CorpusKind::mixture_of_domains}) {
    CorpusSpec spec;
    spec.kind = kind;
    spec.seed = 3;
    const SyntheticCorpus corpus(spec);
    std::vector<std::vector<double>> dists;
    for (std::size_t d = 0; d < corpus.domain_count(); ++d) {
      dists.push_back(unigram(corpus.domain_stream(d, 100'000), spec.vocab));
    }
    for (std::size_t a = 0; a < dists.size(); ++a)
      for (std::size_t b = 0; b < dists.size(); ++b)
        if (a != b) EXPECT_GT(kl(dists[a], dists[b]), 0.1) << to_string(kind) << " " << a << "," << b;
  }
}

TEST(Corpus, HeldoutDisjointFromTrain) {
  CorpusSpec spec;
  spec.seed = 5;
  const SyntheticCorpus corpus(spec);
  std::map<std::size_t, std::set<std::uint64_t>> train_ids;
  std::size_t draws = 0;
  for (std::int64_t step = 0; draws < 10'000; ++step) {
    for (std::size_t row = 0; row < 32; ++row, ++draws) {
      std::size_t domain = 0;
      const auto id = corpus.train_doc_id(step, row, &domain);
      ASSERT_LT(domain, corpus.domain_count());
      EXPECT_FALSE(corpus.is_heldout(domain, id));
      train_ids[domain].insert(id);
    }
  }
  std::size_t heldout_total = 0;
  for (std::size_t d = 0; d < corpus.domain_count(); ++d) {
    EXPECT_GT(train_ids[d].size(), 0u);
    const auto held = corpus.heldout_doc_ids(d, 2'500);
    heldout_total += held.size();
    for (auto id : held) {
      EXPECT_TRUE(corpus.is_heldout(d, id));
      EXPECT_EQ(train_ids[d].count(id), 0u);
    }
  }
  EXPECT_EQ(heldout_total, 10'000u);
  const auto seqs = corpus.heldout(1, 16);
  EXPECT_EQ(seqs.size(), spec.heldout_sequences);
  for (const auto& s : seqs) EXPECT_EQ(s.size(), 17u);
}

TEST(Corpus, HeldoutFractionNearPercent) {
  CorpusSpec spec;
  spec.heldout_percent = 20;
  const SyntheticCorpus corpus(spec);
  std::size_t held = 0;
  for (std::uint64_t id = 0; id < 20'000; ++id) held += corpus.is_heldout(0, id) ? 1 : 0;
  EXPECT_NEAR(static_cast<double>(held) / 20'000.0, 0.2, 0.01);
}

TEST(Corpus, TrainBatchShiftsTargets) {
  const SyntheticCorpus corpus(CorpusSpec{});
  const auto batch = corpus.train_batch(0, 3, 10);
  ASSERT_EQ(batch.inputs.size(), 30u);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t i = 0; i + 1 < 10; ++i)
      EXPECT_EQ(batch.targets[r * 10 + i], batch.inputs[r * 10 + i + 1]);
}

TEST(Corpus, DegenerateParamsRejected) {
  CorpusSpec spec;
  spec.vocab = 15;
  EXPECT_THROW(SyntheticCorpus{spec}, ConfigError);
  spec = {};
  spec.domains = 0;
  EXPECT_THROW(SyntheticCorpus{spec}, ConfigError);
  spec = {};
  spec.heldout_percent = 0;
  EXPECT_THROW(SyntheticCorpus{spec}, ConfigError);
  const SyntheticCorpus ok(CorpusSpec{});
  EXPECT_THROW(ok.document(4, 0, 8), IndexError);
}

TEST(Corpus, SpecJsonRoundTrip) {
  CorpusSpec spec;
  spec.kind = CorpusKind::template_grammar;
  spec.skew = 1.5;
  spec.seed = 77;
  const auto back = corpus_spec_from_json(to_json(spec));
  EXPECT_EQ(to_json(back), to_json(spec));
  EXPECT_EQ(parse_corpus_kind("markov-chain"), CorpusKind::markov_chain);
  EXPECT_THROW(parse_corpus_kind("bogus"), ParseError);
}

TEST(MacroAverage, Definition) {
  EXPECT_DOUBLE_EQ(macro_average({{2.5, 3.5}}).macro_ce, 3.0);
  // Domain sizes do not weight the mean.
  const auto r = macro_average({{2.0}, {4.0, 4.0, 4.0, 4.0, 4.0}});
  EXPECT_DOUBLE_EQ(r.macro_ce, 3.0);
  EXPECT_EQ(r.domain_ce, (std::vector<double>{2.0, 4.0}));
  EXPECT_THROW(macro_average({}), ContractError);
  EXPECT_THROW(macro_average({{1.0}, {}}), ContractError);
}

// Recomputes every held-out token loss from the model's logits.
TEST(MacroAverage, MatchesRawLossRecomputation) {
  CorpusSpec spec;
  spec.heldout_sequences = 5;
  const SyntheticCorpus corpus(spec);
  auto arch = *find_architecture("tiny");
  arch.layer = homogeneous_layer(4, Granularity(1, 2));
  const auto model = TransformerLM<double>::build(arch, 9);
  constexpr std::size_t kSeq = 12;
  double macro = 0;
  for (std::size_t d = 0; d < corpus.domain_count(); ++d) {
    double sum = 0;
    std::size_t count = 0;
    for (const auto& s : corpus.heldout(d, kSeq)) {
      const std::vector<std::int32_t> in(s.begin(), s.end() - 1);
      const auto logits = model.forward(in, 1, kSeq).logits;
      for (std::size_t t = 0; t < kSeq; ++t) {
        double mx = -1e300;
        for (std::size_t v = 0; v < 64; ++v) mx = std::max(mx, logits[t * 64 + v]);
        double z = 0;
        for (std::size_t v = 0; v < 64; ++v) z += std::exp(logits[t * 64 + v] - mx);
        sum += mx + std::log(z) - logits[t * 64 + static_cast<std::size_t>(s[t + 1])];
        ++count;
      }
    }
    macro += sum / static_cast<double>(count);
  }
  macro /= static_cast<double>(corpus.domain_count());
  const auto r = macro_avg_ce(model, corpus, kSeq);
  EXPECT_NEAR(r.macro_ce, macro, 1e-12);
  EXPECT_EQ(r.domain_ce.size(), 4u);
}

}  // namespace
}  // namespace moelab
