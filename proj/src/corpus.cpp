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

#include "moelab/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "moelab/errors.hpp"
#include "moelab/ops.hpp"

namespace moelab {
namespace {

constexpr std::size_t kWordClasses = 8;
constexpr std::size_t kTemplates = 6;
constexpr std::uint64_t kHeldoutSalt = 0x68656c646f7574ULL;
constexpr std::uint64_t kTrainSalt = 0x747261696eULL;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return splitmix64(splitmix64(splitmix64(a) ^ b) ^ c);
}

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::size_t sample(const std::vector<double>& cdf, std::mt19937_64& rng) {
  const double u = uniform01(rng) * cdf.back();
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
}

std::vector<double> zipf_cdf(std::size_t count, double exponent) {
  std::vector<double> cdf(count);
  double acc = 0.0;
  for (std::size_t r = 0; r < count; ++r) {
    acc += 1.0 / std::pow(static_cast<double>(r + 1), exponent);
    cdf[r] = acc;
  }
  return cdf;
}

std::vector<std::int32_t> permutation(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::int32_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

}  // namespace

std::string to_string(CorpusKind kind) {
  switch (kind) {
    case CorpusKind::markov_chain: return "markov-chain";
    case CorpusKind::template_grammar: return "template-grammar";
    case CorpusKind::mixture_of_domains: return "mixture-of-domains";
  }
  return "unknown";
}

CorpusKind parse_corpus_kind(const std::string& s) {
  if (s == "markov-chain") return CorpusKind::markov_chain;
  if (s == "template-grammar") return CorpusKind::template_grammar;
  if (s == "mixture-of-domains") return CorpusKind::mixture_of_domains;
  throw ParseError("unknown corpus kind '" + s + "'");
}

void CorpusSpec::validate() const {
  if (vocab < 16) throw ConfigError("corpus vocab must be >= 16, got " + std::to_string(vocab));
  if (domains < 1) throw ConfigError("corpus needs at least one domain");
  if (branching < 1 || branching > vocab) {
    throw ConfigError("branching must lie in [1, vocab]");
  }
  if (skew < 0 || !std::isfinite(skew)) throw ConfigError("skew must be finite and >= 0");
  if (heldout_percent < 1 || heldout_percent > 99) {
    throw ConfigError("heldout_percent must lie in [1, 99]");
  }
  if (heldout_sequences < 1) throw ConfigError("each domain needs held-out sequences");
}

nlohmann::json to_json(const CorpusSpec& s) {
  return {{"kind", to_string(s.kind)},       {"vocab", s.vocab},
          {"domains", s.domains},            {"skew", s.skew},
          {"branching", s.branching},        {"seed", s.seed},
          {"heldout_percent", s.heldout_percent},
          {"heldout_sequences", s.heldout_sequences}};
}

CorpusSpec corpus_spec_from_json(const nlohmann::json& j, CorpusSpec spec) {
  if (!j.is_object()) throw ParseError("corpus spec must be an object");
  for (const auto& item : j.items()) {
    const auto& key = item.key();
    const auto& v = item.value();
    try {
      if (key == "kind") spec.kind = parse_corpus_kind(v.get<std::string>());
      else if (key == "vocab") spec.vocab = v.get<std::size_t>();
      else if (key == "domains") spec.domains = v.get<std::size_t>();
      else if (key == "skew") spec.skew = v.get<double>();
      else if (key == "branching") spec.branching = v.get<std::size_t>();
      else if (key == "seed") spec.seed = v.get<std::uint64_t>();
      else if (key == "heldout_percent") spec.heldout_percent = v.get<std::uint32_t>();
      else if (key == "heldout_sequences") spec.heldout_sequences = v.get<std::size_t>();
      else throw ParseError("unknown key '" + key + "' in corpus spec");
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("corpus." + key + ": " + e.what());
    }
  }
  return spec;
}

SyntheticCorpus::SyntheticCorpus(CorpusSpec spec) : spec_(spec) {
  spec_.validate();
  const std::size_t V = spec_.vocab;
  const auto rank_cdf = zipf_cdf(V, spec_.skew);
  for (std::size_t d = 0; d < spec_.domains; ++d) {
    std::mt19937_64 rng(mix(spec_.seed, 0x646f6d61696eULL, d));
    Domain dom;
    dom.kind = spec_.kind;
    if (spec_.kind == CorpusKind::mixture_of_domains) {
      dom.kind = d % 2 == 0 ? CorpusKind::markov_chain : CorpusKind::template_grammar;
    }
    const auto perm = permutation(V, rng);
    // Token perm[r] has rank r.
    dom.start_cdf.assign(V, 0.0);
    {
      double prev = 0.0;
      std::vector<double> mass(V);
      for (std::size_t r = 0; r < V; ++r) {
        mass[static_cast<std::size_t>(perm[r])] = rank_cdf[r] - prev;
        prev = rank_cdf[r];
      }
      std::partial_sum(mass.begin(), mass.end(), dom.start_cdf.begin());
    }
    if (dom.kind == CorpusKind::markov_chain) {
      const auto row_cdf = zipf_cdf(spec_.branching, spec_.skew);
      dom.next.resize(V);
      dom.next_cdf.assign(V, row_cdf);
      for (std::size_t t = 0; t < V; ++t) {
        auto& succ = dom.next[t];
        while (succ.size() < spec_.branching) {
          const auto tok = perm[sample(rank_cdf, rng)];
          if (std::find(succ.begin(), succ.end(), tok) == succ.end()) succ.push_back(tok);
        }
      }
    } else {
      const std::size_t per_class = V / kWordClasses;
      dom.classes.resize(kWordClasses);
      for (std::size_t r = 0; r < V; ++r) {
        dom.classes[std::min(r / per_class, kWordClasses - 1)].push_back(perm[r]);
      }
      dom.class_cdf = zipf_cdf(V, spec_.skew);
      dom.templates.resize(kTemplates);
      for (auto& tpl : dom.templates) {
        const std::size_t len = 3 + static_cast<std::size_t>(rng() % 4);
        for (std::size_t i = 0; i < len; ++i) {
          tpl.push_back(static_cast<std::size_t>(rng() % kWordClasses));
        }
      }
      dom.template_cdf = zipf_cdf(kTemplates, spec_.skew);
    }
    domains_.push_back(std::move(dom));
  }
}

std::vector<std::int32_t> SyntheticCorpus::document(std::size_t domain, std::uint64_t doc_id,
                                                    std::size_t length) const {
  if (domain >= domains_.size()) {
    throw IndexError("domain " + std::to_string(domain) + " out of range");
  }
  const Domain& dom = domains_[domain];
  std::mt19937_64 rng(mix(spec_.seed, domain + 1, doc_id));
  std::vector<std::int32_t> out;
  out.reserve(length);
  if (dom.kind == CorpusKind::markov_chain) {
    if (length == 0) return out;
    auto tok = static_cast<std::int32_t>(sample(dom.start_cdf, rng));
    out.push_back(tok);
    while (out.size() < length) {
      const auto& row = dom.next[static_cast<std::size_t>(tok)];
      tok = row[sample(dom.next_cdf[static_cast<std::size_t>(tok)], rng)];
      out.push_back(tok);
    }
    return out;
  }
  while (out.size() < length) {
    const auto& tpl = dom.templates[sample(dom.template_cdf, rng)];
    for (std::size_t c : tpl) {
      if (out.size() == length) break;
      const auto& words = dom.classes[c];
      std::vector<double> cdf(dom.class_cdf.begin(),
                              dom.class_cdf.begin() + static_cast<std::ptrdiff_t>(words.size()));
      out.push_back(words[sample(cdf, rng)]);
    }
  }
  return out;
}

bool SyntheticCorpus::is_heldout(std::size_t domain, std::uint64_t doc_id) const {
  return mix(spec_.seed ^ kHeldoutSalt, domain, doc_id) % 100 < spec_.heldout_percent;
}

std::uint64_t SyntheticCorpus::train_doc_id(std::int64_t step, std::size_t row,
                                            std::size_t* domain) const {
  const std::uint64_t h = mix(spec_.seed ^ kTrainSalt, static_cast<std::uint64_t>(step), row);
  const std::size_t d = static_cast<std::size_t>(h % domains_.size());
  std::uint64_t id = splitmix64(h);
  while (is_heldout(d, id)) id = splitmix64(id);
  if (domain) *domain = d;
  return id;
}

TokenBatch SyntheticCorpus::train_batch(std::int64_t step, std::size_t batch,
                                        std::size_t seq) const {
  TokenBatch out;
  out.batch = batch;
  out.seq = seq;
  out.inputs.reserve(batch * seq);
  out.targets.reserve(batch * seq);
  for (std::size_t r = 0; r < batch; ++r) {
    std::size_t d = 0;
    const auto id = train_doc_id(step, r, &d);
    const auto doc = document(d, id, seq + 1);
    out.inputs.insert(out.inputs.end(), doc.begin(), doc.end() - 1);
    out.targets.insert(out.targets.end(), doc.begin() + 1, doc.end());
  }
  return out;
}

std::vector<std::uint64_t> SyntheticCorpus::heldout_doc_ids(std::size_t domain,
                                                            std::size_t count) const {
  std::vector<std::uint64_t> ids;
  for (std::uint64_t j = 0; ids.size() < count; ++j) {
    if (is_heldout(domain, j)) ids.push_back(j);
  }
  return ids;
}

std::vector<std::vector<std::int32_t>> SyntheticCorpus::heldout(std::size_t domain,
                                                                std::size_t seq) const {
  std::vector<std::vector<std::int32_t>> out;
  for (auto id : heldout_doc_ids(domain, spec_.heldout_sequences)) {
    out.push_back(document(domain, id, seq + 1));
  }
  return out;
}

std::vector<std::int32_t> SyntheticCorpus::domain_stream(std::size_t domain, std::size_t tokens,
                                                         std::size_t doc_length) const {
  std::vector<std::int32_t> out;
  out.reserve(tokens);
  for (std::uint64_t j = 0; out.size() < tokens; ++j) {
    if (is_heldout(domain, j)) continue;
    const auto doc = document(domain, j, std::min(doc_length, tokens - out.size()));
    out.insert(out.end(), doc.begin(), doc.end());
  }
  return out;
}

template <typename T>
std::vector<double> heldout_token_losses(const TransformerLM<T>& model,
                                         const std::vector<std::vector<std::int32_t>>& seqs,
                                         std::size_t chunk) {
  ad::NoGradGuard no_grad;
  std::vector<double> losses;
  if (chunk == 0) chunk = 1;
  for (std::size_t start = 0; start < seqs.size(); start += chunk) {
    const std::size_t end = std::min(seqs.size(), start + chunk);
    const std::size_t seq = seqs[start].size() - 1;
    std::vector<std::int32_t> inputs, targets;
    for (std::size_t i = start; i < end; ++i) {
      if (seqs[i].size() != seq + 1) throw DimensionError("held-out sequences differ in length");
      inputs.insert(inputs.end(), seqs[i].begin(), seqs[i].end() - 1);
      targets.insert(targets.end(), seqs[i].begin() + 1, seqs[i].end());
    }
    const auto out = model.forward(inputs, end - start, seq);
    const auto nll = ad::token_nll(out.logits, std::span<const std::int32_t>(targets));
    losses.insert(losses.end(), nll.begin(), nll.end());
  }
  return losses;
}

EvalResult macro_average(const std::vector<std::vector<double>>& per_domain) {
  if (per_domain.empty()) throw ContractError("macro average needs at least one domain");
  EvalResult r;
  for (std::size_t d = 0; d < per_domain.size(); ++d) {
    const auto& l = per_domain[d];
    if (l.empty()) throw ContractError("domain " + std::to_string(d) + " has no tokens");
    r.domain_ce.push_back(std::accumulate(l.begin(), l.end(), 0.0) /
                          static_cast<double>(l.size()));
  }
  r.macro_ce = std::accumulate(r.domain_ce.begin(), r.domain_ce.end(), 0.0) /
               static_cast<double>(r.domain_ce.size());
  return r;
}

template <typename T>
EvalResult macro_avg_ce(const TransformerLM<T>& model, const SyntheticCorpus& corpus,
                        std::size_t seq) {
  std::vector<std::vector<double>> per_domain;
  for (std::size_t d = 0; d < corpus.domain_count(); ++d) {
    per_domain.push_back(heldout_token_losses(model, corpus.heldout(d, seq)));
  }
  return macro_average(per_domain);
}

template std::vector<double> heldout_token_losses(const TransformerLM<float>&,
                                                  const std::vector<std::vector<std::int32_t>>&,
                                                  std::size_t);
template std::vector<double> heldout_token_losses(const TransformerLM<double>&,
                                                  const std::vector<std::vector<std::int32_t>>&,
                                                  std::size_t);
template EvalResult macro_avg_ce(const TransformerLM<float>&, const SyntheticCorpus&, std::size_t);
template EvalResult macro_avg_ce(const TransformerLM<double>&, const SyntheticCorpus&,
                                 std::size_t);

}  // namespace moelab
