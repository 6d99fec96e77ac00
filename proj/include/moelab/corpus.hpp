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

// Seeded synthetic corpora with a fixed number of domains. Each domain owns
// its own generator, so per-domain token statistics differ and held-out
// cross entropy can be macro-averaged. Documents are addressed by
// (domain, doc_id) and regenerated on demand from the corpus seed.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "moelab/lm_model.hpp"
#include "moelab/trainer.hpp"

namespace moelab {

enum class CorpusKind { markov_chain, template_grammar, mixture_of_domains };

std::string to_string(CorpusKind kind);
CorpusKind parse_corpus_kind(const std::string& s);

struct CorpusSpec {
  CorpusKind kind = CorpusKind::mixture_of_domains;
  std::size_t vocab = 64;
  std::size_t domains = 4;
  double skew = 1.0;          // Zipf exponent of the token ranks
  std::size_t branching = 4;  // successors per token in markov domains
  std::uint64_t seed = 0;
  std::uint32_t heldout_percent = 10;
  std::size_t heldout_sequences = 16;  // per domain

  void validate() const;
};

nlohmann::json to_json(const CorpusSpec& spec);
CorpusSpec corpus_spec_from_json(const nlohmann::json& j, CorpusSpec base = {});

class SyntheticCorpus {
 public:
  explicit SyntheticCorpus(CorpusSpec spec);

  const CorpusSpec& spec() const { return spec_; }
  std::size_t domain_count() const { return domains_.size(); }

  // Tokens of one document; the same arguments give the same tokens.
  std::vector<std::int32_t> document(std::size_t domain, std::uint64_t doc_id,
                                     std::size_t length) const;
  bool is_heldout(std::size_t domain, std::uint64_t doc_id) const;

  // Train doc ids are drawn per (step, row) and never held out.
  std::uint64_t train_doc_id(std::int64_t step, std::size_t row, std::size_t* domain) const;
  TokenBatch train_batch(std::int64_t step, std::size_t batch, std::size_t seq) const;

  // The first `count` held-out doc ids of a domain, ascending.
  std::vector<std::uint64_t> heldout_doc_ids(std::size_t domain, std::size_t count) const;
  // Held-out sequences of length seq + 1 (inputs plus the last target).
  std::vector<std::vector<std::int32_t>> heldout(std::size_t domain, std::size_t seq) const;

  // Concatenated train documents of one domain, for statistics.
  std::vector<std::int32_t> domain_stream(std::size_t domain, std::size_t tokens,
                                          std::size_t doc_length = 128) const;

 private:
  struct Domain {
    CorpusKind kind;
    std::vector<double> start_cdf;                  // over tokens
    std::vector<std::vector<std::int32_t>> next;    // markov successors
    std::vector<std::vector<double>> next_cdf;
    std::vector<std::vector<std::int32_t>> classes; // template word classes
    std::vector<double> class_cdf;                  // within a class
    std::vector<std::vector<std::size_t>> templates;
    std::vector<double> template_cdf;
  };

  CorpusSpec spec_;
  std::vector<Domain> domains_;
};

// Per-token losses of one domain's held-out sequences.
template <typename T>
std::vector<double> heldout_token_losses(const TransformerLM<T>& model,
                                         const std::vector<std::vector<std::int32_t>>& seqs,
                                         std::size_t chunk = 16);

// Unweighted mean over domains of each domain's mean loss. Throws
// ContractError on no domains or an empty domain.
EvalResult macro_average(const std::vector<std::vector<double>>& per_domain_losses);

template <typename T>
EvalResult macro_avg_ce(const TransformerLM<T>& model, const SyntheticCorpus& corpus,
                        std::size_t seq);

}  // namespace moelab
