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

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "moelab/tensor.hpp"

namespace moelab {

// Seeded parameter factory. Draw order is the declaration order of the
// model, so the same seed always yields the same weights.
template <typename T>
class ParamInit {
 public:
  explicit ParamInit(std::uint64_t seed) : rng_(seed) {}

  ad::Tensor<T> normal(ad::Shape shape, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<T> values(ad::numel(shape));
    for (auto& v : values) v = static_cast<T>(dist(rng_));
    return ad::Tensor<T>::from(std::move(shape), std::move(values), true);
  }

  ad::Tensor<T> ones(ad::Shape shape) {
    return ad::Tensor<T>::full(std::move(shape), T{1}, true);
  }

 private:
  std::mt19937_64 rng_;
};

enum class ParamBucket { embedding, shared, generalist, expert, router };

template <typename T>
struct NamedParam {
  std::string name;
  ParamBucket bucket;
  ad::Tensor<T> tensor;
};

}  // namespace moelab
