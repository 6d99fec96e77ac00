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

// Shared test helpers: a central finite-difference gradient checker and a
// few naive reference implementations.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "moelab/ops.hpp"
#include "moelab/tensor.hpp"

namespace moelab::testing {

using TensorD = ad::Tensor<double>;

struct GradCheck {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  std::string worst;
};

// |a - b| / max(|a|, |b|, floor)
inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Compares backward() against central differences. `per_tensor` = 0 checks
// every element, otherwise that many random elements per tensor.
template <typename F>
GradCheck check_gradients(std::vector<std::pair<std::string, TensorD>> params, F loss_fn,
                          std::size_t per_tensor = 0, std::uint64_t seed = 1,
                          double h = 1e-6) {
  for (auto& [name, p] : params) p.zero_grad();
  auto loss = loss_fn();
  ad::backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& [name, p] : params) {
    auto g = p.mutable_grad();
    analytic.emplace_back(g.begin(), g.end());
  }

  std::mt19937_64 rng(seed);
  GradCheck result;
  ad::NoGradGuard no_grad;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& p = params[t].second;
    std::vector<std::size_t> idx;
    if (per_tensor == 0 || per_tensor >= p.size()) {
      for (std::size_t i = 0; i < p.size(); ++i) idx.push_back(i);
    } else {
      for (std::size_t i = 0; i < per_tensor; ++i) idx.push_back(rng() % p.size());
    }
    auto values = p.mutable_values();
    for (auto i : idx) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = loss_fn().item();
      values[i] = saved - h;
      const double down = loss_fn().item();
      values[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double err = rel_err(analytic[t][i], numeric);
      ++result.checked;
      if (err > result.max_rel_err) {
        result.max_rel_err = err;
        result.worst = params[t].first + "[" + std::to_string(i) + "] analytic " +
                       std::to_string(analytic[t][i]) + " numeric " + std::to_string(numeric);
      }
    }
  }
  return result;
}

inline TensorD random_tensor(ad::Shape shape, std::mt19937_64& rng, double stddev = 1.0,
                             bool requires_grad = true) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = dist(rng);
  return TensorD::from(std::move(shape), std::move(v), requires_grad);
}

// Naive (rows x inner) * (inner x cols).
inline std::vector<double> naive_matmul(std::span<const double> a, std::span<const double> b,
                                        std::size_t rows, std::size_t inner, std::size_t cols) {
  std::vector<double> out(rows * cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < inner; ++k) acc += a[i * inner + k] * b[k * cols + j];
      out[i * cols + j] = acc;
    }
  return out;
}

inline double naive_silu(double x) { return x / (1.0 + std::exp(-x)); }

// SwiGLU for a single row vector.
template <typename W>
std::vector<double> naive_swiglu(std::span<const double> x, const W& w_gate, const W& w_up,
                                 const W& w_down) {
  const std::size_t d = w_gate.dim(0), m = w_gate.dim(1);
  std::vector<double> hidden(m);
  for (std::size_t j = 0; j < m; ++j) {
    double g = 0.0, u = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      g += x[i] * static_cast<double>(w_gate[i * m + j]);
      u += x[i] * static_cast<double>(w_up[i * m + j]);
    }
    hidden[j] = naive_silu(g) * u;
  }
  std::vector<double> out(d, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i] += hidden[j] * static_cast<double>(w_down[j * d + i]);
  return out;
}

}  // namespace moelab::testing
