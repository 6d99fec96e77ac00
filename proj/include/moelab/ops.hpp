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

// Differentiable operations over ad::Tensor. Matrices are row-major and
// linear maps are applied as x * W with W stored (in, out).

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "moelab/tensor.hpp"

namespace moelab::ad {

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> square(const Tensor<T>& a);
template <typename T> Tensor<T> silu(const Tensor<T>& a);
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);

// Same values, new shape with the same element count.
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);

// Numerically stabilised (max-subtracted) softmax along `axis`.
template <typename T> Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

// Row-wise log-sum-exp of a (rows, cols) matrix; result has shape (rows).
template <typename T> Tensor<T> logsumexp_rows(const Tensor<T>& x);

// Mean negative log-likelihood of `targets` under row-wise softmax(logits).
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits,
                        std::span<const std::int32_t> targets);

// Per-row negative log-likelihood, no graph. Used for held-out evaluation.
template <typename T>
std::vector<double> token_nll(const Tensor<T>& logits,
                              std::span<const std::int32_t> targets);

template <typename T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& gain, T eps = T(1e-5));

// Rows of `table` selected by `ids`; out-of-range ids throw IndexError.
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> ids);

// Multi-head causal self attention on already-projected q, k, v of shape
// (batch * seq, d). Position i of a sequence only attends to positions <= i.
template <typename T>
Tensor<T> causal_attention(const Tensor<T>& q, const Tensor<T>& k,
                           const Tensor<T>& v, std::size_t batch,
                           std::size_t seq, std::size_t heads);

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows);

// out[rows[r]] += src[r] into a fresh (out_rows, cols) zero matrix.
template <typename T>
Tensor<T> index_add_rows(const Tensor<T>& src,
                         std::span<const std::size_t> rows,
                         std::size_t out_rows);

// y[r, :] = x[r, :] * w[r]
template <typename T>
Tensor<T> scale_rows(const Tensor<T>& x, const Tensor<T>& w);

// Flat element gather: y[i] = x.values()[indices[i]].
template <typename T>
Tensor<T> gather(const Tensor<T>& x, std::span<const std::size_t> indices);

// Mean over rows of a (rows, cols) matrix; result has shape (cols).
template <typename T> Tensor<T> column_mean(const Tensor<T>& x);

// y[r, j] = mask[r, j] * x[r, j] / sum_i(mask[r, i] * x[r, i]); rows whose
// masked sum is zero come out as zeros.
template <typename T>
Tensor<T> renormalize_rows(const Tensor<T>& x, std::span<const T> mask);

// w_down applied to silu(x w_gate) * (x w_up).
template <typename T>
Tensor<T> swiglu_ffn(const Tensor<T>& x, const Tensor<T>& w_gate,
                     const Tensor<T>& w_up, const Tensor<T>& w_down);

}  // namespace moelab::ad
