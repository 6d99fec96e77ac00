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

#include "moelab/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

namespace moelab::ad {

namespace {

template <typename T>
bool any_requires_grad(std::initializer_list<const Tensor<T>*> inputs) {
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor<T>* t) { return t->requires_grad(); });
}

// Wraps computed values in a node. Parents and the backward rule are only
// attached when some input needs a gradient.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values,
                      std::initializer_list<const Tensor<T>*> inputs,
                      std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  if (GradMode::enabled() && any_requires_grad<T>(inputs)) {
    node->requires_grad = true;
    for (const auto* in : inputs) node->parents.push_back(in->node_ptr());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(node));
}

void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                        const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                      shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
}

template <typename T>
void require_matrix(const Tensor<T>& a, const char* op) {
  require(a.rank() == 2, std::string(op) + ": expected a matrix, got shape " +
                             shape_str(a.shape()));
}

// Only accumulate into parents that want a gradient.
template <typename T>
std::vector<T>* grad_of(Node<T>& parent) {
  return parent.requires_grad ? &parent.ensure_grad() : nullptr;
}

}  // namespace

template <typename T>
std::vector<Node<T>*> topological_order(const Tensor<T>& root) {
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  // Iterative post-order DFS; deep transformer graphs overflow recursion.
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape())
                                        : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) return;
  auto order = topological_order(loss);
  loss.node()->ensure_grad()[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
          "matmul: inner dimensions disagree for " + shape_str(a.shape()) +
              " x " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), kk = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n, T{0});
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    T* row = out.data() + i * n;
    for (std::size_t p = 0; p < kk; ++p) {
      const T aip = av[i * kk + p];
      const T* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  return make_result<T>({m, n}, std::move(out), {&a, &b},
                        [an, bn, m, kk, n](Node<T>& self) {
    const auto& g = self.grad;
    if (auto* ga = grad_of(*an)) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < kk; ++p) {
          const T* grow = g.data() + i * n;
          const T* brow = bn->values.data() + p * n;
          T acc{0};
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          (*ga)[i * kk + p] += acc;
        }
      }
    }
    if (auto* gb = grad_of(*bn)) {
      for (std::size_t i = 0; i < m; ++i) {
        const T* grow = g.data() + i * n;
        for (std::size_t p = 0; p < kk; ++p) {
          const T aip = an->values[i * kk + p];
          T* dst = gb->data() + p * n;
          for (std::size_t j = 0; j < n; ++j) dst[j] += aip * grow[j];
        }
      }
    }
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  return make_result<T>(a.shape(), std::move(out), {&a, &b},
                        [an, bn](Node<T>& self) {
    for (auto* parent : {an.get(), bn.get()}) {
      if (auto* gp = grad_of(*parent)) {
        for (std::size_t i = 0; i < gp->size(); ++i) (*gp)[i] += self.grad[i];
      }
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  return make_result<T>(a.shape(), std::move(out), {&a, &b},
                        [an, bn](Node<T>& self) {
    if (auto* ga = grad_of(*an)) {
      for (std::size_t i = 0; i < ga->size(); ++i)
        (*ga)[i] += self.grad[i] * bn->values[i];
    }
    if (auto* gb = grad_of(*bn)) {
      for (std::size_t i = 0; i < gb->size(); ++i)
        (*gb)[i] += self.grad[i] * an->values[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  auto an = a.node_ptr();
  return make_result<T>(a.shape(), std::move(out), {&a},
                        [an, factor](Node<T>& self) {
    auto& ga = an->ensure_grad();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * a[i];
  auto an = a.node_ptr();
  return make_result<T>(a.shape(), std::move(out), {&a}, [an](Node<T>& self) {
    auto& ga = an->ensure_grad();
    for (std::size_t i = 0; i < ga.size(); ++i)
      ga[i] += self.grad[i] * T{2} * an->values[i];
  });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& a) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a[i] / (T{1} + std::exp(-a[i]));
  }
  auto an = a.node_ptr();
  return make_result<T>(a.shape(), std::move(out), {&a}, [an](Node<T>& self) {
    auto& ga = an->ensure_grad();
    for (std::size_t i = 0; i < ga.size(); ++i) {
      const T x = an->values[i];
      const T sig = T{1} / (T{1} + std::exp(-x));
      ga[i] += self.grad[i] * sig * (T{1} + x * (T{1} - sig));
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc{0};
  for (T v : a.values()) acc += v;
  auto an = a.node_ptr();
  return make_result<T>({}, {acc}, {&a}, [an](Node<T>& self) {
    auto& ga = an->ensure_grad();
    for (auto& g : ga) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  require(a.size() > 0, "mean of empty tensor");
  return scale(sum(a), T{1} / static_cast<T>(a.size()));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  require(numel(shape) == a.size(), "reshape: " + shape_str(a.shape()) +
                                        " cannot become " + shape_str(shape));
  std::vector<T> out(a.values().begin(), a.values().end());
  auto an = a.node_ptr();
  return make_result<T>(std::move(shape), std::move(out), {&a},
                        [an](Node<T>& self) {
    auto& ga = an->ensure_grad();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  require(axis < x.rank(), "softmax: axis " + std::to_string(axis) +
                               " invalid for shape " + shape_str(x.shape()));
  const auto& shape = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t len = shape[axis];
  std::vector<T> out(x.size());
  const auto xv = x.values();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, xv[base + i * inner]);
      T total{0};
      for (std::size_t i = 0; i < len; ++i) {
        const T e = std::exp(xv[base + i * inner] - mx);
        out[base + i * inner] = e;
        total += e;
      }
      for (std::size_t i = 0; i < len; ++i) out[base + i * inner] /= total;
    }
  }
  auto xn = x.node_ptr();
  return make_result<T>(shape, std::move(out), {&x},
                        [xn, outer, inner, len](Node<T>& self) {
    auto& gx = xn->ensure_grad();
    const auto& y = self.values;
    const auto& gy = self.grad;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        T dot{0};
        for (std::size_t i = 0; i < len; ++i) {
          dot += y[base + i * inner] * gy[base + i * inner];
        }
        for (std::size_t i = 0; i < len; ++i) {
          const std::size_t at = base + i * inner;
          gx[at] += y[at] * (gy[at] - dot);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> logsumexp_rows(const Tensor<T>& x) {
  require_matrix(x, "logsumexp_rows");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<T> out(rows);
  const auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * cols;
    const T mx = *std::max_element(row, row + cols);
    T total{0};
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(row[c] - mx);
    out[r] = mx + std::log(total);
  }
  auto xn = x.node_ptr();
  return make_result<T>({rows}, std::move(out), {&x},
                        [xn, rows, cols](Node<T>& self) {
    auto& gx = xn->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const T lse = self.values[r];
      for (std::size_t c = 0; c < cols; ++c) {
        gx[r * cols + c] +=
            self.grad[r] * std::exp(xn->values[r * cols + c] - lse);
      }
    }
  });
}

namespace {

template <typename T>
void check_targets(const Tensor<T>& logits,
                   std::span<const std::int32_t> targets) {
  require_matrix(logits, "cross_entropy");
  require(targets.size() == logits.dim(0),
          "cross_entropy: " + std::to_string(targets.size()) +
              " targets for logits " + shape_str(logits.shape()));
  for (auto t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= logits.dim(1)) {
      throw IndexError("cross_entropy: target id " + std::to_string(t) +
                       " outside vocabulary of " +
                       std::to_string(logits.dim(1)));
    }
  }
}

}  // namespace

template <typename T>
std::vector<double> token_nll(const Tensor<T>& logits,
                              std::span<const std::int32_t> targets) {
  check_targets(logits, targets);
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  std::vector<double> out(rows);
  const auto lv = logits.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = lv.data() + r * cols;
    const T mx = *std::max_element(row, row + cols);
    T total{0};
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(row[c] - mx);
    out[r] = static_cast<double>(mx + std::log(total) - row[targets[r]]);
  }
  return out;
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits,
                        std::span<const std::int32_t> targets) {
  check_targets(logits, targets);
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  require(rows > 0, "cross_entropy: no tokens");
  const auto lv = logits.values();
  std::vector<T> probs(rows * cols);
  T total_loss{0};
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = lv.data() + r * cols;
    const T mx = *std::max_element(row, row + cols);
    T total{0};
    for (std::size_t c = 0; c < cols; ++c) {
      probs[r * cols + c] = std::exp(row[c] - mx);
      total += probs[r * cols + c];
    }
    for (std::size_t c = 0; c < cols; ++c) probs[r * cols + c] /= total;
    total_loss += mx + std::log(total) - row[targets[r]];
  }
  std::vector<std::int32_t> tgt(targets.begin(), targets.end());
  auto ln = logits.node_ptr();
  return make_result<T>(
      {}, {total_loss / static_cast<T>(rows)}, {&logits},
      [ln, probs = std::move(probs), tgt = std::move(tgt), rows,
       cols](Node<T>& self) {
        auto& gl = ln->ensure_grad();
        const T g = self.grad[0] / static_cast<T>(rows);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            gl[r * cols + c] += g * probs[r * cols + c];
          }
          gl[r * cols + static_cast<std::size_t>(tgt[r])] -= g;
        }
      });
}

template <typename T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& gain, T eps) {
  require_matrix(x, "rms_norm");
  require(gain.rank() == 1 && gain.dim(0) == x.dim(1),
          "rms_norm: gain " + shape_str(gain.shape()) + " for input " +
              shape_str(x.shape()));
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<T> out(x.size());
  std::vector<T> inv_rms(rows);
  const auto xv = x.values();
  const auto gv = gain.values();
  for (std::size_t r = 0; r < rows; ++r) {
    T ss{0};
    for (std::size_t c = 0; c < cols; ++c) ss += xv[r * cols + c] * xv[r * cols + c];
    inv_rms[r] = T{1} / std::sqrt(ss / static_cast<T>(cols) + eps);
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] = xv[r * cols + c] * inv_rms[r] * gv[c];
    }
  }
  auto xn = x.node_ptr();
  auto gn = gain.node_ptr();
  return make_result<T>(
      x.shape(), std::move(out), {&x, &gain},
      [xn, gn, inv_rms = std::move(inv_rms), rows, cols](Node<T>& self) {
        auto* gx = grad_of(*xn);
        auto* gg = grad_of(*gn);
        for (std::size_t r = 0; r < rows; ++r) {
          const T ir = inv_rms[r];
          T dot{0};
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t at = r * cols + c;
            const T xhat = xn->values[at] * ir;
            if (gg) (*gg)[c] += self.grad[at] * xhat;
            dot += self.grad[at] * gn->values[c] * xhat;
          }
          if (!gx) continue;
          dot /= static_cast<T>(cols);
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t at = r * cols + c;
            const T xhat = xn->values[at] * ir;
            (*gx)[at] += ir * (self.grad[at] * gn->values[c] - xhat * dot);
          }
        }
      });
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> ids) {
  require_matrix(table, "embedding");
  const std::size_t vocab = table.dim(0), cols = table.dim(1);
  std::vector<std::size_t> rows(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw IndexError("embedding: id " + std::to_string(ids[i]) +
                       " outside table of " + std::to_string(vocab) + " rows");
    }
    rows[i] = static_cast<std::size_t>(ids[i]);
  }
  (void)cols;
  return gather_rows(table, rows);
}

template <typename T>
Tensor<T> causal_attention(const Tensor<T>& q, const Tensor<T>& k,
                           const Tensor<T>& v, std::size_t batch,
                           std::size_t seq, std::size_t heads) {
  require_matrix(q, "causal_attention");
  require_same_shape(q, k, "causal_attention");
  require_same_shape(q, v, "causal_attention");
  require(q.dim(0) == batch * seq,
          "causal_attention: " + shape_str(q.shape()) + " is not batch*seq=" +
              std::to_string(batch * seq) + " rows");
  const std::size_t d = q.dim(1);
  require(heads > 0 && d % heads == 0,
          "causal_attention: width " + std::to_string(d) +
              " not divisible by heads " + std::to_string(heads));
  const std::size_t hd = d / heads;
  const T inv_scale = T{1} / std::sqrt(static_cast<T>(hd));
  // Attention probabilities, (batch, heads, seq, seq), upper triangle unused.
  std::vector<T> probs(batch * heads * seq * seq, T{0});
  std::vector<T> out(q.size(), T{0});
  const auto qv = q.values();
  const auto kv = k.values();
  const auto vv = v.values();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      T* p = probs.data() + (b * heads + h) * seq * seq;
      for (std::size_t i = 0; i < seq; ++i) {
        const T* qi = qv.data() + (b * seq + i) * d + h * hd;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j <= i; ++j) {
          const T* kj = kv.data() + (b * seq + j) * d + h * hd;
          T s{0};
          for (std::size_t c = 0; c < hd; ++c) s += qi[c] * kj[c];
          s *= inv_scale;
          p[i * seq + j] = s;
          mx = std::max(mx, s);
        }
        T total{0};
        for (std::size_t j = 0; j <= i; ++j) {
          p[i * seq + j] = std::exp(p[i * seq + j] - mx);
          total += p[i * seq + j];
        }
        T* oi = out.data() + (b * seq + i) * d + h * hd;
        for (std::size_t j = 0; j <= i; ++j) {
          p[i * seq + j] /= total;
          const T* vj = vv.data() + (b * seq + j) * d + h * hd;
          for (std::size_t c = 0; c < hd; ++c) oi[c] += p[i * seq + j] * vj[c];
        }
      }
    }
  }
  auto qn = q.node_ptr();
  auto kn = k.node_ptr();
  auto vn = v.node_ptr();
  return make_result<T>(
      q.shape(), std::move(out), {&q, &k, &v},
      [qn, kn, vn, probs = std::move(probs), batch, seq, heads, d, hd,
       inv_scale](Node<T>& self) {
        auto* gq = grad_of(*qn);
        auto* gk = grad_of(*kn);
        auto* gv = grad_of(*vn);
        std::vector<T> dscore(seq);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const T* p = probs.data() + (b * heads + h) * seq * seq;
            for (std::size_t i = 0; i < seq; ++i) {
              const T* go = self.grad.data() + (b * seq + i) * d + h * hd;
              T dot{0};
              for (std::size_t j = 0; j <= i; ++j) {
                const T pij = p[i * seq + j];
                const std::size_t row_j = (b * seq + j) * d + h * hd;
                T dp{0};
                for (std::size_t c = 0; c < hd; ++c) {
                  dp += go[c] * vn->values[row_j + c];
                  if (gv) (*gv)[row_j + c] += pij * go[c];
                }
                dscore[j] = dp;
                dot += pij * dp;
              }
              const std::size_t row_i = (b * seq + i) * d + h * hd;
              for (std::size_t j = 0; j <= i; ++j) {
                const T ds = p[i * seq + j] * (dscore[j] - dot) * inv_scale;
                const std::size_t row_j = (b * seq + j) * d + h * hd;
                for (std::size_t c = 0; c < hd; ++c) {
                  if (gq) (*gq)[row_i + c] += ds * kn->values[row_j + c];
                  if (gk) (*gk)[row_j + c] += ds * qn->values[row_i + c];
                }
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows) {
  require_matrix(x, "gather_rows");
  const std::size_t cols = x.dim(1);
  std::vector<T> out(rows.size() * cols);
  const auto xv = x.values();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= x.dim(0)) {
      throw IndexError("gather_rows: row " + std::to_string(rows[r]) +
                       " of " + shape_str(x.shape()));
    }
    std::copy_n(xv.data() + rows[r] * cols, cols, out.data() + r * cols);
  }
  auto xn = x.node_ptr();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result<T>({rows.size(), cols}, std::move(out), {&x},
                        [xn, idx = std::move(idx), cols](Node<T>& self) {
    auto& gx = xn->ensure_grad();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        gx[idx[r] * cols + c] += self.grad[r * cols + c];
      }
    }
  });
}

template <typename T>
Tensor<T> index_add_rows(const Tensor<T>& src,
                         std::span<const std::size_t> rows,
                         std::size_t out_rows) {
  require_matrix(src, "index_add_rows");
  require(rows.size() == src.dim(0),
          "index_add_rows: " + std::to_string(rows.size()) +
              " indices for source " + shape_str(src.shape()));
  const std::size_t cols = src.dim(1);
  std::vector<T> out(out_rows * cols, T{0});
  const auto sv = src.values();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= out_rows) {
      throw IndexError("index_add_rows: row " + std::to_string(rows[r]) +
                       " >= " + std::to_string(out_rows));
    }
    for (std::size_t c = 0; c < cols; ++c) {
      out[rows[r] * cols + c] += sv[r * cols + c];
    }
  }
  auto sn = src.node_ptr();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result<T>({out_rows, cols}, std::move(out), {&src},
                        [sn, idx = std::move(idx), cols](Node<T>& self) {
    auto& gs = sn->ensure_grad();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        gs[r * cols + c] += self.grad[idx[r] * cols + c];
      }
    }
  });
}

template <typename T>
Tensor<T> scale_rows(const Tensor<T>& x, const Tensor<T>& w) {
  require_matrix(x, "scale_rows");
  require(w.rank() == 1 && w.dim(0) == x.dim(0),
          "scale_rows: weights " + shape_str(w.shape()) + " for rows of " +
              shape_str(x.shape()));
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<T> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] = x[r * cols + c] * w[r];
    }
  }
  auto xn = x.node_ptr();
  auto wn = w.node_ptr();
  return make_result<T>(x.shape(), std::move(out), {&x, &w},
                        [xn, wn, rows, cols](Node<T>& self) {
    auto* gx = grad_of(*xn);
    auto* gw = grad_of(*wn);
    for (std::size_t r = 0; r < rows; ++r) {
      T acc{0};
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t at = r * cols + c;
        if (gx) (*gx)[at] += self.grad[at] * wn->values[r];
        acc += self.grad[at] * xn->values[at];
      }
      if (gw) (*gw)[r] += acc;
    }
  });
}

template <typename T>
Tensor<T> gather(const Tensor<T>& x, std::span<const std::size_t> indices) {
  std::vector<T> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= x.size()) {
      throw IndexError("gather: index " + std::to_string(indices[i]) +
                       " into " + shape_str(x.shape()));
    }
    out[i] = x[indices[i]];
  }
  auto xn = x.node_ptr();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return make_result<T>({indices.size()}, std::move(out), {&x},
                        [xn, idx = std::move(idx)](Node<T>& self) {
    auto& gx = xn->ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i) gx[idx[i]] += self.grad[i];
  });
}

template <typename T>
Tensor<T> column_mean(const Tensor<T>& x) {
  require_matrix(x, "column_mean");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  require(rows > 0, "column_mean: no rows");
  std::vector<T> out(cols, T{0});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c] += x[r * cols + c];
  }
  const T inv = T{1} / static_cast<T>(rows);
  for (auto& v : out) v *= inv;
  auto xn = x.node_ptr();
  return make_result<T>({cols}, std::move(out), {&x},
                        [xn, rows, cols, inv](Node<T>& self) {
    auto& gx = xn->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += self.grad[c] * inv;
    }
  });
}

template <typename T>
Tensor<T> renormalize_rows(const Tensor<T>& x, std::span<const T> mask) {
  require_matrix(x, "renormalize_rows");
  require(mask.size() == x.size(), "renormalize_rows: mask of " +
                                       std::to_string(mask.size()) +
                                       " for " + shape_str(x.shape()));
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<T> out(x.size(), T{0});
  std::vector<T> denom(rows, T{0});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      denom[r] += mask[r * cols + c] * x[r * cols + c];
    }
    if (denom[r] == T{0}) continue;
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] = mask[r * cols + c] * x[r * cols + c] / denom[r];
    }
  }
  auto xn = x.node_ptr();
  std::vector<T> m(mask.begin(), mask.end());
  return make_result<T>(
      x.shape(), std::move(out), {&x},
      [xn, m = std::move(m), denom = std::move(denom), rows,
       cols](Node<T>& self) {
        auto& gx = xn->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          if (denom[r] == T{0}) continue;
          T dot{0};
          for (std::size_t c = 0; c < cols; ++c) {
            dot += self.values[r * cols + c] * self.grad[r * cols + c];
          }
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t at = r * cols + c;
            gx[at] += m[at] * (self.grad[at] - dot) / denom[r];
          }
        }
      });
}

template <typename T>
Tensor<T> swiglu_ffn(const Tensor<T>& x, const Tensor<T>& w_gate,
                     const Tensor<T>& w_up, const Tensor<T>& w_down) {
  require(w_gate.shape() == w_up.shape(),
          "swiglu_ffn: gate " + shape_str(w_gate.shape()) + " vs up " +
              shape_str(w_up.shape()));
  require(w_down.rank() == 2 && w_gate.rank() == 2 &&
              w_down.dim(0) == w_gate.dim(1) && w_down.dim(1) == w_gate.dim(0),
          "swiglu_ffn: down " + shape_str(w_down.shape()) +
              " does not invert gate " + shape_str(w_gate.shape()));
  auto hidden = mul(silu(matmul(x, w_gate)), matmul(x, w_up));
  return matmul(hidden, w_down);
}

#define MOELAB_INSTANTIATE_OPS(T)                                            \
  template std::vector<Node<T>*> topological_order(const Tensor<T>&);        \
  template void backward(const Tensor<T>&);                                  \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> scale(const Tensor<T>&, T);                             \
  template Tensor<T> square(const Tensor<T>&);                               \
  template Tensor<T> silu(const Tensor<T>&);                                 \
  template Tensor<T> sum(const Tensor<T>&);                                  \
  template Tensor<T> mean(const Tensor<T>&);                                 \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                       \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                 \
  template Tensor<T> logsumexp_rows(const Tensor<T>&);                       \
  template Tensor<T> cross_entropy(const Tensor<T>&,                         \
                                   std::span<const std::int32_t>);           \
  template std::vector<double> token_nll(const Tensor<T>&,                   \
                                         std::span<const std::int32_t>);     \
  template Tensor<T> rms_norm(const Tensor<T>&, const Tensor<T>&, T);        \
  template Tensor<T> embedding(const Tensor<T>&,                             \
                               std::span<const std::int32_t>);               \
  template Tensor<T> causal_attention(const Tensor<T>&, const Tensor<T>&,    \
                                      const Tensor<T>&, std::size_t,         \
                                      std::size_t, std::size_t);             \
  template Tensor<T> gather_rows(const Tensor<T>&,                           \
                                 std::span<const std::size_t>);              \
  template Tensor<T> index_add_rows(const Tensor<T>&,                        \
                                    std::span<const std::size_t>,            \
                                    std::size_t);                            \
  template Tensor<T> scale_rows(const Tensor<T>&, const Tensor<T>&);         \
  template Tensor<T> gather(const Tensor<T>&, std::span<const std::size_t>); \
  template Tensor<T> column_mean(const Tensor<T>&);                          \
  template Tensor<T> renormalize_rows(const Tensor<T>&, std::span<const T>); \
  template Tensor<T> swiglu_ffn(const Tensor<T>&, const Tensor<T>&,          \
                                const Tensor<T>&, const Tensor<T>&);

MOELAB_INSTANTIATE_OPS(float)
MOELAB_INSTANTIATE_OPS(double)

}  // namespace moelab::ad
