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

#include "moelab/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "moelab/spec_io.hpp"

namespace moelab {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'M', 'O', 'E', 'L', 'A', 'B', 'C', 'K'};

class Writer {
 public:
  template <typename V>
  void put(V value) {
    const auto* p = reinterpret_cast<const char*>(&value);
    bytes_.append(p, sizeof(V));
  }
  template <typename V>
  void put_span(std::span<const V> values) {
    bytes_.append(reinterpret_cast<const char*>(values.data()),
                  values.size() * sizeof(V));
  }
  void put_raw(const char* data, std::size_t n) { bytes_.append(data, n); }
  std::string take() { return std::move(bytes_); }

 private:
  std::string bytes_;
};

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}
  template <typename V>
  V get() {
    V value;
    need(sizeof(V));
    std::memcpy(&value, bytes_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return value;
  }
  template <typename V>
  void get_span(std::span<V> out) {
    need(out.size() * sizeof(V));
    std::memcpy(out.data(), bytes_.data() + pos_, out.size() * sizeof(V));
    pos_ += out.size() * sizeof(V);
  }
  void get_raw(char* out, std::size_t n) {
    need(n);
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw ParseError("checkpoint truncated");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

CheckpointHeader read_header(Reader& in) {
  char magic[8];
  in.get_raw(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ParseError("not a moelab checkpoint (bad magic)");
  }
  CheckpointHeader h;
  h.version = in.get<std::uint32_t>();
  if (h.version != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(h.version));
  }
  h.scalar_bytes = in.get<std::uint32_t>();
  h.spec_hash = in.get<std::uint64_t>();
  h.seed = in.get<std::uint64_t>();
  h.step = in.get<std::uint64_t>();
  return h;
}

}  // namespace

template <typename T>
std::string serialize_checkpoint(const TransformerLM<T>& model, std::uint64_t step) {
  Writer out;
  out.put_raw(kMagic, sizeof(kMagic));
  out.put<std::uint32_t>(kCheckpointVersion);
  out.put<std::uint32_t>(sizeof(T));
  out.put<std::uint64_t>(fnv1a64(canonical_form(model.arch())));
  out.put<std::uint64_t>(model.seed());
  out.put<std::uint64_t>(step);
  const auto params = model.parameters();
  out.put<std::uint64_t>(params.size());
  for (const auto& p : params) {
    out.put<std::uint64_t>(p.tensor.size());
    out.put_span(p.tensor.values());
  }
  const auto states = model.router_states();
  out.put<std::uint64_t>(states.size());
  for (const auto& s : states) {
    out.put<std::uint64_t>(s.bias.size());
    out.put_span(std::span<const double>(s.bias));
  }
  return out.take();
}

template <typename T>
CheckpointHeader deserialize_checkpoint(const std::string& bytes,
                                        TransformerLM<T>& model) {
  Reader in(bytes);
  const auto header = read_header(in);
  if (header.scalar_bytes != sizeof(T)) {
    throw ParseError("checkpoint holds " + std::to_string(header.scalar_bytes) +
                     "-byte scalars, model uses " + std::to_string(sizeof(T)));
  }
  if (header.spec_hash != fnv1a64(canonical_form(model.arch()))) {
    throw ConfigError("checkpoint was written for a different architecture spec");
  }
  auto params = model.parameters();
  if (in.get<std::uint64_t>() != params.size()) {
    throw ConfigError("checkpoint parameter count does not match the model");
  }
  // Stage everything first so a bad file leaves the model untouched.
  std::vector<std::vector<T>> staged(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto count = in.get<std::uint64_t>();
    if (count != params[i].tensor.size()) {
      throw ConfigError("checkpoint tensor '" + params[i].name + "' has " +
                        std::to_string(count) + " values, model expects " +
                        std::to_string(params[i].tensor.size()));
    }
    staged[i].resize(count);
    in.get_span(std::span<T>(staged[i]));
  }
  auto states = model.router_states();
  if (in.get<std::uint64_t>() != states.size()) {
    throw ConfigError("checkpoint router state count does not match the model");
  }
  for (auto& s : states) {
    if (in.get<std::uint64_t>() != s.bias.size()) {
      throw ConfigError("checkpoint router state size does not match the model");
    }
    in.get_span(std::span<double>(s.bias));
  }
  if (!in.done()) throw ParseError("trailing bytes after checkpoint");

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].tensor.mutable_values();
    std::copy(staged[i].begin(), staged[i].end(), dst.begin());
  }
  model.set_router_states(states);
  return header;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const TransformerLM<T>& model,
                     std::uint64_t step) {
  write_text_file(path, serialize_checkpoint(model, step));
}

template <typename T>
CheckpointHeader load_checkpoint(const std::filesystem::path& path,
                                 TransformerLM<T>& model) {
  return deserialize_checkpoint(read_text_file(path), model);
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  const auto bytes = read_text_file(path);
  Reader in(bytes);
  return read_header(in);
}

#define MOELAB_INSTANTIATE_CKPT(T)                                                  \
  template std::string serialize_checkpoint(const TransformerLM<T>&, std::uint64_t); \
  template CheckpointHeader deserialize_checkpoint(const std::string&,               \
                                                   TransformerLM<T>&);               \
  template void save_checkpoint(const std::filesystem::path&,                        \
                                const TransformerLM<T>&, std::uint64_t);             \
  template CheckpointHeader load_checkpoint(const std::filesystem::path&,            \
                                            TransformerLM<T>&);

MOELAB_INSTANTIATE_CKPT(float)
MOELAB_INSTANTIATE_CKPT(double)

}  // namespace moelab
