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

// Binary checkpoints. Layout (all integers little-endian):
//
//   offset  size  field
//   0       8     magic "MOELABCK"
//   8       4     u32 format version (1)
//   12      4     u32 scalar width in bytes (4 = float32, 8 = float64)
//   16      8     u64 spec hash: FNV-1a 64 of the canonical arch spec
//   24      8     u64 init seed
//   32      8     u64 training step
//   40      8     u64 parameter tensor count P
//   then P times: u64 element count, then that many IEEE-754 scalars in the
//                 model's declaration order (TransformerLM::parameters())
//   then     8     u64 router state count R (layer-major, pool-minor)
//   then R times: u64 expert count n, then n float64 loss-free biases
//
// Loading checks magic, version, width, spec hash and every count.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "moelab/lm_model.hpp"

namespace moelab {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
  std::uint32_t version = kCheckpointVersion;
  std::uint32_t scalar_bytes = 0;
  std::uint64_t spec_hash = 0;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
};

template <typename T>
std::string serialize_checkpoint(const TransformerLM<T>& model, std::uint64_t step);

// Overwrites the model's parameters and router states; returns the header.
template <typename T>
CheckpointHeader deserialize_checkpoint(const std::string& bytes,
                                        TransformerLM<T>& model);

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const TransformerLM<T>& model,
                     std::uint64_t step);

template <typename T>
CheckpointHeader load_checkpoint(const std::filesystem::path& path,
                                 TransformerLM<T>& model);

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

}  // namespace moelab
