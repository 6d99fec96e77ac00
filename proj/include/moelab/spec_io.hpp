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

// Text form of architecture specs. Specs are JSON objects; granularities,
// sparsities and capacity factors are written as rational strings ("1/8").
//
//   {
//     "name": "tiny-s4", "base": "tiny",        // "base" is optional
//     "layers": 2, "model_dim": 32, "heads": 2, "vocab": 64,
//     "ffn_multiplier": 4, "max_seq_len": 64,
//     "moe": {
//       "pools": [{"n": 8, "g": "1/2", "k": 2}],
//       "generalist": "0",
//       "routing": {"mode": "dropless"},      // or {"mode": "capacity", "factor": "2"}
//       "lb_weight": 0.01, "z_weight": 0.001, "bias_step": 0,
//       "dense_granular_mode": "off"
//     }
//   }
//
// The canonical form is the compact dump with sorted keys and every field
// present; its FNV-1a hash is the spec identity.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "moelab/arch_config.hpp"

namespace moelab {

using Json = nlohmann::json;

Json to_json(const MoELayerSpec& spec);
Json to_json(const ModelArchSpec& arch);
MoELayerSpec layer_spec_from_json(const Json& j);
ModelArchSpec arch_spec_from_json(const Json& j);

std::string canonical_form(const ModelArchSpec& arch);

std::uint64_t fnv1a64(std::string_view bytes);
std::string hash_hex(std::uint64_t hash);

ModelArchSpec load_arch_spec(const std::filesystem::path& path);
void save_arch_spec(const std::filesystem::path& path, const ModelArchSpec& arch);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace moelab
