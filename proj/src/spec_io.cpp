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

#include "moelab/spec_io.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace moelab {

namespace {

void reject_unknown_keys(const Json& j, const std::set<std::string>& allowed,
                         const char* what) {
  if (!j.is_object()) throw ParseError(std::string(what) + " must be an object");
  for (const auto& item : j.items()) {
    if (!allowed.count(item.key())) {
      throw ParseError(std::string("unknown key '") + item.key() + "' in " + what);
    }
  }
}

Rational rational_field(const Json& j) {
  if (j.is_string()) return Rational::parse(j.get<std::string>());
  if (j.is_number_integer()) return Rational(j.get<std::int64_t>());
  throw ParseError("expected a rational string such as \"1/8\", got " + j.dump());
}

template <typename T>
T get_field(const Json& j, const char* key, const char* what) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string(what) + "." + key + ": " + e.what());
  }
}

}  // namespace

Json to_json(const MoELayerSpec& spec) {
  Json pools = Json::array();
  for (const auto& p : spec.pools) {
    pools.push_back({{"n", p.total_count},
                     {"g", p.granularity.str()},
                     {"k", p.active_count}});
  }
  Json routing = {{"mode", spec.routing.mode == RoutingPolicy::Mode::dropless
                               ? "dropless"
                               : "capacity"}};
  if (spec.routing.mode == RoutingPolicy::Mode::capacity) {
    routing["factor"] = spec.routing.capacity_factor.str();
  }
  return {{"pools", pools},
          {"generalist", spec.generalist.str()},
          {"routing", routing},
          {"lb_weight", spec.lb_weight},
          {"z_weight", spec.z_weight},
          {"bias_step", spec.bias_step},
          {"dense_granular_mode", to_string(spec.dense_granular_mode)}};
}

Json to_json(const ModelArchSpec& arch) {
  return {{"name", arch.name},
          {"layers", arch.layers},
          {"model_dim", arch.model_dim},
          {"heads", arch.heads},
          {"ffn_multiplier", arch.ffn_multiplier},
          {"vocab", arch.vocab},
          {"max_seq_len", arch.max_seq_len},
          {"moe", to_json(arch.layer)}};
}

MoELayerSpec layer_spec_from_json(const Json& j) {
  reject_unknown_keys(j,
                      {"pools", "generalist", "routing", "lb_weight",
                       "z_weight", "bias_step", "dense_granular_mode"},
                      "moe");
  MoELayerSpec spec;
  if (j.contains("pools")) {
    for (const auto& p : j.at("pools")) {
      reject_unknown_keys(p, {"n", "g", "k"}, "pool");
      ExpertPoolSpec pool;
      pool.total_count = get_field<std::int64_t>(p, "n", "pool");
      pool.granularity = Granularity(rational_field(p.at("g")));
      pool.active_count = p.contains("k")
                              ? get_field<std::int64_t>(p, "k", "pool")
                              : flop_matched_active_count(pool.granularity);
      spec.pools.push_back(pool);
    }
  }
  if (j.contains("generalist")) spec.generalist = rational_field(j.at("generalist"));
  if (j.contains("routing")) {
    const auto& r = j.at("routing");
    reject_unknown_keys(r, {"mode", "factor"}, "routing");
    const auto mode = get_field<std::string>(r, "mode", "routing");
    if (mode == "dropless") {
      spec.routing = RoutingPolicy::dropless();
    } else if (mode == "capacity") {
      spec.routing = RoutingPolicy::capacity(
          r.contains("factor") ? rational_field(r.at("factor")) : Rational(2));
    } else {
      throw ParseError("unknown routing mode '" + mode + "'");
    }
  }
  if (j.contains("lb_weight")) spec.lb_weight = get_field<double>(j, "lb_weight", "moe");
  if (j.contains("z_weight")) spec.z_weight = get_field<double>(j, "z_weight", "moe");
  if (j.contains("bias_step")) spec.bias_step = get_field<double>(j, "bias_step", "moe");
  if (j.contains("dense_granular_mode")) {
    spec.dense_granular_mode = parse_dense_granular_mode(
        get_field<std::string>(j, "dense_granular_mode", "moe"));
  }
  spec.validate();
  return spec;
}

ModelArchSpec arch_spec_from_json(const Json& j) {
  reject_unknown_keys(j,
                      {"name", "base", "layers", "model_dim", "heads",
                       "ffn_multiplier", "vocab", "max_seq_len", "moe"},
                      "arch");
  ModelArchSpec arch;
  arch.layer = dense_layer();
  if (j.contains("base")) {
    const auto base = get_field<std::string>(j, "base", "arch");
    auto found = find_architecture(base);
    if (!found) throw ParseError("unknown base architecture '" + base + "'");
    arch = *found;
  }
  if (j.contains("name")) arch.name = get_field<std::string>(j, "name", "arch");
  if (j.contains("layers")) arch.layers = get_field<std::int64_t>(j, "layers", "arch");
  if (j.contains("model_dim")) arch.model_dim = get_field<std::int64_t>(j, "model_dim", "arch");
  if (j.contains("heads")) arch.heads = get_field<std::int64_t>(j, "heads", "arch");
  if (j.contains("ffn_multiplier")) {
    arch.ffn_multiplier = get_field<std::int64_t>(j, "ffn_multiplier", "arch");
  }
  if (j.contains("vocab")) arch.vocab = get_field<std::int64_t>(j, "vocab", "arch");
  if (j.contains("max_seq_len")) {
    arch.max_seq_len = get_field<std::int64_t>(j, "max_seq_len", "arch");
  }
  if (j.contains("moe")) arch.layer = layer_spec_from_json(j.at("moe"));
  arch.validate();
  return arch;
}

std::string canonical_form(const ModelArchSpec& arch) {
  return to_json(arch).dump();
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hash_hex(std::uint64_t hash) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

ModelArchSpec load_arch_spec(const std::filesystem::path& path) {
  try {
    return arch_spec_from_json(Json::parse(read_text_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void save_arch_spec(const std::filesystem::path& path, const ModelArchSpec& arch) {
  write_text_file(path, to_json(arch).dump(2) + "\n");
}

}  // namespace moelab
