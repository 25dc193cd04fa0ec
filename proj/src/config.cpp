// Copyright 2026 The l2vit Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "l2vit/config.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

namespace l2vit {
namespace {

constexpr std::array<const char*, 8> kArchitectureKeys = {
    "stem_dims", "stage_dims", "stage_heads", "stage_pairs",
    "window",    "lcm_kernel", "mlp_ratio",   "num_classes"};

constexpr std::array<const char*, 7> kRunKeys = {"variant",      "input_size",  "seed",   "weights",
                                                 "output",       "clamp_floor", "feature_map"};

bool is_architecture_key(const std::string& key) {
  return std::find(kArchitectureKeys.begin(), kArchitectureKeys.end(), key) !=
         kArchitectureKeys.end();
}

bool is_known_key(const std::string& key) {
  return is_architecture_key(key) ||
         std::find(kRunKeys.begin(), kRunKeys.end(), key) != kRunKeys.end();
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

struct Entry {
  std::string value;
  std::size_t line = 0;
};

[[noreturn]] void fail_at(std::size_t line, const std::string& message) {
  throw Error(ErrorCode::kParse, "line " + std::to_string(line) + ": " + message);
}

template <class T>
T parse_number(const Entry& e, const std::string& key) {
  T value{};
  const char* begin = e.value.data();
  const char* end = begin + e.value.size();
  const auto res = std::from_chars(begin, end, value);
  if (res.ec != std::errc() || res.ptr != end) {
    fail_at(e.line, "invalid value '" + e.value + "' for " + key);
  }
  return value;
}

std::size_t parse_positive(const Entry& e, const std::string& key) {
  const auto v = parse_number<std::size_t>(e, key);
  if (v == 0) fail_at(e.line, key + " must be positive");
  return v;
}

template <std::size_t K>
std::array<std::size_t, K> parse_list(const Entry& e, const std::string& key) {
  std::array<std::size_t, K> out{};
  std::stringstream ss(e.value);
  std::string item;
  std::size_t n = 0;
  while (std::getline(ss, item, ',')) {
    if (n == K) fail_at(e.line, key + " takes exactly " + std::to_string(K) + " values");
    out[n++] = parse_positive({trim(item), e.line}, key);
  }
  if (n != K) fail_at(e.line, key + " takes exactly " + std::to_string(K) + " values");
  return out;
}

Variant parse_variant(const Entry& e) {
  if (e.value == "tiny") return Variant::kTiny;
  if (e.value == "small") return Variant::kSmall;
  if (e.value == "base") return Variant::kBase;
  if (e.value == "custom") return Variant::kCustom;
  fail_at(e.line, "unknown variant '" + e.value + "' (expected tiny, small, base or custom)");
}

}  // namespace

const char* to_string(Variant variant) {
  switch (variant) {
    case Variant::kTiny:
      return "tiny";
    case Variant::kSmall:
      return "small";
    case Variant::kBase:
      return "base";
    case Variant::kCustom:
      return "custom";
  }
  return "unknown";
}

RunConfig parse_config(const std::string& text) {
  std::map<std::string, Entry> entries;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail_at(line_no, "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) fail_at(line_no, "missing key");
    if (value.empty()) fail_at(line_no, "missing value for " + key);
    if (!is_known_key(key)) fail_at(line_no, "unknown key '" + key + "'");
    const auto [it, inserted] = entries.emplace(key, Entry{value, line_no});
    if (!inserted) {
      fail_at(line_no, "duplicate key '" + key + "' (first set on line " +
                           std::to_string(it->second.line) + ")");
    }
  }

  const auto variant_it = entries.find("variant");
  if (variant_it == entries.end()) throw Error(ErrorCode::kParse, "variant required");

  RunConfig cfg;
  cfg.variant = parse_variant(variant_it->second);
  switch (cfg.variant) {
    case Variant::kTiny:
      cfg.model = ModelConfig::tiny();
      break;
    case Variant::kSmall:
      cfg.model = ModelConfig::small();
      break;
    case Variant::kBase:
      cfg.model = ModelConfig::base();
      break;
    case Variant::kCustom:
      for (const char* key : kArchitectureKeys) {
        if (!entries.count(key)) {
          throw Error(ErrorCode::kParse, std::string("custom variant requires '") + key + "'");
        }
      }
      break;
  }

  for (const auto& [key, e] : entries) {
    if (cfg.variant != Variant::kCustom && is_architecture_key(key)) {
      fail_at(e.line, "'" + key + "' cannot override the " + to_string(cfg.variant) +
                          " variant (use variant = custom)");
    }
    if (key == "variant") {
      continue;
    } else if (key == "input_size") {
      cfg.input_size = parse_positive(e, key);
      if (cfg.input_size % 32 != 0) fail_at(e.line, "input_size must be a multiple of 32");
    } else if (key == "seed") {
      cfg.seed = parse_number<std::uint64_t>(e, key);
    } else if (key == "weights") {
      cfg.weights_path = e.value;
    } else if (key == "output") {
      cfg.output_path = e.value;
    } else if (key == "clamp_floor") {
      cfg.model.clamp_floor = parse_number<double>(e, key);
      if (!(cfg.model.clamp_floor >= kMinClampFloor)) fail_at(e.line, "clamp_floor must be >= 1e-6");
    } else if (key == "feature_map") {
      try {
        cfg.model.feature_map = parse_feature_map(e.value);
      } catch (const Error& err) {
        fail_at(e.line, err.what());
      }
    } else if (key == "stem_dims") {
      cfg.model.stem_dims = parse_list<2>(e, key);
    } else if (key == "stage_dims") {
      cfg.model.stage_dims = parse_list<kNumStages>(e, key);
    } else if (key == "stage_heads") {
      cfg.model.stage_heads = parse_list<kNumStages>(e, key);
    } else if (key == "stage_pairs") {
      cfg.model.stage_pairs = parse_list<kNumStages>(e, key);
    } else if (key == "window") {
      cfg.model.window = parse_positive(e, key);
    } else if (key == "lcm_kernel") {
      cfg.model.lcm_kernel = parse_positive(e, key);
    } else if (key == "mlp_ratio") {
      cfg.model.mlp_ratio = parse_number<double>(e, key);
    } else if (key == "num_classes") {
      cfg.model.num_classes = parse_positive(e, key);
    }
  }

  try {
    cfg.model.validate();
  } catch (const Error& err) {
    throw Error(ErrorCode::kParse, std::string("invalid architecture: ") + err.what());
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace l2vit
