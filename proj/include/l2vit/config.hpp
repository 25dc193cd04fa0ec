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

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "l2vit/model.hpp"

namespace l2vit {

enum class Variant { kTiny, kSmall, kBase, kCustom };

const char* to_string(Variant variant);

/// A parsed run configuration: the model architecture plus run settings.
struct RunConfig {
  Variant variant = Variant::kTiny;
  ModelConfig model;
  std::size_t input_size = 224;
  std::uint64_t seed = 0;
  std::string weights_path;
  std::string output_path;
};

/// Parses line-oriented `key = value` text. `#` starts a comment; blank lines
/// are ignored; list values are comma separated.
///
/// Keys: variant (required; tiny, small, base or custom), input_size, seed,
/// clamp_floor, feature_map, weights, output, and the architecture keys
/// stem_dims, stage_dims, stage_heads, stage_pairs, window, lcm_kernel,
/// mlp_ratio, num_classes. A custom variant needs every architecture key; a
/// named variant accepts none of them.
///
/// Errors are kParse with a "line N:" prefix when a line is at fault.
RunConfig parse_config(const std::string& text);

/// Reads and parses a config file (kIo when unreadable).
RunConfig load_config(const std::string& path);

}  // namespace l2vit
