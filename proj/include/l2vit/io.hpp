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
#include "l2vit/tensor.hpp"

namespace l2vit {

// Weight file layout, all integers little-endian:
//
//   "L2VT"            4 bytes
//   version           u32 (= 1)
//   tensor count      u32
//   per tensor:       u16 name length, name bytes, u8 rank, rank x u64 dims,
//                     f32 values in row-major order
//   crc32             u32 over every byte between the header and the crc
//
// Tensors are written in name order. Values are rounded to the nearest f32
// on save and widened back to f64 on load.

inline constexpr std::uint32_t kWeightFormatVersion = 1;

std::string serialize_weights(const WeightStore& store);
/// kFormat on bad magic, version, rank or name; kFormat on truncation;
/// kChecksum when the trailing CRC does not match.
WeightStore deserialize_weights(const std::string& bytes);

void save_weights(const WeightStore& store, const std::string& path);
WeightStore load_weights(const std::string& path);

/// Reads a headerless little-endian f32 tensor of the given shape (kIo when
/// the file is missing, kFormat when its size does not match).
Tensor read_raw_f32(const std::string& path, const Shape& shape);
void write_raw_f32(const Tensor& tensor, const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

}  // namespace l2vit
