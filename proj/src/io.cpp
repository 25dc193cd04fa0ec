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

#include "l2vit/io.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <vector>

namespace l2vit {
namespace {

static_assert(std::endian::native == std::endian::little,
              "the weight format is written with native little-endian stores");

constexpr char kMagic[4] = {'L', '2', 'V', 'T'};
constexpr std::size_t kHeaderBytes = 12;
constexpr std::size_t kMaxRank = 8;

template <class T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string get_string(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void need(std::size_t n, const char* what) const {
    if (n > end_ - pos_) {
      throw Error(ErrorCode::kFormat, std::string("weights: truncated file while reading ") + what);
    }
  }

  std::size_t pos() const { return pos_; }
  void seek(std::size_t pos) { pos_ = pos; }

 private:
  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const std::string& bytes, std::size_t begin, std::size_t end) {
  uLong crc = crc32(0L, Z_NULL, 0);
  const auto* data = reinterpret_cast<const Bytef*>(bytes.data());
  std::size_t pos = begin;
  while (pos < end) {
    const std::size_t chunk = std::min<std::size_t>(end - pos, std::numeric_limits<uInt>::max());
    crc = crc32(crc, data + pos, static_cast<uInt>(chunk));
    pos += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::string serialize_weights(const WeightStore& store) {
  if (store.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw Error(ErrorCode::kInvalidArgument, "weights: too many tensors");
  }
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kWeightFormatVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(store.size()));
  for (const auto& [name, tensor] : store) {
    if (name.empty() || name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw Error(ErrorCode::kInvalidArgument, "weights: tensor name length out of range");
    }
    if (tensor.rank() > kMaxRank) {
      throw Error(ErrorCode::kInvalidArgument, "weights: tensor rank too large for '" + name + "'");
    }
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(tensor.rank()));
    for (std::size_t d : tensor.shape()) put<std::uint64_t>(out, d);
    for (double v : tensor.data()) put<float>(out, static_cast<float>(v));
  }
  put<std::uint32_t>(out, crc_of(out, kHeaderBytes, out.size()));
  return out;
}

WeightStore deserialize_weights(const std::string& bytes) {
  if (bytes.size() < kHeaderBytes + 4) {
    if (bytes.size() >= 4 && std::memcmp(bytes.data(), kMagic, 4) != 0) {
      throw Error(ErrorCode::kFormat, "weights: bad magic");
    }
    throw Error(ErrorCode::kFormat, "weights: truncated file while reading header");
  }
  const std::size_t body_end = bytes.size() - 4;
  Reader r(bytes, body_end);
  if (r.get_string(4, "magic") != std::string(kMagic, 4)) {
    throw Error(ErrorCode::kFormat, "weights: bad magic");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kWeightFormatVersion) {
    throw Error(ErrorCode::kFormat, "weights: unsupported format version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>("tensor count");

  // Parse the records first so a short file reports truncation rather than a
  // checksum failure computed over the wrong region.
  struct Record {
    std::string name;
    Shape shape;
    std::size_t offset;
  };
  std::vector<Record> records;
  for (std::uint32_t i = 0; i < count; ++i) {
    Record rec;
    const auto name_len = r.get<std::uint16_t>("name length");
    if (name_len == 0) throw Error(ErrorCode::kFormat, "weights: empty tensor name");
    rec.name = r.get_string(name_len, "name");
    const auto rank = r.get<std::uint8_t>("rank");
    if (rank > kMaxRank) throw Error(ErrorCode::kFormat, "weights: rank too large for '" + rec.name + "'");
    std::size_t numel = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      const auto dim = r.get<std::uint64_t>("dims");
      if (dim != 0 && numel > std::numeric_limits<std::size_t>::max() / 4 / dim) {
        throw Error(ErrorCode::kFormat, "weights: tensor '" + rec.name + "' is too large");
      }
      rec.shape.push_back(static_cast<std::size_t>(dim));
      numel *= static_cast<std::size_t>(dim);
    }
    rec.offset = r.pos();
    r.need(numel * sizeof(float), "payload");
    r.seek(r.pos() + numel * sizeof(float));
    records.push_back(std::move(rec));
  }
  if (r.pos() != body_end) throw Error(ErrorCode::kFormat, "weights: trailing bytes after last tensor");

  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body_end, 4);
  if (stored != crc_of(bytes, kHeaderBytes, body_end)) {
    throw Error(ErrorCode::kChecksum, "weights: checksum mismatch");
  }

  WeightStore store;
  for (const auto& rec : records) {
    Tensor t(rec.shape);
    for (std::size_t i = 0; i < t.size(); ++i) {
      float v;
      std::memcpy(&v, bytes.data() + rec.offset + i * sizeof(float), sizeof(float));
      t[i] = static_cast<double>(v);
    }
    if (store.contains(rec.name)) {
      throw Error(ErrorCode::kFormat, "weights: duplicate tensor '" + rec.name + "'");
    }
    store.insert(rec.name, std::move(t));
  }
  return store;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "write to '" + path + "' failed");
}

void save_weights(const WeightStore& store, const std::string& path) {
  write_file(path, serialize_weights(store));
}

WeightStore load_weights(const std::string& path) { return deserialize_weights(read_file(path)); }

Tensor read_raw_f32(const std::string& path, const Shape& shape) {
  const std::string bytes = read_file(path);
  Tensor t(shape);
  if (bytes.size() != t.size() * sizeof(float)) {
    throw Error(ErrorCode::kFormat, "raw input '" + path + "' has " + std::to_string(bytes.size()) +
                                        " bytes, expected " +
                                        std::to_string(t.size() * sizeof(float)) + " for shape " +
                                        shape_string(shape));
  }
  for (std::size_t i = 0; i < t.size(); ++i) {
    float v;
    std::memcpy(&v, bytes.data() + i * sizeof(float), sizeof(float));
    t[i] = static_cast<double>(v);
  }
  if (!t.all_finite()) throw Error(ErrorCode::kNonFinite, "raw input '" + path + "' is not finite");
  return t;
}

void write_raw_f32(const Tensor& tensor, const std::string& path) {
  std::string out;
  out.reserve(tensor.size() * sizeof(float));
  for (double v : tensor.data()) put<float>(out, static_cast<float>(v));
  write_file(path, out);
}

}  // namespace l2vit
