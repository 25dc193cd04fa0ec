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

#include "l2vit/csv.hpp"

#include <charconv>
#include <cmath>

#include "l2vit/tensor.hpp"

namespace l2vit {

CsvTable::CsvTable(std::vector<std::string> header) : header_(std::move(header)) {
  if (header_.empty()) throw Error(ErrorCode::kInvalidArgument, "csv: empty header");
}

CsvTable& CsvTable::row() {
  if (!rows_.empty() && rows_.back().size() != header_.size()) {
    throw Error(ErrorCode::kInvalidArgument, "csv: previous row is incomplete");
  }
  rows_.emplace_back();
  return *this;
}

CsvTable& CsvTable::add(const std::string& field) {
  if (rows_.empty() || rows_.back().size() == header_.size()) {
    throw Error(ErrorCode::kInvalidArgument, "csv: too many fields in row");
  }
  rows_.back().push_back(field);
  return *this;
}

CsvTable& CsvTable::add(double value) { return add(format_double(value)); }

CsvTable& CsvTable::add(std::uint64_t value) { return add(std::to_string(value)); }

std::string CsvTable::str() const {
  std::string out;
  auto emit = [&](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out += ',';
      out += csv_quote(fields[i]);
    }
    out += "\r\n";
  };
  emit(header_);
  for (const auto& r : rows_) {
    if (r.size() != header_.size()) throw Error(ErrorCode::kInvalidArgument, "csv: ragged row");
    emit(r);
  }
  return out;
}

std::string csv_quote(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

}  // namespace l2vit
