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

#include <cstdint>
#include <string>
#include <vector>

namespace l2vit {

/// RFC 4180 table: comma separated, CRLF line ends, fields quoted when they
/// contain a comma, quote, CR or LF. Numbers use '.' regardless of locale.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header);

  CsvTable& row();
  CsvTable& add(const std::string& field);
  CsvTable& add(double value);
  CsvTable& add(std::uint64_t value);

  std::size_t rows() const noexcept { return rows_.size(); }
  std::string str() const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

std::string csv_quote(const std::string& field);
/// Shortest round-trip decimal form of `value`.
std::string format_double(double value);

}  // namespace l2vit
