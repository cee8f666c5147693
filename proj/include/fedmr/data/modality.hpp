/*
 * Copyright 2026 The FedMR Simulator Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

// FMR1 modality tables: "FMR1", u32 version (1), u32 rows, u32 dim,
// rows*dim little-endian f32 row-major, then one mask byte per row
// (0 = present, 1 = missing). All integers little-endian.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedmr/data/interactions.hpp"
#include "fedmr/error.hpp"
#include "fedmr/tensor.hpp"

namespace fedmr::data {

inline constexpr std::array<char, 4> kFmrMagic = {'F', 'M', 'R', '1'};
inline constexpr std::uint32_t kFmrVersion = 1;

class FormatError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};
class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};
class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};
class RowCountError : public FormatError {
 public:
  using FormatError::FormatError;
};

struct ModalityTable {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<float> values;         // rows * dim
  std::vector<std::uint8_t> missing;  // rows; 1 = missing

  static ModalityTable zeros(std::size_t rows, std::size_t dim) {
    return {rows, dim, std::vector<float>(rows * dim, 0.0f),
            std::vector<std::uint8_t>(rows, 0)};
  }

  float& at(std::size_t r, std::size_t c) { return values[r * dim + c]; }
  float at(std::size_t r, std::size_t c) const { return values[r * dim + c]; }
  bool is_missing(std::size_t r) const { return missing[r] != 0; }
  std::size_t missing_count() const {
    std::size_t n = 0;
    for (auto m : missing) n += m ? 1 : 0;
    return n;
  }

  // Widened copy for compute.
  Tensor to_tensor() const {
    Tensor t = Tensor::zeros(rows, dim);
    for (std::size_t i = 0; i < values.size(); ++i) t[i] = values[i];
    return t;
  }

  ModalityTable select_rows(std::span<const std::size_t> idx) const {
    ModalityTable out = zeros(idx.size(), dim);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      if (idx[r] >= rows)
        throw ValidationError("modality table: row " + std::to_string(idx[r]) +
                              " out of range");
      std::copy_n(values.begin() + static_cast<long>(idx[r] * dim), dim,
                  out.values.begin() + static_cast<long>(r * dim));
      out.missing[r] = missing[idx[r]];
    }
    return out;
  }

  friend bool operator==(const ModalityTable&, const ModalityTable&) = default;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline std::string encode_modality_table(const ModalityTable& t) {
  if (t.values.size() != t.rows * t.dim || t.missing.size() != t.rows)
    throw RuntimeError("modality table: payload does not match declared size");
  std::string out(kFmrMagic.begin(), kFmrMagic.end());
  detail::put_u32(out, kFmrVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(t.rows));
  detail::put_u32(out, static_cast<std::uint32_t>(t.dim));
  out.reserve(out.size() + t.values.size() * 4 + t.rows);
  for (float f : t.values) detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
  for (auto m : t.missing) out.push_back(static_cast<char>(m ? 1 : 0));
  return out;
}

inline ModalityTable decode_modality_table(
    std::span<const unsigned char> bytes,
    std::optional<std::size_t> expected_rows = std::nullopt,
    const std::string& what = "modality table") {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kFmrMagic.data(), 4) != 0)
    throw BadMagicError(what + ": bad magic (expected FMR1)");
  if (bytes.size() < 16) throw TruncatedError(what + ": truncated header");
  const std::uint32_t version = detail::get_u32(bytes.data() + 4);
  if (version != kFmrVersion)
    throw FormatError(what + ": unsupported version " + std::to_string(version));
  ModalityTable t;
  t.rows = detail::get_u32(bytes.data() + 8);
  t.dim = detail::get_u32(bytes.data() + 12);
  const std::size_t need = 16 + t.rows * t.dim * 4 + t.rows;
  if (bytes.size() < need)
    throw TruncatedError(what + ": truncated payload (" +
                         std::to_string(bytes.size()) + " of " +
                         std::to_string(need) + " bytes)");
  if (bytes.size() > need)
    throw FormatError(what + ": trailing bytes after payload");
  if (expected_rows && *expected_rows != t.rows)
    throw RowCountError(what + ": has " + std::to_string(t.rows) +
                        " rows but the item index has " +
                        std::to_string(*expected_rows));
  t.values.resize(t.rows * t.dim);
  const unsigned char* p = bytes.data() + 16;
  for (std::size_t i = 0; i < t.values.size(); ++i, p += 4)
    t.values[i] = std::bit_cast<float>(detail::get_u32(p));
  t.missing.assign(p, p + t.rows);
  for (auto& m : t.missing) {
    if (m > 1) throw FormatError(what + ": mask bytes must be 0 or 1");
  }
  return t;
}

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline ModalityTable load_modality_table(
    const std::string& path,
    std::optional<std::size_t> expected_rows = std::nullopt) {
  const auto bytes = read_file_bytes(path);
  return decode_modality_table(bytes, expected_rows, path);
}

inline void write_modality_table(const std::string& path,
                                 const ModalityTable& t) {
  const std::string bytes = encode_modality_table(t);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Sidecar: `row_index<TAB>item_external_id`, same layout as an index file.
inline IdIndex read_sidecar(const std::string& path) { return read_index(path); }
inline void write_sidecar(const std::string& path, const IdIndex& rows) {
  write_index(path, rows);
}

enum class FillMode { kMean, kDesignated };

// Replaces missing rows and clears the mask. kMean uses the column mean of
// the present rows; kDesignated copies `fill` verbatim.
inline ModalityTable fill_missing(ModalityTable t, FillMode mode,
                                  std::span<const float> fill = {}) {
  if (t.missing_count() == 0) return t;
  std::vector<float> row(t.dim);
  if (mode == FillMode::kMean) {
    std::vector<double> sum(t.dim, 0.0);
    std::size_t present = 0;
    for (std::size_t r = 0; r < t.rows; ++r) {
      if (t.is_missing(r)) continue;
      ++present;
      for (std::size_t c = 0; c < t.dim; ++c) sum[c] += t.at(r, c);
    }
    if (present == 0)
      throw ValidationError("fill_missing: every row is missing, no mean");
    for (std::size_t c = 0; c < t.dim; ++c)
      row[c] = static_cast<float>(sum[c] / static_cast<double>(present));
  } else {
    if (fill.size() != t.dim)
      throw ValidationError("fill_missing: fill vector has dim " +
                            std::to_string(fill.size()) + ", table has " +
                            std::to_string(t.dim));
    std::copy(fill.begin(), fill.end(), row.begin());
  }
  for (std::size_t r = 0; r < t.rows; ++r) {
    if (!t.is_missing(r)) continue;
    std::copy(row.begin(), row.end(),
              t.values.begin() + static_cast<long>(r * t.dim));
    t.missing[r] = 0;
  }
  for (float v : t.values)
    if (!std::isfinite(v))
      throw ValidationError("fill_missing: table contains non-finite values");
  return t;
}

}  // namespace fedmr::data
