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

// Little-endian binary encoding for checkpoints. Doubles are stored as their
// IEEE-754 bit patterns so a round trip is exact.

#include <bit>
#include <cstdio>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "fedmr/error.hpp"
#include "fedmr/tape.hpp"

namespace fedmr::io {

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u64(std::uint64_t v) {
    for (int b = 0; b < 8; ++b) buf_.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    buf_.append(s);
  }
  void raw(const char* p, std::size_t n) { buf_.append(p, n); }
  void sizes(const std::vector<std::size_t>& v) {
    u64(v.size());
    for (auto x : v) u64(x);
  }
  void tensor(const Tensor& t) {
    sizes(t.shape());
    for (double v : t.data()) f64(v);
  }
  void params(const ParamStore& s) {
    u64(s.size());
    for (const auto& e : s) {
      str(e.name);
      tensor(e.param.value);
    }
  }

  const std::string& bytes() const { return buf_; }

  void save(const std::string& path) const {
    const std::string tmp = path + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw RuntimeError("cannot write " + tmp);
      out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
      if (!out) throw RuntimeError("short write to " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
      throw RuntimeError("cannot move " + tmp + " to " + path);
  }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string bytes, std::string what)
      : buf_(std::move(bytes)), what_(std::move(what)) {}

  static Reader from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path);
    return Reader({std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()},
                  path);
  }

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + b])) << (8 * b);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<std::size_t> sizes() {
    const std::uint64_t n = u64();
    need(n * 8);
    std::vector<std::size_t> v(n);
    for (auto& x : v) x = u64();
    return v;
  }
  Tensor tensor() {
    auto shape = sizes();
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    need(n * 8);
    std::vector<double> data(n);
    for (auto& v : data) v = f64();
    return Tensor(std::move(shape), std::move(data));
  }
  ParamStore params() {
    ParamStore s;
    const std::uint64_t n = u64();
    for (std::uint64_t k = 0; k < n; ++k) {
      std::string name = str();
      s.add(std::move(name), tensor());
    }
    return s;
  }

  bool at_end() const { return pos_ == buf_.size(); }
  void expect_end() const {
    if (!at_end()) throw ValidationError(what_ + ": trailing bytes");
  }

 private:
  void need(std::uint64_t n) const {
    if (n > buf_.size() - pos_) throw ValidationError(what_ + ": truncated");
  }

  std::string buf_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace fedmr::io
