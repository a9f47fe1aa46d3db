// phonespot/include/phonespot/common.h
//
// Copyright 2026 The Phonespot Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace phonespot {

inline constexpr const char kVersion[] = "0.1.0";

// Base error for everything thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad configuration, bad arguments, malformed control-plane text files
// (lexicons, keyword lists, trial CSVs).  CLI maps this to exit code 2.
struct ConfigError : Error {
  using Error::Error;
};

// Filesystem failures and malformed data-plane files (KWSP/KWSE/KWSW).
// CLI maps this to exit code 3.
struct IoError : Error {
  using Error::Error;
};

// Dense row-major matrix of doubles.  Small models only; no BLAS.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double &operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  bool empty() const { return data.empty(); }
};

using Vec = std::vector<double>;

// Portable uniform draws.  std::mt19937 output is fully specified by the
// standard; the distributions are not, so we build our own on top of the
// raw 32-bit stream to keep every seed reproducible across toolchains.
inline double UniformUnit(std::mt19937 &g) {
  return static_cast<double>(g()) * (1.0 / 4294967296.0);  // [0,1)
}

inline double UniformRange(std::mt19937 &g, double lo, double hi) {
  return lo + (hi - lo) * UniformUnit(g);
}

// Integer in [0, n).  n must be positive.
inline int UniformInt(std::mt19937 &g, int n) {
  int v = static_cast<int>(UniformUnit(g) * n);
  return v >= n ? n - 1 : v;
}

}  // namespace phonespot
