// Copyright 2026 The MRDL Authors. All Rights Reserved.
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

#ifndef MRDL_COMMON_HPP_
#define MRDL_COMMON_HPP_

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

#include <oneapi/tbb/blocked_range.h>
#include <oneapi/tbb/global_control.h>
#include <oneapi/tbb/parallel_for.h>

namespace mrdl {

/// Failure categories. The CLI maps these onto process exit codes.
enum class ErrorCode {
  kShapeMismatch,
  kInvalidArgument,
  kNonFinite,
  kBadMagic,
  kBadVersion,
  kTruncated,
  kIo,
  kCacheMismatch,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kShapeMismatch: return "shape mismatch";
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kNonFinite: return "non-finite value";
    case ErrorCode::kBadMagic: return "bad magic";
    case ErrorCode::kBadVersion: return "unsupported version";
    case ErrorCode::kTruncated: return "truncated input";
    case ErrorCode::kIo: return "i/o error";
    case ErrorCode::kCacheMismatch: return "cache mismatch";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool ok, ErrorCode code, const std::string& what) {
  if (!ok) throw Error(code, what);
}

/// Formats a list of streamable values as "(a, b, c)" for shape reports.
template <typename... Ts>
std::string dims_str(const Ts&... dims) {
  std::ostringstream os;
  os << '(';
  std::size_t i = 0;
  ((os << (i++ ? ", " : "") << dims), ...);
  os << ')';
  return os.str();
}

// ---------------------------------------------------------------------------
// Random numbers.
//
// The standard <random> distributions are implementation-defined, so the
// conversions below are fixed here to keep generated data and initial
// parameters identical across standard libraries. The engine itself is
// splitmix64, which also serves as the stream splitter for sub-seeds.
// ---------------------------------------------------------------------------

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform in (0, 1].
  double uniform_open_closed() { return 1.0 - uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Lemire-style rejection keeps the draw unbiased.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_open_closed();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  /// Derives an independent stream; `tag` separates streams split from one seed.
  Rng split(std::uint64_t tag) const {
    Rng tmp(state_ ^ (0xD1B54A32D192ED03ULL * (tag + 1)));
    return Rng(tmp.next_u64());
  }

  std::uint64_t state() const { return state_; }
  void set_state(std::uint64_t s) {
    state_ = s;
    has_spare_ = false;
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// ---------------------------------------------------------------------------
// Parallelism. Every parallel loop in the library writes disjoint outputs and
// keeps a fixed summation order per output element, so results do not depend
// on the thread count.
// ---------------------------------------------------------------------------

/// Reads MRDL_THREADS (0 or unset = automatic).
inline std::size_t threads_from_env() {
  const char* v = std::getenv("MRDL_THREADS");
  if (v == nullptr || *v == '\0') return 0;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (end == v || n < 0) return 0;
  return static_cast<std::size_t>(n);
}

/// Caps internal parallelism for the lifetime of the object. 0 leaves the
/// scheduler default in place.
class ThreadLimit {
 public:
  explicit ThreadLimit(std::size_t threads) {
    if (threads > 0) {
      control_ = std::make_unique<tbb::global_control>(
          tbb::global_control::max_allowed_parallelism, threads);
    }
  }

 private:
  std::unique_ptr<tbb::global_control> control_;
};

template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  if (n == 0) return;
  if (n == 1) {
    fn(std::size_t{0});
    return;
  }
  tbb::parallel_for(tbb::blocked_range<std::size_t>(0, n),
                    [&](const tbb::blocked_range<std::size_t>& r) {
                      for (std::size_t i = r.begin(); i != r.end(); ++i) fn(i);
                    });
}

}  // namespace mrdl

#endif  // MRDL_COMMON_HPP_
