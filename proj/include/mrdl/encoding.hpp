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

// Residual encoding layer.
//
// N descriptors x_i are softly assigned to K learnable codewords c_k, with a
// learnable smoothing factor s_k per codeword:
//
//   r_ik = x_i - c_k
//   a_ik = exp(-s_k |r_ik|^2 + phi_i) / sum_j exp(-s_j |r_ij|^2 + phi_i)
//   phi_i = min_k s_k |r_ik|^2
//   eps_k = sum_i a_ik r_ik
//
// phi_i cancels in the ratio but caps every exponent at 0, so the assignment
// never overflows. Each eps_k block is then L2-normalised on its own and the
// K blocks are concatenated into a K*D vector whose length does not depend on N.

#ifndef MRDL_ENCODING_HPP_
#define MRDL_ENCODING_HPP_

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mrdl/common.hpp"
#include "mrdl/tensor.hpp"

namespace mrdl {

/// N x D descriptors, one per row.
using DescriptorBatch = Matrix;

struct Codebook {
  Matrix codewords;               // K x D
  std::vector<double> smoothing;  // K

  std::size_t k() const { return codewords.rows(); }
  std::size_t d() const { return codewords.cols(); }

  friend bool operator==(const Codebook&, const Codebook&) = default;
};

/// Blocks whose pre-normalisation norm falls below this are emitted as zeros.
inline constexpr double kNormEpsilon = 1e-12;

struct EncodeCache {
  std::size_t n = 0, k = 0, d = 0;
  std::vector<double> residuals;   // N x K x D, r_ik
  Matrix sq_norms;                 // N x K, |r_ik|^2
  std::vector<double> shifts;      // N, phi_i
  Matrix assignments;              // N x K, a_ik
  Matrix raw;                      // K x D, eps_k before normalisation
  std::vector<double> block_norms; // K, |eps_k|

  std::span<const double> residual(std::size_t i, std::size_t kk) const {
    return {residuals.data() + (i * k + kk) * d, d};
  }
};

struct EncodingVector {
  std::size_t k = 0, d = 0;
  std::vector<double> values;  // K*D, block k at [k*D, (k+1)*D)

  std::span<const double> block(std::size_t kk) const { return {values.data() + kk * d, d}; }
};

/// Codewords uniform in [-1/sqrt(K), 1/sqrt(K)], smoothing factors uniform in (0, 1].
inline Codebook init_codebook(std::size_t k, std::size_t d, std::uint64_t seed) {
  require(k >= 1 && d >= 1, ErrorCode::kInvalidArgument,
          "codebook needs K >= 1 and D >= 1, got " + dims_str(k, d));
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(k));
  Codebook book{Matrix(k, d), std::vector<double>(k)};
  for (double& v : book.codewords.flat()) v = rng.uniform(-bound, bound);
  for (double& s : book.smoothing) s = rng.uniform_open_closed();
  return book;
}

/// Number of smoothing factors that have gone negative (training continues,
/// but callers may want to report it).
inline std::size_t negative_smoothing_count(const Codebook& book) {
  std::size_t n = 0;
  for (double s : book.smoothing) n += s < 0.0;
  return n;
}

inline void check_codebook(const Codebook& book) {
  require(book.k() >= 1 && book.d() >= 1, ErrorCode::kShapeMismatch, "empty codebook");
  require(book.smoothing.size() == book.k(), ErrorCode::kShapeMismatch,
          "codebook has " + std::to_string(book.smoothing.size()) + " smoothing factors for " +
              std::to_string(book.k()) + " codewords");
}

/// Residuals, shifted soft assignments and everything the backward pass needs.
inline EncodeCache soft_assign(const DescriptorBatch& batch, const Codebook& book) {
  check_codebook(book);
  require(batch.rows() >= 1, ErrorCode::kShapeMismatch, "descriptor batch is empty");
  require(batch.cols() == book.d(), ErrorCode::kShapeMismatch,
          "descriptor dim " + std::to_string(batch.cols()) + " != codeword dim " +
              std::to_string(book.d()));
  require(all_finite(batch.flat()), ErrorCode::kNonFinite, "descriptor batch has non-finite entries");

  const std::size_t n = batch.rows(), k = book.k(), d = book.d();
  EncodeCache c;
  c.n = n;
  c.k = k;
  c.d = d;
  c.residuals.resize(n * k * d);
  c.sq_norms = Matrix(n, k);
  c.shifts.resize(n);
  c.assignments = Matrix(n, k);

  for (std::size_t i = 0; i < n; ++i) {
    auto x = batch.row(i);
    double phi = 0.0;
    for (std::size_t kk = 0; kk < k; ++kk) {
      auto cw = book.codewords.row(kk);
      double* r = c.residuals.data() + (i * k + kk) * d;
      double sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        r[j] = x[j] - cw[j];
        sq += r[j] * r[j];
      }
      c.sq_norms(i, kk) = sq;
      const double score = book.smoothing[kk] * sq;
      // Strict comparison keeps the lowest k on ties.
      if (kk == 0 || score < phi) phi = score;
    }
    c.shifts[i] = phi;
    auto a = c.assignments.row(i);
    double sum = 0.0;
    for (std::size_t kk = 0; kk < k; ++kk) {
      a[kk] = std::exp(-book.smoothing[kk] * c.sq_norms(i, kk) + phi);
      sum += a[kk];
    }
    for (double& v : a) v /= sum;
  }
  return c;
}

/// eps_k = sum_i a_ik r_ik, summed in descriptor order. Stores the result in
/// the cache and returns it.
inline const Matrix& aggregate(EncodeCache& cache) {
  cache.raw = Matrix(cache.k, cache.d);
  for (std::size_t kk = 0; kk < cache.k; ++kk) {
    auto e = cache.raw.row(kk);
    for (std::size_t i = 0; i < cache.n; ++i) {
      const double a = cache.assignments(i, kk);
      auto r = cache.residual(i, kk);
      for (std::size_t j = 0; j < cache.d; ++j) e[j] += a * r[j];
    }
  }
  return cache.raw;
}

/// Per-block L2 normalisation of a K x D raw encoding.
inline EncodingVector normalize(const Matrix& raw, std::vector<double>* norms_out = nullptr) {
  EncodingVector out{raw.rows(), raw.cols(), std::vector<double>(raw.size(), 0.0)};
  if (norms_out) norms_out->assign(raw.rows(), 0.0);
  for (std::size_t kk = 0; kk < raw.rows(); ++kk) {
    auto e = raw.row(kk);
    double sq = 0.0;
    for (double v : e) sq += v * v;
    const double norm = std::sqrt(sq);
    if (norms_out) (*norms_out)[kk] = norm;
    if (norm < kNormEpsilon) continue;
    for (std::size_t j = 0; j < raw.cols(); ++j) out.values[kk * raw.cols() + j] = e[j] / norm;
  }
  return out;
}

struct EncodeResult {
  EncodingVector encoding;
  EncodeCache cache;
};

inline EncodeResult encode_forward(const DescriptorBatch& batch, const Codebook& book) {
  EncodeResult res;
  res.cache = soft_assign(batch, book);
  aggregate(res.cache);
  res.encoding = normalize(res.cache.raw, &res.cache.block_norms);
  return res;
}

struct EncodeGrads {
  Matrix x;                   // N x D
  Matrix codewords;           // K x D
  std::vector<double> smoothing;  // K
};

/// Backward pass through normalisation, aggregation and soft assignment.
///
/// With g_k = dl/d(eps_k), the per-element chain is
///   dl/da_ik  = g_k . r_ik
///   dl/du_ik  = a_ik (dl/da_ik - sum_j a_ij dl/da_ij)      u_ik = -s_k |r_ik|^2
///   dl/ds_k   = -sum_i dl/du_ik |r_ik|^2
///   dl/dr_ik  = a_ik g_k - 2 s_k dl/du_ik r_ik
///   dl/dx_i   = sum_k dl/dr_ik,   dl/dc_k = -sum_i dl/dr_ik
/// The softmax term couples every codeword to every assignment of descriptor i,
/// so c_j and s_j for j != k also receive gradient through eps_k.
inline EncodeGrads encode_backward(std::span<const double> grad_encoding, const DescriptorBatch& batch,
                                   const Codebook& book, const EncodeCache& cache) {
  const std::size_t n = cache.n, k = cache.k, d = cache.d;
  require(batch.rows() == n && batch.cols() == d && book.k() == k && book.d() == d &&
              cache.assignments.rows() == n && cache.raw.rows() == k && cache.block_norms.size() == k,
          ErrorCode::kCacheMismatch,
          "encode cache " + dims_str(n, k, d) + " does not match batch " + dims_str(batch) +
              " / codebook " + dims_str(book.k(), book.d()));
  require(grad_encoding.size() == k * d, ErrorCode::kShapeMismatch,
          "grad_encoding length " + std::to_string(grad_encoding.size()) + " != K*D = " +
              std::to_string(k * d));

  // Through the per-block normalisation: g = (G - e (e.G)) / |eps|.
  Matrix g(k, d);
  for (std::size_t kk = 0; kk < k; ++kk) {
    const double norm = cache.block_norms[kk];
    if (norm < kNormEpsilon) continue;
    auto eps = cache.raw.row(kk);
    auto gk = g.row(kk);
    const double* G = grad_encoding.data() + kk * d;
    double dot = 0.0;
    for (std::size_t j = 0; j < d; ++j) dot += (eps[j] / norm) * G[j];
    for (std::size_t j = 0; j < d; ++j) gk[j] = (G[j] - (eps[j] / norm) * dot) / norm;
  }

  EncodeGrads out{Matrix(n, d), Matrix(k, d), std::vector<double>(k, 0.0)};
  std::vector<double> da(k), du(k);
  for (std::size_t i = 0; i < n; ++i) {
    auto a = cache.assignments.row(i);
    double mean = 0.0;
    for (std::size_t kk = 0; kk < k; ++kk) {
      auto r = cache.residual(i, kk);
      auto gk = g.row(kk);
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += gk[j] * r[j];
      da[kk] = dot;
      mean += a[kk] * dot;
    }
    auto gx = out.x.row(i);
    for (std::size_t kk = 0; kk < k; ++kk) {
      du[kk] = a[kk] * (da[kk] - mean);
      out.smoothing[kk] -= du[kk] * cache.sq_norms(i, kk);
      auto r = cache.residual(i, kk);
      auto gk = g.row(kk);
      auto gc = out.codewords.row(kk);
      const double coef = -2.0 * book.smoothing[kk] * du[kk];
      for (std::size_t j = 0; j < d; ++j) {
        const double dr = a[kk] * gk[j] + coef * r[j];
        gx[j] += dr;
        gc[j] -= dr;
      }
    }
  }
  return out;
}

}  // namespace mrdl

#endif  // MRDL_ENCODING_HPP_
