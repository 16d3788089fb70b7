/* Copyright 2026 The ffwd Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "ffwd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <sstream>

#include "ffwd/errors.hpp"

namespace ffwd {
namespace {

thread_local FlopCounter* active_counter = nullptr;

std::string shapes(const char* op, const Matrix& a, const Matrix& b) {
  std::ostringstream os;
  os << op << ": shape mismatch " << a.shape_string() << " vs " << b.shape_string();
  return os.str();
}

void require_same_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ValidationError(shapes(op, a, b));
}

template <typename F>
Matrix map(const Matrix& m, F&& f) {
  Matrix out(m.rows(), m.cols());
  auto src = m.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, float fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    std::ostringstream os;
    os << "Matrix: " << data_.size() << " values for shape (" << rows << ", " << cols << ")";
    throw ValidationError(os.str());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0f;
  return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<float>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<float> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ValidationError("Matrix::from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

Matrix Matrix::row_vector(std::span<const float> values) {
  return Matrix(1, values.size(), std::vector<float>(values.begin(), values.end()));
}

void Matrix::append_rows(const Matrix& other) {
  if (rows_ == 0 && data_.empty()) cols_ = other.cols_;
  if (other.cols_ != cols_) throw ValidationError(shapes("append_rows", *this, other));
  data_.insert(data_.end(), other.data_.begin(), other.data_.end());
  rows_ += other.rows_;
}

std::string Matrix::shape_string() const {
  return "(" + std::to_string(rows_) + ", " + std::to_string(cols_) + ")";
}

IndexSet::IndexSet(std::vector<std::size_t> indices, std::size_t bound)
    : indices_(std::move(indices)), bound_(bound) {
  for (std::size_t i = 0; i < indices_.size(); ++i) {
    if (indices_[i] >= bound_) {
      throw ValidationError("IndexSet: index " + std::to_string(indices_[i]) +
                            " out of range for dimension " + std::to_string(bound_));
    }
    if (i > 0 && indices_[i] <= indices_[i - 1]) {
      throw ValidationError("IndexSet: indices must be strictly increasing");
    }
  }
}

IndexSet IndexSet::all(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return IndexSet(std::move(idx), n);
}

bool IndexSet::contains(std::size_t index) const {
  return std::binary_search(indices_.begin(), indices_.end(), index);
}

FlopCounter::FlopCounter() : parent_(active_counter) { active_counter = this; }

FlopCounter::~FlopCounter() { active_counter = parent_; }

void record_matmul_flops(std::uint64_t flops) {
  for (FlopCounter* c = active_counter; c != nullptr; c = c->parent_) c->count_ += flops;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw ValidationError(shapes("matmul", a, b));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Matrix out(m, n);
  std::vector<double> acc(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a(i, p);
      const float* brow = b.row(p).data();
      for (std::size_t j = 0; j < n; ++j) acc[j] += av * static_cast<double>(brow[j]);
    }
    auto orow = out.row(i);
    for (std::size_t j = 0; j < n; ++j) orow[j] = static_cast<float>(acc[j]);
  }
  record_matmul_flops(2ull * m * n * k);
  return out;
}

Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw ValidationError(shapes("matmul_transposed", a, b));
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Matrix out(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    const float* arow = a.row(i).data();
    for (std::size_t j = 0; j < n; ++j) {
      const float* brow = b.row(j).data();
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += static_cast<double>(arow[p]) * brow[p];
      out(i, j) = static_cast<float>(acc);
    }
  }
  record_matmul_flops(2ull * m * n * k);
  return out;
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(c, r) = m(r, c);
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  Matrix out = a;
  add_inplace(out, b);
  return out;
}

void add_inplace(Matrix& a, const Matrix& b) {
  require_same_shape("add", a, b);
  auto dst = a.values();
  auto src = b.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  require_same_shape("hadamard", a, b);
  Matrix out(a.rows(), a.cols());
  auto x = a.values();
  auto y = b.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = x[i] * y[i];
  return out;
}

Matrix scale(const Matrix& m, float factor) {
  return map(m, [factor](float v) { return v * factor; });
}

float sigmoid(float x) {
  if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
  const float e = std::exp(x);
  return e / (1.0f + e);
}

float silu(float x) { return x * sigmoid(x); }

float silu_grad(float x) {
  const float s = sigmoid(x);
  return s * (1.0f + x * (1.0f - s));
}

Matrix silu(const Matrix& m) {
  return map(m, [](float v) { return silu(v); });
}

Matrix relu(const Matrix& m) {
  return map(m, [](float v) { return v > 0.0f ? v : 0.0f; });
}

Matrix rmsnorm(const Matrix& m, std::span<const float> gain, float eps) {
  if (gain.size() != m.cols()) {
    throw ValidationError("rmsnorm: gain length " + std::to_string(gain.size()) +
                          " for input " + m.shape_string());
  }
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto src = m.row(r);
    double sq = 0.0;
    for (float v : src) sq += static_cast<double>(v) * v;
    const double inv = 1.0 / std::sqrt(sq / static_cast<double>(m.cols()) + eps);
    auto dst = out.row(r);
    for (std::size_t c = 0; c < m.cols(); ++c)
      dst[c] = static_cast<float>(src[c] * inv) * gain[c];
  }
  return out;
}

Matrix softmax_rows(const Matrix& m, std::optional<std::size_t> causal_offset) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const std::size_t visible =
        causal_offset ? std::min(m.cols(), r + *causal_offset + 1) : m.cols();
    if (visible == 0) continue;
    auto src = m.row(r);
    auto dst = out.row(r);
    float mx = -std::numeric_limits<float>::infinity();
    for (std::size_t c = 0; c < visible; ++c) mx = std::max(mx, src[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < visible; ++c) {
      const float e = std::exp(src[c] - mx);
      dst[c] = e;
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (std::size_t c = 0; c < visible; ++c) dst[c] = static_cast<float>(dst[c] * inv);
  }
  return out;
}

Matrix gather_rows(const Matrix& m, const IndexSet& idx) {
  if (idx.bound() > m.rows() || (!idx.empty() && idx.indices().back() >= m.rows())) {
    throw ValidationError("gather_rows: index set over " + std::to_string(idx.bound()) +
                          " rows applied to " + m.shape_string());
  }
  Matrix out(idx.size(), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto src = m.row(idx[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

Matrix gather_cols(const Matrix& m, const IndexSet& idx) {
  if (idx.bound() > m.cols() || (!idx.empty() && idx.indices().back() >= m.cols())) {
    throw ValidationError("gather_cols: index set over " + std::to_string(idx.bound()) +
                          " columns applied to " + m.shape_string());
  }
  Matrix out(m.rows(), idx.size());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto src = m.row(r);
    auto dst = out.row(r);
    for (std::size_t i = 0; i < idx.size(); ++i) dst[i] = src[idx[i]];
  }
  return out;
}

IndexSet topk_indices(std::span<const float> scores, std::size_t k) {
  if (k < 1 || k > scores.size()) {
    throw ValidationError("topk_indices: k=" + std::to_string(k) + " outside [1, " +
                          std::to_string(scores.size()) + "]");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return IndexSet(std::move(order), scores.size());
}

std::vector<float> column_l2_norms(const Matrix& m) {
  std::vector<double> acc(m.cols(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    for (std::size_t c = 0; c < m.cols(); ++c) acc[c] += static_cast<double>(row[c]) * row[c];
  }
  std::vector<float> out(m.cols());
  for (std::size_t c = 0; c < m.cols(); ++c) out[c] = static_cast<float>(std::sqrt(acc[c]));
  return out;
}

float max_abs_diff(const Matrix& a, const Matrix& b) {
  require_same_shape("max_abs_diff", a, b);
  float mx = 0.0f;
  auto x = a.values();
  auto y = b.values();
  for (std::size_t i = 0; i < x.size(); ++i) mx = std::max(mx, std::abs(x[i] - y[i]));
  return mx;
}

double squared_frobenius(const Matrix& m) {
  double acc = 0.0;
  for (float v : m.values()) acc += static_cast<double>(v) * v;
  return acc;
}

bool all_finite(const Matrix& m) {
  return std::all_of(m.values().begin(), m.values().end(),
                     [](float v) { return std::isfinite(v); });
}

bool bit_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(float)) == 0;
}

}  // namespace ffwd
