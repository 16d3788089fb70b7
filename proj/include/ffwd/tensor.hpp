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

// Dense f32 matrix type and the numeric kernels every other module builds on.
//
// All matrices are row-major. Matrix products accumulate in double and round
// once per output element, so results are independent of blocking and
// identical across repeated runs.

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ffwd {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f);
  Matrix(std::size_t rows, std::size_t cols, std::vector<float> data);

  static Matrix identity(std::size_t n);
  static Matrix from_rows(std::initializer_list<std::initializer_list<float>> rows);
  static Matrix row_vector(std::span<const float> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }
  const std::vector<float>& storage() const { return data_; }

  // Appends the rows of `other`; column counts must agree (an empty matrix
  // adopts the column count of the first append).
  void append_rows(const Matrix& other);

  std::string shape_string() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

// Strictly increasing list of positions into some dimension.
class IndexSet {
 public:
  IndexSet() = default;
  // Throws ValidationError unless `indices` is strictly increasing and every
  // entry is below `bound`.
  IndexSet(std::vector<std::size_t> indices, std::size_t bound);

  static IndexSet all(std::size_t n);

  std::size_t size() const { return indices_.size(); }
  bool empty() const { return indices_.empty(); }
  std::size_t bound() const { return bound_; }
  std::size_t operator[](std::size_t i) const { return indices_[i]; }
  const std::vector<std::size_t>& indices() const { return indices_; }
  auto begin() const { return indices_.begin(); }
  auto end() const { return indices_.end(); }
  bool contains(std::size_t index) const;

  friend bool operator==(const IndexSet&, const IndexSet&) = default;

 private:
  std::vector<std::size_t> indices_;
  std::size_t bound_ = 0;
};

// Thread-local matmul FLOP instrumentation. Every live counter on the current
// thread observes every matmul issued while it is alive (2*m*n*k per product),
// so counters nest.
class FlopCounter {
 public:
  FlopCounter();
  ~FlopCounter();
  FlopCounter(const FlopCounter&) = delete;
  FlopCounter& operator=(const FlopCounter&) = delete;

  std::uint64_t count() const { return count_; }

 private:
  friend void record_matmul_flops(std::uint64_t);
  std::uint64_t count_ = 0;
  FlopCounter* parent_ = nullptr;
};

void record_matmul_flops(std::uint64_t flops);

// a (m x k) * b (k x n).
Matrix matmul(const Matrix& a, const Matrix& b);
// a (m x k) * b^T where b is (n x k).
Matrix matmul_transposed(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& m);
Matrix add(const Matrix& a, const Matrix& b);
void add_inplace(Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& m, float factor);

float sigmoid(float x);
float silu(float x);
// d/dx silu(x)
float silu_grad(float x);

Matrix silu(const Matrix& m);
Matrix relu(const Matrix& m);

// Per-row x / sqrt(mean(x^2) + eps) * gain.
Matrix rmsnorm(const Matrix& m, std::span<const float> gain, float eps);

// Row softmax. With `causal_offset`, row r may only see columns
// c <= r + *causal_offset; hidden columns come out exactly 0.
Matrix softmax_rows(const Matrix& m, std::optional<std::size_t> causal_offset = std::nullopt);

Matrix gather_rows(const Matrix& m, const IndexSet& idx);
Matrix gather_cols(const Matrix& m, const IndexSet& idx);

// Positions of the k largest scores, returned in increasing index order.
// Equal scores prefer the lower index.
IndexSet topk_indices(std::span<const float> scores, std::size_t k);

// L2 norm of each column over all rows.
std::vector<float> column_l2_norms(const Matrix& m);

float max_abs_diff(const Matrix& a, const Matrix& b);
double squared_frobenius(const Matrix& m);
bool all_finite(const Matrix& m);
// Byte-for-byte equality of shapes and payloads.
bool bit_equal(const Matrix& a, const Matrix& b);

}  // namespace ffwd
