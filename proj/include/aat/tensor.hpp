#pragma once

#include <cstddef>
#include <vector>

namespace aat {

// Dense row-major float32 matrix.  Value semantics are 32-bit throughout;
// statistics-like reductions (softmax normalizers, norm/mean/variance,
// similarity dots) accumulate in 64-bit so downstream sum checks stay stable.
struct Tensor2 {
  int rows = 0;
  int cols = 0;
  std::vector<float> data;

  Tensor2() = default;
  Tensor2(int r, int c) : rows(r), cols(c), data(std::size_t(r) * std::size_t(c), 0.0f) {}

  float* row(int i) { return data.data() + std::size_t(i) * std::size_t(cols); }
  const float* row(int i) const { return data.data() + std::size_t(i) * std::size_t(cols); }

  float& at(int i, int j) { return data[std::size_t(i) * std::size_t(cols) + std::size_t(j)]; }
  float at(int i, int j) const { return data[std::size_t(i) * std::size_t(cols) + std::size_t(j)]; }

  std::size_t size() const { return data.size(); }
  bool same_shape(const Tensor2& o) const { return rows == o.rows && cols == o.cols; }
};

// c = a * b
Tensor2 matmul(const Tensor2& a, const Tensor2& b);
// c = scale * a * b^T
Tensor2 matmul_nt(const Tensor2& a, const Tensor2& b, float scale = 1.0f);
// c = a^T * b  (used by backward passes)
Tensor2 matmul_tn(const Tensor2& a, const Tensor2& b);
// x = x + a * b, accumulating into an existing matrix
void matmul_acc(Tensor2& x, const Tensor2& a, const Tensor2& b);

Tensor2 add(const Tensor2& a, const Tensor2& b);
void add_inplace(Tensor2& a, const Tensor2& b);
// adds a length-cols bias vector to every row
void add_row_inplace(Tensor2& x, const std::vector<float>& bias);

Tensor2 transpose(const Tensor2& a);

// Row-wise softmax with max subtraction; throws std::invalid_argument on a
// non-finite input entry.
Tensor2 softmax_rows(const Tensor2& m);

// Per-row standardization followed by a learned column-wise affine map.
Tensor2 layer_norm(const Tensor2& x, const std::vector<float>& gain,
                   const std::vector<float>& bias, float eps = 1e-5f);

Tensor2 gelu(const Tensor2& x);
float gelu_scalar(float x);
float gelu_grad_scalar(float x);

// In-place L2 normalization of one row vector; returns the norm.
double l2_normalize(float* v, int n);

// 64-bit accumulated dot product.
double dot64(const float* a, const float* b, int n);

bool all_finite(const Tensor2& t);

}  // namespace aat
