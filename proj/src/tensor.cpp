#include "aat/tensor.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace aat {

Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
  if (a.cols != b.rows) throw std::invalid_argument("matmul: inner dimensions differ");
  Tensor2 c(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    const float* ar = a.row(i);
    float* cr = c.row(i);
    for (int k = 0; k < a.cols; ++k) {
      const float aik = ar[k];
      const float* br = b.row(k);
      for (int j = 0; j < b.cols; ++j) cr[j] += aik * br[j];
    }
  }
  return c;
}

void matmul_acc(Tensor2& x, const Tensor2& a, const Tensor2& b) {
  if (a.cols != b.rows) throw std::invalid_argument("matmul_acc: inner dimensions differ");
  if (x.rows != a.rows || x.cols != b.cols)
    throw std::invalid_argument("matmul_acc: output shape mismatch");
  for (int i = 0; i < a.rows; ++i) {
    const float* ar = a.row(i);
    float* xr = x.row(i);
    for (int k = 0; k < a.cols; ++k) {
      const float aik = ar[k];
      const float* br = b.row(k);
      for (int j = 0; j < b.cols; ++j) xr[j] += aik * br[j];
    }
  }
}

Tensor2 matmul_nt(const Tensor2& a, const Tensor2& b, float scale) {
  if (a.cols != b.cols) throw std::invalid_argument("matmul_nt: inner dimensions differ");
  Tensor2 c(a.rows, b.rows);
  for (int i = 0; i < a.rows; ++i) {
    const float* ar = a.row(i);
    float* cr = c.row(i);
    for (int j = 0; j < b.rows; ++j) {
      const float* br = b.row(j);
      float acc = 0.0f;
      for (int k = 0; k < a.cols; ++k) acc += ar[k] * br[k];
      cr[j] = scale * acc;
    }
  }
  return c;
}

Tensor2 matmul_tn(const Tensor2& a, const Tensor2& b) {
  if (a.rows != b.rows) throw std::invalid_argument("matmul_tn: inner dimensions differ");
  Tensor2 c(a.cols, b.cols);
  for (int k = 0; k < a.rows; ++k) {
    const float* ar = a.row(k);
    const float* br = b.row(k);
    for (int i = 0; i < a.cols; ++i) {
      const float aki = ar[i];
      float* cr = c.row(i);
      for (int j = 0; j < b.cols; ++j) cr[j] += aki * br[j];
    }
  }
  return c;
}

Tensor2 add(const Tensor2& a, const Tensor2& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("add: shape mismatch");
  Tensor2 c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data[i] += b.data[i];
  return c;
}

void add_inplace(Tensor2& a, const Tensor2& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("add_inplace: shape mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) a.data[i] += b.data[i];
}

void add_row_inplace(Tensor2& x, const std::vector<float>& bias) {
  if (int(bias.size()) != x.cols) throw std::invalid_argument("add_row_inplace: bias length");
  for (int i = 0; i < x.rows; ++i) {
    float* r = x.row(i);
    for (int j = 0; j < x.cols; ++j) r[j] += bias[std::size_t(j)];
  }
}

Tensor2 transpose(const Tensor2& a) {
  Tensor2 t(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) t.at(j, i) = a.at(i, j);
  return t;
}

Tensor2 softmax_rows(const Tensor2& m) {
  Tensor2 out(m.rows, m.cols);
  for (int i = 0; i < m.rows; ++i) {
    const float* r = m.row(i);
    float* o = out.row(i);
    float mx = r[0];
    for (int j = 0; j < m.cols; ++j) {
      if (!std::isfinite(r[j])) throw std::invalid_argument("softmax_rows: non-finite input");
      if (r[j] > mx) mx = r[j];
    }
    double sum = 0.0;
    for (int j = 0; j < m.cols; ++j) {
      const float e = std::exp(r[j] - mx);
      o[j] = e;
      sum += double(e);
    }
    const float inv = float(1.0 / sum);
    for (int j = 0; j < m.cols; ++j) o[j] *= inv;
  }
  return out;
}

Tensor2 layer_norm(const Tensor2& x, const std::vector<float>& gain,
                   const std::vector<float>& bias, float eps) {
  if (int(gain.size()) != x.cols || int(bias.size()) != x.cols)
    throw std::invalid_argument("layer_norm: parameter length mismatch");
  Tensor2 out(x.rows, x.cols);
  for (int i = 0; i < x.rows; ++i) {
    const float* r = x.row(i);
    float* o = out.row(i);
    double mean = 0.0;
    for (int j = 0; j < x.cols; ++j) mean += double(r[j]);
    mean /= double(x.cols);
    double var = 0.0;
    for (int j = 0; j < x.cols; ++j) {
      const double d = double(r[j]) - mean;
      var += d * d;
    }
    var /= double(x.cols);
    const float inv = float(1.0 / std::sqrt(var + double(eps)));
    const float mu = float(mean);
    for (int j = 0; j < x.cols; ++j)
      o[j] = (r[j] - mu) * inv * gain[std::size_t(j)] + bias[std::size_t(j)];
  }
  return out;
}

float gelu_scalar(float x) {
  return 0.5f * x * (1.0f + std::erf(x * 0.70710678118654752440f));
}

float gelu_grad_scalar(float x) {
  const float cdf = 0.5f * (1.0f + std::erf(x * 0.70710678118654752440f));
  const float pdf = std::exp(-0.5f * x * x) * 0.39894228040143267794f;
  return cdf + x * pdf;
}

Tensor2 gelu(const Tensor2& x) {
  Tensor2 out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = gelu_scalar(x.data[i]);
  return out;
}

double l2_normalize(float* v, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += double(v[i]) * double(v[i]);
  const double norm = std::sqrt(s);
  if (norm > 0.0) {
    const float inv = float(1.0 / norm);
    for (int i = 0; i < n; ++i) v[i] *= inv;
  }
  return norm;
}

double dot64(const float* a, const float* b, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += double(a[i]) * double(b[i]);
  return s;
}

bool all_finite(const Tensor2& t) {
  for (float v : t.data)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace aat
