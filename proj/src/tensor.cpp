#include "editlab/tensor.hpp"

#include <cmath>
#include <sstream>

namespace editlab {

namespace {

int64_t shape_product(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<int64_t> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
  if (shape.size() > 2) {
    throw DimensionError("tensor rank > 2 not supported");
  }
  if (shape_product(shape) != static_cast<int64_t>(data.size())) {
    throw DimensionError("tensor shape/data size mismatch: " + shape_str() + " vs " +
                         std::to_string(data.size()) + " values");
  }
}

Tensor Tensor::zeros(std::vector<int64_t> shape) {
  int64_t n = shape_product(shape);
  return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0));
}

Tensor Tensor::full(std::vector<int64_t> shape, double value) {
  int64_t n = shape_product(shape);
  return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), value));
}

Tensor Tensor::row(std::vector<double> values) {
  int64_t n = static_cast<int64_t>(values.size());
  return Tensor({1, n}, std::move(values));
}

Tensor Tensor::matrix(int64_t r, int64_t c, std::vector<double> values) {
  return Tensor({r, c}, std::move(values));
}

Tensor Tensor::identity(int64_t n) {
  Tensor t = zeros({n, n});
  for (int64_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::fill(double v) {
  for (double& x : data) x = v;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

void matmul_accumulate(const Tensor& a, const Tensor& b, Tensor& c) {
  int64_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul inner dimensions differ: " + a.shape_str() + " * " +
                         b.shape_str());
  }
  if (c.rows() != m || c.cols() != n) {
    throw DimensionError("matmul output shape mismatch");
  }
  const double* pa = a.data.data();
  const double* pb = b.data.data();
  double* pc = c.data.data();
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = pa + i * k;
    double* crow = pc + i * n;
    for (int64_t l = 0; l < k; ++l) {
      double av = arow[l];
      if (av == 0.0) continue;
      const double* brow = pb + l * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

Tensor matmul_value(const Tensor& a, const Tensor& b) {
  Tensor c = Tensor::zeros({a.rows(), b.cols()});
  matmul_accumulate(a, b, c);
  return c;
}

void matmul_at_b_accumulate(const Tensor& a, const Tensor& b, Tensor& c) {
  // c[k x n] += a[m x k]^T * b[m x n]
  int64_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != m || c.rows() != k || c.cols() != n) {
    throw DimensionError("matmul_at_b shape mismatch");
  }
  const double* pa = a.data.data();
  const double* pb = b.data.data();
  double* pc = c.data.data();
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = pa + i * k;
    const double* brow = pb + i * n;
    for (int64_t l = 0; l < k; ++l) {
      double av = arow[l];
      if (av == 0.0) continue;
      double* crow = pc + l * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_a_bt_accumulate(const Tensor& a, const Tensor& b, Tensor& c) {
  // c[m x r] += a[m x n] * b[r x n]^T
  int64_t m = a.rows(), n = a.cols(), r = b.rows();
  if (b.cols() != n || c.rows() != m || c.cols() != r) {
    throw DimensionError("matmul_a_bt shape mismatch");
  }
  const double* pa = a.data.data();
  const double* pb = b.data.data();
  double* pc = c.data.data();
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = pa + i * n;
    double* crow = pc + i * r;
    for (int64_t j = 0; j < r; ++j) {
      const double* brow = pb + j * n;
      double dot = 0.0;
      for (int64_t l = 0; l < n; ++l) dot += arow[l] * brow[l];
      crow[j] += dot;
    }
  }
}

}  // namespace editlab
