#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "editlab/errors.hpp"

namespace editlab {

// Dense row-major float64 tensor, 1-D or 2-D.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<int64_t> s, std::vector<double> d);

  static Tensor zeros(std::vector<int64_t> shape);
  static Tensor full(std::vector<int64_t> shape, double value);
  static Tensor row(std::vector<double> values);           // [1 x n]
  static Tensor matrix(int64_t r, int64_t c, std::vector<double> values);
  static Tensor identity(int64_t n);

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  // 1-D tensors are treated as a single row.
  int64_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
  int64_t cols() const { return shape.empty() ? 0 : shape.back(); }

  double& at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols() + c)]; }
  double at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols() + c)]; }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  bool all_finite() const;
  void fill(double v);
  std::string shape_str() const;
};

// C += A * B  (and the pure product). ikj loop order, row-major friendly.
void matmul_accumulate(const Tensor& a, const Tensor& b, Tensor& c);
Tensor matmul_value(const Tensor& a, const Tensor& b);

// C += A^T * B and C += A * B^T, used by backward rules.
void matmul_at_b_accumulate(const Tensor& a, const Tensor& b, Tensor& c);
void matmul_a_bt_accumulate(const Tensor& a, const Tensor& b, Tensor& c);

// Trainable value with its gradient accumulator.
struct Parameter {
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  explicit Parameter(Tensor v, bool trainable_ = true)
      : value(std::move(v)), grad(Tensor::zeros(value.shape)), trainable(trainable_) {}

  void zero_grad() { grad.fill(0.0); }
};

}  // namespace editlab
