#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace dimmpf {

// Dense row-major matrix of doubles. Scalars are 1x1, vectors are n x 1.
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> d;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), d(static_cast<size_t>(r) * c, 0.0) {}

  static Tensor scalar(double v) {
    Tensor t(1, 1);
    t.d[0] = v;
    return t;
  }
  static Tensor zeros(int r, int c) { return Tensor(r, c); }
  static Tensor column(const std::vector<double>& v) {
    Tensor t(static_cast<int>(v.size()), 1);
    t.d = v;
    return t;
  }

  int size() const { return rows * cols; }
  bool is_scalar() const { return rows == 1 && cols == 1; }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

  double& at(int r, int c) { return d[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return d[static_cast<size_t>(r) * cols + c]; }
  double& operator[](size_t i) { return d[i]; }
  double operator[](size_t i) const { return d[i]; }

  double* data() { return d.data(); }
  const double* data() const { return d.data(); }
};

}  // namespace dimmpf
