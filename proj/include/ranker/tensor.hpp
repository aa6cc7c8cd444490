#pragma once

#include <cstddef>
#include <vector>

namespace ranker {

// Dense row-major 2-D tensor of doubles. Vectors are 1xN or Nx1.
struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}

  double& at(std::size_t i, std::size_t j) { return v[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return v[i * cols + j]; }

  double* row(std::size_t i) { return v.data() + i * cols; }
  const double* row(std::size_t i) const { return v.data() + i * cols; }

  std::size_t size() const { return v.size(); }
  bool empty() const { return v.empty(); }

  void fill(double x) { v.assign(v.size(), x); }
};

}  // namespace ranker
