#pragma once

#include <cstddef>
#include <vector>

namespace fedproxy {

// Minimal row-major matrix. Heavy lifting stays in explicit loops so
// summation order is fixed and runs reproduce exactly.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}

  double& at(std::size_t r, std::size_t c) { return a[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return a[r * cols + c]; }

  const double* row(std::size_t r) const { return a.data() + r * cols; }
  double* row(std::size_t r) { return a.data() + r * cols; }
};

}  // namespace fedproxy
