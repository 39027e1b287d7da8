#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spn/errors.hpp"

namespace spn {

// Row-major dense array of 64-bit floats with value semantics. Shapes have
// rank >= 1 and strictly positive extents; scalars are represented as {1}.
struct DenseArray {
  std::vector<std::int64_t> shape;
  std::vector<double> data;

  DenseArray() = default;
  DenseArray(std::vector<std::int64_t> s, std::vector<double> d);

  static DenseArray zeros(std::vector<std::int64_t> shape);
  static DenseArray full(std::vector<std::int64_t> shape, double value);
  static DenseArray scalar(double value) { return DenseArray({1}, {value}); }
  static DenseArray row(std::vector<double> values);  // {1, n}

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  std::int64_t dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  // rank-2 accessors
  std::int64_t rows() const;
  std::int64_t cols() const;
  double& at(std::int64_t r, std::int64_t c);
  double at(std::int64_t r, std::int64_t c) const;

  bool same_shape(const DenseArray& o) const { return shape == o.shape; }
  bool all_finite() const;
};

// Validates extents and returns the element count.
std::int64_t checked_numel(const std::vector<std::int64_t>& shape);

std::string shape_str(const std::vector<std::int64_t>& shape);

void require_finite(const DenseArray& a, const std::string& what);
void require_same_shape(const DenseArray& a, const DenseArray& b, const std::string& what);
void require_rank2(const DenseArray& a, const std::string& what);

}  // namespace spn
