#include "spn/dense_array.hpp"

#include <cmath>
#include <sstream>

namespace spn {

std::int64_t checked_numel(const std::vector<std::int64_t>& shape) {
  if (shape.empty()) throw ShapeError("shape must have rank >= 1");
  std::int64_t n = 1;
  for (const std::int64_t d : shape) {
    if (d <= 0) throw ShapeError("shape extents must be positive, got " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const std::vector<std::int64_t>& shape) {
  std::ostringstream os;
  os << '{';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << '}';
  return os.str();
}

DenseArray::DenseArray(std::vector<std::int64_t> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
  const std::int64_t n = checked_numel(shape);
  if (n != static_cast<std::int64_t>(data.size()))
    throw ShapeError("data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
}

DenseArray DenseArray::zeros(std::vector<std::int64_t> shape) {
  const std::int64_t n = checked_numel(shape);
  return DenseArray(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0));
}

DenseArray DenseArray::full(std::vector<std::int64_t> shape, double value) {
  const std::int64_t n = checked_numel(shape);
  return DenseArray(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), value));
}

DenseArray DenseArray::row(std::vector<double> values) {
  const std::int64_t n = static_cast<std::int64_t>(values.size());
  return DenseArray({1, n}, std::move(values));
}

std::int64_t DenseArray::rows() const {
  require_rank2(*this, "rows()");
  return shape[0];
}

std::int64_t DenseArray::cols() const {
  require_rank2(*this, "cols()");
  return shape[1];
}

double& DenseArray::at(std::int64_t r, std::int64_t c) {
  return data[static_cast<std::size_t>(r * shape[1] + c)];
}

double DenseArray::at(std::int64_t r, std::int64_t c) const {
  return data[static_cast<std::size_t>(r * shape[1] + c)];
}

bool DenseArray::all_finite() const {
  for (const double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

void require_finite(const DenseArray& a, const std::string& what) {
  if (!a.all_finite()) throw InvalidValueError(what + ": non-finite value");
}

void require_same_shape(const DenseArray& a, const DenseArray& b, const std::string& what) {
  if (!a.same_shape(b))
    throw ShapeError(what + ": shape mismatch " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
}

void require_rank2(const DenseArray& a, const std::string& what) {
  if (a.rank() != 2) throw ShapeError(what + ": expected rank-2 array, got " + shape_str(a.shape));
}

}  // namespace spn
