#include "mda/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mda/error.hpp"

namespace mda {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d < 0) throw ShapeError("negative dimension in " + shape_str(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_))
    throw ShapeError("data size " + std::to_string(data_.size()) + " does not match shape " + shape_str(shape_));
}

std::span<double> Tensor::plane(int c) {
  const std::size_t n = static_cast<std::size_t>(shape_[1]) * shape_[2];
  return {data_.data() + n * c, n};
}

std::span<const double> Tensor::plane(int c) const {
  const std::size_t n = static_cast<std::size_t>(shape_[1]) * shape_[2];
  return {data_.data() + n * c, n};
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(Shape s) const {
  if (shape_numel(s) != data_.size()) throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
  return Tensor(std::move(s), data_);
}

double Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

double Tensor::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace mda
