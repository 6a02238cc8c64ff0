#include "moes/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "moes/error.hpp"

namespace moes {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw ConfigError("tensor shape must have at least one axis");
  for (auto d : shape) {
    if (d == 0) throw ConfigError("tensor extents must be positive, got " + shape_to_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  values_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  check_shape(shape_);
  if (shape_size(shape_) != values_.size()) {
    throw ConfigError("tensor shape " + shape_to_string(shape_) + " does not match " +
                      std::to_string(values_.size()) + " values");
  }
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), values_); }

void Tensor::fill(double value) { std::fill(values_.begin(), values_.end(), value); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::max() const {
  if (values_.empty()) throw UsageError("max of empty tensor");
  return *std::max_element(values_.begin(), values_.end());
}

double Tensor::min() const {
  if (values_.empty()) throw UsageError("min of empty tensor");
  return *std::min_element(values_.begin(), values_.end());
}

double Tensor::sum() const noexcept { return std::accumulate(values_.begin(), values_.end(), 0.0); }

}  // namespace moes
