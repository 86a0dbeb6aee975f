#include "kvmn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "kvmn/error.hpp"

namespace kvmn {

std::size_t shape_size(const Shape& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::string shape_string(const Shape& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << 'x';
    os << dims[i];
  }
  os << ']';
  return os.str();
}

namespace {

void validate_dims(const Shape& dims) {
  if (dims.empty()) throw ShapeError("tensor needs at least one dimension");
  for (auto d : dims) {
    if (d == 0) throw ShapeError("tensor dimension must be positive, got " + shape_string(dims));
  }
}

}  // namespace

Tensor::Tensor(Shape dims) : dims_(std::move(dims)) {
  validate_dims(dims_);
  data_.assign(shape_size(dims_), 0.0);
}

Tensor::Tensor(Shape dims, std::vector<double> data) : dims_(std::move(dims)), data_(std::move(data)) {
  validate_dims(dims_);
  if (shape_size(dims_) != data_.size()) {
    throw ShapeError("tensor of shape " + shape_string(dims_) + " given " + std::to_string(data_.size()) +
                     " values");
  }
}

Tensor Tensor::vector(std::initializer_list<double> values) { return Tensor({values.size()}, values); }

Tensor Tensor::vector(std::vector<double> values) {
  const auto n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw ShapeError("rows() on tensor of shape " + shape_string(dims_));
  return dims_[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw ShapeError("cols() on tensor of shape " + shape_string(dims_));
  return dims_[1];
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(dims_));
  return data_[0];
}

std::span<const double> Tensor::row(std::size_t r) const {
  const auto c = cols();
  if (r >= dims_[0]) throw ShapeError("row index out of range");
  return std::span<const double>(data_).subspan(r * c, c);
}

std::span<double> Tensor::ensure_grad() {
  if (grad_.size() != data_.size()) grad_.assign(data_.size(), 0.0);
  return grad_;
}

void Tensor::zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::check_finite(const std::string& context) const {
  if (!all_finite()) throw NumericError("non-finite value in " + context);
}

}  // namespace kvmn
