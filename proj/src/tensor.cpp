#include "voxelcycle/tensor.hpp"

#include <cmath>
#include <sstream>

#include "voxelcycle/errors.hpp"

namespace voxelcycle {

std::size_t product(const Dims& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::string dims_to_string(const Dims& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << 'x';
    os << dims[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Dims dims, double fill) : dims_(std::move(dims)), data_(product(dims_), fill) {
  for (auto d : dims_) {
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + dims_to_string(dims_));
  }
}

Tensor::Tensor(Dims dims, std::vector<double> data) : dims_(std::move(dims)), data_(std::move(data)) {
  for (auto d : dims_) {
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + dims_to_string(dims_));
  }
  if (data_.size() != product(dims_)) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match dims " +
                     dims_to_string(dims_));
  }
}

Tensor Tensor::scalar(double value) { return Tensor(Dims{1}, std::vector<double>{value}); }

double& Tensor::at(std::size_t n, std::size_t c, std::size_t d, std::size_t h, std::size_t w) {
  return data_[(((n * dims_[1] + c) * dims_[2] + d) * dims_[3] + h) * dims_[4] + w];
}

double Tensor::at(std::size_t n, std::size_t c, std::size_t d, std::size_t h, std::size_t w) const {
  return data_[(((n * dims_[1] + c) * dims_[2] + d) * dims_[3] + h) * dims_[4] + w];
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on non-scalar tensor " + dims_to_string(dims_));
  return data_[0];
}

void Tensor::fill(double value) {
  for (auto& x : data_) x = value;
}

bool Tensor::all_finite() const {
  for (double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

void require_finite(const Tensor& t, const char* where) {
  if (!t.all_finite()) throw NumericError(std::string(where) + ": non-finite value encountered");
}

void require_rank5(const Tensor& t, const char* where) {
  if (t.rank() != 5) {
    throw ShapeError(std::string(where) + ": expected N x C x D x H x W tensor, got " + dims_to_string(t.dims()));
  }
}

}  // namespace voxelcycle
