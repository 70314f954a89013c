#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace voxelcycle {

using Dims = std::vector<std::size_t>;

std::size_t product(const Dims& dims);
std::string dims_to_string(const Dims& dims);

// Dense row-major float64 tensor. Volumetric activations use N x C x D x H x W.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Dims dims, double fill = 0.0);
  Tensor(Dims dims, std::vector<double> data);

  static Tensor scalar(double value);

  const Dims& dims() const { return dims_; }
  std::size_t rank() const { return dims_.size(); }
  std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* ptr() { return data_.data(); }
  const double* ptr() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Only valid for rank-5 tensors.
  double& at(std::size_t n, std::size_t c, std::size_t d, std::size_t h, std::size_t w);
  double at(std::size_t n, std::size_t c, std::size_t d, std::size_t h, std::size_t w) const;

  double item() const;

  void fill(double value);
  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Dims dims_;
  std::vector<double> data_;
};

// Throws NumericError naming `where` when any element is NaN or infinite.
void require_finite(const Tensor& t, const char* where);

// Volumetric extents helpers for N x C x D x H x W tensors.
void require_rank5(const Tensor& t, const char* where);

}  // namespace voxelcycle
