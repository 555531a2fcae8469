#pragma once

#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace evha::nn {

using Shape = std::vector<int>;

std::size_t shape_size(const Shape& s);
std::string shape_string(const Shape& s);

// Row-major 64-bit tensor. The gradient buffer is allocated on demand.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor vector(std::initializer_list<double> v);

  const Shape& shape() const { return shape_; }
  int dim(std::size_t i) const { return shape_[i]; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }
  const double* data() const { return values_.data(); }
  double* data() { return values_.data(); }

  bool has_grad() const { return !grad_.empty(); }
  std::span<double> grad();  // allocates zeros on first use
  std::span<const double> grad() const { return grad_; }
  void zero_grad();

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  Shape shape_;
  std::vector<double> values_;
  std::vector<double> grad_;
};

}  // namespace evha::nn
