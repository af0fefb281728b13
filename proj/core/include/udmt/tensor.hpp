#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace udmt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised for every shape contract violation; the message names the kernel
/// and the offending shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major array of doubles.
///
/// Storage is shared between copies and treated as immutable;
/// `mutable_data()` detaches before handing out a writable view, so a value
/// captured by a tape or another thread never changes underneath it.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor filled(Shape shape, double value);
  static Tensor scalar(double value) { return Tensor(Shape{1}, std::vector<double>{value}); }
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return data_->size(); }

  std::span<const double> data() const { return *data_; }
  std::span<double> mutable_data();
  const double* ptr() const { return data_->data(); }

  double operator[](std::size_t i) const { return (*data_)[i]; }
  double item() const;

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool value) { requires_grad_ = value; }

  /// Same storage, different shape; element count must agree.
  Tensor reshaped(Shape shape) const;

  bool bit_equal(const Tensor& other) const;

 private:
  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  bool requires_grad_ = false;
};

}  // namespace udmt
