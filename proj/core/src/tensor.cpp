#include "udmt/tensor.hpp"

#include <cstring>
#include <fmt/format.h>
#include <fmt/ranges.h>

namespace udmt {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) { return fmt::format("[{}]", fmt::join(shape, ", ")); }

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor: rank must be at least 1");
  for (auto e : shape) {
    if (e == 0) throw ShapeError(fmt::format("tensor: zero extent in shape {}", shape_str(shape)));
  }
}

}  // namespace

Tensor::Tensor() : shape_{1}, data_(std::make_shared<std::vector<double>>(1, 0.0)) {}

Tensor::Tensor(Shape shape)
    : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_ = std::make_shared<std::vector<double>>(shape_numel(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : shape_(std::move(shape)), requires_grad_(requires_grad) {
  validate_shape(shape_);
  if (shape_numel(shape_) != data.size()) {
    throw ShapeError(fmt::format("tensor: shape {} needs {} elements, got {}", shape_str(shape_),
                                 shape_numel(shape_), data.size()));
  }
  data_ = std::make_shared<std::vector<double>>(std::move(data));
}

Tensor Tensor::filled(Shape shape, double value) {
  Tensor t(std::move(shape));
  for (auto& x : t.mutable_data()) x = value;
  return t;
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  std::vector<double> data;
  std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  for (const auto& row : rows) {
    if (row.size() != cols) throw ShapeError("tensor: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({rows.size(), cols}, std::move(data));
}

std::span<double> Tensor::mutable_data() {
  if (data_.use_count() > 1) data_ = std::make_shared<std::vector<double>>(*data_);
  return *data_;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError(fmt::format("item: tensor of shape {} is not a scalar", shape_str(shape_)));
  return (*data_)[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  validate_shape(shape);
  if (shape_numel(shape) != numel()) {
    throw ShapeError(fmt::format("reshape: cannot view {} as {}", shape_str(shape_), shape_str(shape)));
  }
  Tensor t = *this;
  t.shape_ = std::move(shape);
  return t;
}

bool Tensor::bit_equal(const Tensor& other) const {
  return shape_ == other.shape_ &&
         std::memcmp(data_->data(), other.data_->data(), numel() * sizeof(double)) == 0;
}

}  // namespace udmt
