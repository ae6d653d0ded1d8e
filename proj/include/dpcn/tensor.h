// Copyright 2026 The DPCN Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DPCN_TENSOR_H_
#define DPCN_TENSOR_H_

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace dpcn {

using Shape = std::vector<std::size_t>;

std::size_t NumElements(const Shape &shape);
std::string ShapeString(const Shape &shape);

// Dense row-major array of doubles. Value semantics; copies are deep.
class Tensor {
 public:
  Tensor() = default;
  // Zero-filled tensor of the given shape.
  explicit Tensor(Shape shape);
  // Validates that the payload matches the shape and that every value is
  // finite.
  Tensor(Shape shape, std::vector<double> data);

  static Tensor Zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor Full(Shape shape, double value);
  static Tensor Scalar(double value) { return Full({}, value); }
  static Tensor Of(std::initializer_list<double> values);

  const Shape &shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double *ptr() { return data_.data(); }
  const double *ptr() const { return data_.data(); }

  double &operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double &at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const {
    return data_[i * shape_[1] + j];
  }
  double &at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  double item() const;

  bool requires_grad() const { return requires_grad_; }
  Tensor &set_requires_grad(bool flag) {
    requires_grad_ = flag;
    return *this;
  }

  // Same payload, new shape with equal element count.
  Tensor Reshaped(Shape shape) const;

  bool AllFinite() const;
  void Fill(double value);

  // Bitwise comparison of shape and payload.
  bool BitEqual(const Tensor &other) const;

 private:
  Shape shape_;
  std::vector<double> data_;
  bool requires_grad_ = false;
};

// Max |a - b| over elements; shapes must match.
double MaxAbsDiff(const Tensor &a, const Tensor &b);

// "DPCN-T" dump format: magic "DPCN", u16 version, u8 dtype (0 f32, 1 f64),
// u8 rank, rank x u32 dims, row-major payload. Little-endian throughout.
enum class DType : std::uint8_t { kF32 = 0, kF64 = 1 };

void WriteTensor(std::ostream &out, const Tensor &t, DType dtype = DType::kF64);
Tensor ReadTensor(std::istream &in);
void SaveTensor(const std::string &path, const Tensor &t,
                DType dtype = DType::kF64);
Tensor LoadTensor(const std::string &path);
// Bytes occupied by one serialized tensor.
std::size_t SerializedSize(const Tensor &t, DType dtype = DType::kF64);

}  // namespace dpcn

#endif  // DPCN_TENSOR_H_
