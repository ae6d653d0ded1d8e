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

#include "dpcn/tensor.h"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dpcn/error.h"

namespace dpcn {

const char *ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kNonOddKernel: return "NonOddKernel";
    case ErrorCode::kChannelMismatch: return "ChannelMismatch";
    case ErrorCode::kEmptyMask: return "EmptyMask";
    case ErrorCode::kEmptyForeground: return "EmptyForeground";
    case ErrorCode::kUnsupportedWindow: return "UnsupportedWindow";
    case ErrorCode::kNonFiniteValue: return "NonFiniteValue";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::kDegenerateGeometry: return "DegenerateGeometry";
    case ErrorCode::kEmptyPool: return "EmptyPool";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kMalformedHeader: return "MalformedHeader";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

std::size_t NumElements(const Shape &shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string ShapeString(const Shape &shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape)
    : shape_(std::move(shape)), data_(NumElements(shape_), 0.0) {
  for (std::size_t d : shape_) {
    if (d == 0) {
      throw Error(ErrorCode::kShapeMismatch,
                  "zero-sized dimension in " + ShapeString(shape_));
    }
  }
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (NumElements(shape_) != data_.size()) {
    throw Error(ErrorCode::kShapeMismatch,
                "payload of " + std::to_string(data_.size()) +
                    " values for shape " + ShapeString(shape_));
  }
  for (std::size_t d : shape_) {
    if (d == 0) throw Error(ErrorCode::kShapeMismatch, "zero-sized dimension");
  }
  if (!AllFinite()) {
    throw Error(ErrorCode::kNonFiniteValue, "tensor payload contains NaN/Inf");
  }
}

Tensor Tensor::Full(Shape shape, double value) {
  Tensor t(std::move(shape));
  t.Fill(value);
  return t;
}

Tensor Tensor::Of(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw Error(ErrorCode::kShapeMismatch,
                "item() on tensor of shape " + ShapeString(shape_));
  }
  return data_[0];
}

Tensor Tensor::Reshaped(Shape shape) const {
  if (NumElements(shape) != data_.size()) {
    throw Error(ErrorCode::kShapeMismatch, "cannot reshape " +
                                               ShapeString(shape_) + " to " +
                                               ShapeString(shape));
  }
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

bool Tensor::AllFinite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::Fill(double value) {
  for (double &v : data_) v = value;
}

bool Tensor::BitEqual(const Tensor &other) const {
  return shape_ == other.shape_ &&
         (data_.empty() ||
          std::memcmp(data_.data(), other.data_.data(),
                      data_.size() * sizeof(double)) == 0);
}

double MaxAbsDiff(const Tensor &a, const Tensor &b) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorCode::kShapeMismatch,
                ShapeString(a.shape()) + " vs " + ShapeString(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a[i] - b[i]));
  }
  return m;
}

namespace {

constexpr char kMagic[4] = {'D', 'P', 'C', 'N'};
constexpr std::uint16_t kVersion = 1;

template <typename UInt>
void PutLE(std::ostream &out, UInt v) {
  char bytes[sizeof(UInt)];
  for (std::size_t i = 0; i < sizeof(UInt); ++i) {
    bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  }
  out.write(bytes, sizeof(UInt));
}

template <typename UInt>
UInt GetLE(std::istream &in) {
  unsigned char bytes[sizeof(UInt)];
  in.read(reinterpret_cast<char *>(bytes), sizeof(UInt));
  if (!in) throw Error(ErrorCode::kMalformedHeader, "truncated tensor stream");
  UInt v = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) {
    v |= static_cast<UInt>(bytes[i]) << (8 * i);
  }
  return v;
}

}  // namespace

std::size_t SerializedSize(const Tensor &t, DType dtype) {
  const std::size_t width = dtype == DType::kF64 ? 8 : 4;
  return 4 + 2 + 1 + 1 + 4 * t.rank() + width * t.size();
}

void WriteTensor(std::ostream &out, const Tensor &t, DType dtype) {
  out.write(kMagic, 4);
  PutLE<std::uint16_t>(out, kVersion);
  PutLE<std::uint8_t>(out, static_cast<std::uint8_t>(dtype));
  PutLE<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape()) PutLE<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  for (double v : t.data()) {
    if (dtype == DType::kF64) {
      PutLE<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    } else {
      PutLE<std::uint32_t>(out,
                           std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  if (!out) throw Error(ErrorCode::kIoError, "tensor write failed");
}

Tensor ReadTensor(std::istream &in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw Error(ErrorCode::kMalformedHeader, "bad DPCN-T magic");
  }
  const auto version = GetLE<std::uint16_t>(in);
  if (version != kVersion) {
    throw Error(ErrorCode::kMalformedHeader,
                "unsupported DPCN-T version " + std::to_string(version));
  }
  const auto dtype = GetLE<std::uint8_t>(in);
  if (dtype > 1) throw Error(ErrorCode::kMalformedHeader, "bad dtype");
  const auto rank = GetLE<std::uint8_t>(in);
  Shape shape(rank);
  for (auto &d : shape) d = GetLE<std::uint32_t>(in);
  std::vector<double> data(NumElements(shape));
  for (double &v : data) {
    if (dtype == 1) {
      v = std::bit_cast<double>(GetLE<std::uint64_t>(in));
    } else {
      v = static_cast<double>(std::bit_cast<float>(GetLE<std::uint32_t>(in)));
    }
  }
  return Tensor(std::move(shape), std::move(data));
}

void SaveTensor(const std::string &path, const Tensor &t, DType dtype) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot open " + path);
  WriteTensor(out, t, dtype);
}

Tensor LoadTensor(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path);
  return ReadTensor(in);
}

}  // namespace dpcn
