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

#ifndef DPCN_TAPE_H_
#define DPCN_TAPE_H_

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <optional>
#include <span>
#include <vector>

#include "dpcn/tensor.h"

namespace dpcn {

class GradTape;

// Handle to a value recorded on a GradTape.
struct Var {
  GradTape *tape = nullptr;
  std::size_t id = 0;

  const Tensor &value() const;
  // By value: the tape may reallocate while the caller still holds the shape.
  Shape shape() const { return value().shape(); }
  bool requires_grad() const;
};

// Records differentiable operations in execution order and replays them in
// reverse to accumulate gradients. One tape serves one forward/backward pass
// on one thread.
class GradTape {
 public:
  // Receives the gradient of the node's output and accumulates into inputs.
  using BackwardFn = std::function<void(GradTape &, const Tensor &)>;

  GradTape() = default;
  GradTape(const GradTape &) = delete;
  GradTape &operator=(const GradTape &) = delete;

  // Leaf whose requires_grad flag is taken from the tensor.
  Var Leaf(Tensor value);
  Var Constant(Tensor value);
  Var Param(Tensor value);

  const Tensor &value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  bool has_grad(Var v) const { return !nodes_.at(v.id).grad.empty(); }
  // Gradient of the last Backward() target w.r.t. v (zeros if unreached).
  Tensor grad(Var v) const;

  // Seeds d(loss)/d(loss) = 1 and replays the tape. May be called once.
  void Backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

  // Used by op implementations.
  Var Record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var Record(Tensor value, std::span<const Var> inputs, BackwardFn fn);
  // Gradient buffer of v, allocated as zeros on first touch.
  Tensor &GradBuffer(Var v);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t dilation = 1;
};

// Elementwise ops. b either matches a's shape, or a is [C,H,W] and b is [C]
// (channel expansion) or [H,W] (expansion over channels).
Var Add(Var a, Var b);
Var Sub(Var a, Var b);
Var Mul(Var a, Var b);
Var Scale(Var a, double s);

Var MatMul(Var a, Var b);
Var Transpose(Var a);
Var Reshape(Var a, Shape shape);

// Zero-padded "same" cross-correlation. x [Cin,H,W], w [Cout,Cin,kh,kw],
// optional bias [Cout]. Output spatial size is ceil(H/stride) x ceil(W/stride).
Var Conv2d(Var x, Var w, std::optional<Var> bias, Conv2dOptions opts = {});
// Per-channel dynamic convolution. x [C,H,W], ker [kh,kw,C].
Var DepthwiseConv2d(Var x, Var ker);

// x [C,H,W], m [H,W] -> [C]; the mask sum must exceed 1e-6.
Var MaskedAvgPool(Var x, Var m);
// seq [N,C] -> [target,C]. Bin means when N >= target, nearest repetition
// otherwise.
Var AdaptivePool1d(Var seq, std::size_t target);

Var Relu(Var x);
Var Sigmoid(Var x);

// Both accept [H,W] or [C,H,W] and resize the trailing two axes.
Var ResizeNearest(Var x, std::size_t out_h, std::size_t out_w);
Var ResizeBilinear(Var x, std::size_t out_h, std::size_t out_w);

// Concatenation / slicing along the leading axis.
Var Concat(std::span<const Var> parts);
Var Slice(Var x, std::size_t begin, std::size_t end);
// p [C] -> [C,H,W].
Var Expand(Var p, std::size_t h, std::size_t w);

// Rows x[:, u] * m[u] for the given row-major spatial positions. x [C,H,W],
// m [H,W] -> [positions.size(), C].
Var GatherPositions(Var x, Var m, std::span<const std::size_t> positions);

Var Sum(Var x);
Var Mean(Var x);
// Mean binary cross-entropy; pred is clamped to [1e-7, 1 - 1e-7]. The
// target receives no gradient.
Var BceMean(Var pred, Var target);

inline constexpr double kMaskEps = 1e-6;
inline constexpr double kCosEps = 1e-8;
inline constexpr double kBceEps = 1e-7;

// Non-differentiable helpers shared by the no-grad branches.
double CosineSim(std::span<const double> a, std::span<const double> b);
Tensor MinMaxNorm(const Tensor &map);
Tensor ResizeNearest(const Tensor &x, std::size_t out_h, std::size_t out_w);
Tensor ResizeBilinear(const Tensor &x, std::size_t out_h, std::size_t out_w);

// Nearest-resize source index for output index i (center-aligned).
inline std::size_t NearestSource(std::size_t i, std::size_t in,
                                 std::size_t out) {
  return ((2 * i + 1) * in) / (2 * out);
}

}  // namespace dpcn

#endif  // DPCN_TAPE_H_
