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

#include "dpcn/decoder.h"

#include <string>
#include <vector>

#include "dpcn/error.h"

namespace dpcn {

namespace {

std::string AsppName(std::size_t d) { return "decoder.aspp_d" + std::to_string(d); }

}  // namespace

void AddDecoderParams(ModelParams &params, const ModelConfig &cfg, std::mt19937_64 &rng) {
  const std::size_t c = cfg.channels;
  params.Add("decoder.conv.w", ParamGroup::kDecoder, HeUniform({c, cfg.xout_channels(), 1, 1}, rng));
  params.Add("decoder.conv.b", ParamGroup::kDecoder, Tensor::Zeros({c}));
  for (std::size_t d : kAsppDilations) {
    params.Add(AsppName(d) + ".w", ParamGroup::kDecoder, HeUniform({c, c, 3, 3}, rng));
    params.Add(AsppName(d) + ".b", ParamGroup::kDecoder, Tensor::Zeros({c}));
  }
  params.Add("decoder.fuse.w", ParamGroup::kDecoder, HeUniform({c, 3 * c, 1, 1}, rng));
  params.Add("decoder.fuse.b", ParamGroup::kDecoder, Tensor::Zeros({c}));
  // A zero head starts every prediction at 0.5, so early training does not
  // have to undo confidently wrong logits.
  params.Add("decoder.cls.w", ParamGroup::kDecoder, Tensor::Zeros({1, c, 3, 3}));
  params.Add("decoder.cls.b", ParamGroup::kDecoder, Tensor::Zeros({1}));
}

Var Decode(Var x_out, const BoundParams &params) {
  const Var conv_w = params.Get("decoder.conv.w");
  if (x_out.shape().size() != 3 || x_out.shape()[0] != conv_w.shape()[1]) {
    throw Error(ErrorCode::kShapeMismatch, "decoder expects " +
                                               std::to_string(conv_w.shape()[1]) +
                                               " channels, got " + ShapeString(x_out.shape()));
  }
  const std::size_t h = x_out.shape()[1], w = x_out.shape()[2];
  Var x = Relu(Conv2d(x_out, conv_w, params.Get("decoder.conv.b")));
  std::vector<Var> branches;
  for (std::size_t d : kAsppDilations) {
    branches.push_back(Relu(Conv2d(x, params.Get(AsppName(d) + ".w"),
                                   params.Get(AsppName(d) + ".b"), {.dilation = d})));
  }
  x = Relu(Conv2d(Concat(branches), params.Get("decoder.fuse.w"), params.Get("decoder.fuse.b")));
  Var logit = Conv2d(x, params.Get("decoder.cls.w"), params.Get("decoder.cls.b"));
  return Reshape(Sigmoid(logit), {h, w});
}

}  // namespace dpcn
