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

#include "dpcn/encoder.h"

#include "dpcn/error.h"

namespace dpcn {

void AddEncoderParams(ModelParams &params, const ModelConfig &cfg, std::mt19937_64 &rng) {
  const std::size_t c = cfg.channels, ch = cfg.high_channels;
  params.Add("encoder.stage1.w", ParamGroup::kEncoder, HeUniform({kStage1Channels, 3, 3, 3}, rng), 1);
  params.Add("encoder.stage1.b", ParamGroup::kEncoder, Tensor::Zeros({kStage1Channels}), 1);
  params.Add("encoder.stage2.w", ParamGroup::kEncoder, HeUniform({c, kStage1Channels, 3, 3}, rng), 2);
  params.Add("encoder.stage2.b", ParamGroup::kEncoder, Tensor::Zeros({c}), 2);
  params.Add("encoder.stage3.w", ParamGroup::kEncoder, HeUniform({ch, c, 3, 3}, rng), 3);
  params.Add("encoder.stage3.b", ParamGroup::kEncoder, Tensor::Zeros({ch}), 3);
}

Features Encode(Var image, const BoundParams &params) {
  const Shape &s = image.shape();
  if (s.size() != 3 || s[0] != 3) {
    throw Error(ErrorCode::kShapeMismatch, "encoder expects [3,H,W], got " + ShapeString(s));
  }
  Var x = Relu(Conv2d(image, params.Get("encoder.stage1.w"), params.Get("encoder.stage1.b"),
                      {.stride = 2}));
  Var mid = Relu(Conv2d(x, params.Get("encoder.stage2.w"), params.Get("encoder.stage2.b"),
                        {.stride = 2}));
  Var high = Relu(Conv2d(mid, params.Get("encoder.stage3.w"), params.Get("encoder.stage3.b"),
                         {.dilation = 2}));
  return {mid, high};
}

}  // namespace dpcn
