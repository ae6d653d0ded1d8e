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

#ifndef DPCN_ENCODER_H_
#define DPCN_ENCODER_H_

#include <random>

#include "dpcn/config.h"
#include "dpcn/model.h"
#include "dpcn/tape.h"

namespace dpcn {

// Three conv+ReLU stages shared by support and query images:
//   stage1  3 -> 16,  3x3, stride 2
//   stage2  16 -> C,  3x3, stride 2            (mid-level features)
//   stage3  C -> C_h, 3x3, stride 1, dilation 2 (high-level features)
// A 64x64 image yields C x 16 x 16 and C_h x 16 x 16.
inline constexpr std::size_t kStage1Channels = 16;

void AddEncoderParams(ModelParams &params, const ModelConfig &cfg, std::mt19937_64 &rng);

struct Features {
  Var mid;
  Var high;
};

Features Encode(Var image, const BoundParams &params);

}  // namespace dpcn

#endif  // DPCN_ENCODER_H_
