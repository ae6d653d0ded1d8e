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

#ifndef DPCN_DECODER_H_
#define DPCN_DECODER_H_

#include <array>
#include <random>

#include "dpcn/config.h"
#include "dpcn/model.h"
#include "dpcn/tape.h"

namespace dpcn {

// x_out -> 1x1 conv (-> C) + ReLU -> ASPP (3x3 at dilations 1, 2, 4, each
// with ReLU, concatenated and fused by 1x1 conv 3C -> C + ReLU) -> 3x3 conv
// (-> 1) + sigmoid.
inline constexpr std::array<std::size_t, 3> kAsppDilations = {1, 2, 4};

void AddDecoderParams(ModelParams &params, const ModelConfig &cfg, std::mt19937_64 &rng);

// Probability map [H,W] at feature resolution.
Var Decode(Var x_out, const BoundParams &params);

}  // namespace dpcn

#endif  // DPCN_DECODER_H_
