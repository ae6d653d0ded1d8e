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

#ifndef DPCN_FFM_H_
#define DPCN_FFM_H_

#include <random>
#include <span>

#include "dpcn/config.h"
#include "dpcn/model.h"
#include "dpcn/tape.h"

namespace dpcn {

// Feature filtering: support prototype, pseudo-mask refinement with a 3x3
// conv (C -> 1) + sigmoid, and background suppression on the query.

void AddFfmParams(ModelParams &params, const ModelConfig &cfg, std::mt19937_64 &rng);

// Masked average over all shots jointly: sum_i sum_hw x_i m_i / sum_i sum_hw m_i.
// Masks must already be at feature resolution.
Var SupportPrototype(std::span<const Var> xs, std::span<const Var> masks);

// sigmoid(conv3x3((xq * m_pse0) + p)) -> [H,W]
Var RefinePseudoMask(Var xq, Var m_pse0, Var p, const BoundParams &params);

// xq * m + xq
Var FilterQuery(Var xq, Var m_pse_r);

}  // namespace dpcn

#endif  // DPCN_FFM_H_
