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

#ifndef DPCN_DCM_H_
#define DPCN_DCM_H_

#include <optional>
#include <random>
#include <span>
#include <vector>

#include "dpcn/config.h"
#include "dpcn/model.h"
#include "dpcn/sam.h"
#include "dpcn/tape.h"

namespace dpcn {

// Dynamic convolution: support foreground vectors are pooled into S and S^2
// prototypes, three independent kernel generators turn them into vertical
// (S x 1), horizontal (1 x S) and square (S x S) per-channel kernels, and the
// filtered query feature is convolved with each.

// Generator nets: two 1D convs (kernel 3, pad 1, C -> C -> C) with a ReLU in
// between, stored as [C,C,1,3] conv2d weights over a [C,1,L] sequence.
void AddKernelGenParams(ModelParams &params, const ModelConfig &cfg, std::mt19937_64 &rng);

struct ForegroundVectors {
  Var rows;                         // [N_fg, C]
  std::vector<std::size_t> counts;  // per shot
};

// Row-major positions where the feature-resolution mask is >= 0.5.
std::vector<std::size_t> ForegroundPositions(const Tensor &mask);

// Rows x_s[:, u] * m[u] at the given positions (default: ForegroundPositions).
ForegroundVectors ExtractForeground(Var xs, Var mask);
ForegroundVectors ExtractForeground(Var xs, Var mask, std::span<const std::size_t> positions);

// Concatenation in shot order.
ForegroundVectors MergeShots(std::span<const ForegroundVectors> shots);

struct Prototypes {
  Var p_s;   // [S, C]
  Var p_s2;  // [S*S, C]
};

Prototypes PoolPrototypes(Var p_fg, std::size_t s, PoolVariant variant);

struct DynamicKernelSet {
  std::optional<Var> vertical;    // [S,1,C]
  std::optional<Var> horizontal;  // [1,S,C]
  std::optional<Var> square;      // [S,S,C]
};

// Runs the generator for every kernel present in the parameters.
DynamicKernelSet GenerateKernels(const Prototypes &protos, const BoundParams &params,
                                 std::size_t s);

// Depthwise dynamic convolutions, in v, h, s order, of the kernels present.
std::vector<Var> EnhanceQuery(Var xq_filtered, const DynamicKernelSet &kernels);

// Concatenates [enhanced... | x_p | maps (if any) | m_pse_r (if any)] along
// channels. Maps are resized bilinearly when their grid differs.
Var AssembleXout(std::span<const Var> enhanced, Var x_p, const ActivationSet *maps,
                 std::optional<Var> m_pse_r);

}  // namespace dpcn

#endif  // DPCN_DCM_H_
