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

#ifndef DPCN_SAM_H_
#define DPCN_SAM_H_

#include <array>
#include <span>

#include "dpcn/tensor.h"

namespace dpcn {

// Region-to-region matching between high-level support and query features.
// It produces one activation map per window and their mean as the initial
// pseudo mask. Everything here is a fixed prior: no gradients pass through.

struct Window {
  std::size_t dh = 1;
  std::size_t dw = 1;
  bool operator==(const Window &) const = default;
};

inline constexpr std::array<Window, 3> kSamWindows = {{{5, 1}, {3, 3}, {1, 5}}};

struct ActivationSet {
  std::array<Tensor, 3> maps;  // [Hq,Wq] each, values in [0,1]
  Tensor m_pse0;               // elementwise mean of maps
};

// x [Ch,H,W] -> [dh*dw, Ch, H*W]; entry [j,:,u] is the feature at window
// offset j (row-major over the window) around position u, zero outside the
// map. Windows must have odd sides.
Tensor RegionFeatures(const Tensor &x, Window window);

// rs [J,Ch,Ns], rq [J,Ch,Nq] -> Corr [J,Ns,Nq] with
// Corr[j,u,v] = cos(rs[j,:,u], rq[j,:,v]).
Tensor RegionalCorr(const Tensor &rs, const Tensor &rq);

// Corr [J,Ns,Nq] -> [hq,wq]: mean over offsets, max over support positions,
// then min-max normalization.
Tensor ActivationMap(const Tensor &corr, std::size_t hq, std::size_t wq);

// Support features times the (nearest-resized, binarized at 0.5) mask.
Tensor MaskSupportFeatures(const Tensor &xs_high, const Tensor &mask);

// Activation map for one window without materializing Corr; the max runs over
// the positions of every support shot. Equals
// ActivationMap(RegionalCorr(RegionFeatures(xs), RegionFeatures(xq))) for a
// single shot.
Tensor WindowActivation(std::span<const Tensor> xs_masked, const Tensor &xq, Window window);

// Full module. masks may be at any resolution; they are resized to the
// feature grid. Throws kEmptyMask when a resized mask has no foreground.
ActivationSet RunSam(std::span<const Tensor> xs_high, std::span<const Tensor> masks,
                     const Tensor &xq_high,
                     const std::array<Window, 3> &windows = kSamWindows);

}  // namespace dpcn

#endif  // DPCN_SAM_H_
