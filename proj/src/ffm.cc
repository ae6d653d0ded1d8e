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

#include "dpcn/ffm.h"

#include <vector>

#include "dpcn/error.h"

namespace dpcn {

void AddFfmParams(ModelParams &params, const ModelConfig &cfg, std::mt19937_64 &rng) {
  params.Add("ffm.refine.w", ParamGroup::kFfm, HeUniform({1, cfg.channels, 3, 3}, rng));
  params.Add("ffm.refine.b", ParamGroup::kFfm, Tensor::Zeros({1}));
}

Var SupportPrototype(std::span<const Var> xs, std::span<const Var> masks) {
  if (xs.empty() || xs.size() != masks.size()) {
    throw Error(ErrorCode::kInvalidArgument, "support features and masks must pair up");
  }
  if (xs.size() == 1) return MaskedAvgPool(xs[0], masks[0]);
  // Lay the shots side by side as [C, k, H*W] so one pooling covers them all.
  const std::size_t c = xs[0].shape()[0];
  std::vector<Var> cols, rows;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Shape &s = xs[i].shape();
    cols.push_back(Transpose(Reshape(xs[i], {c, s[1] * s[2]})));
    rows.push_back(Reshape(masks[i], {1, s[1] * s[2]}));
  }
  const std::size_t hw = xs[0].shape()[1] * xs[0].shape()[2];
  Var stacked = Reshape(Transpose(Concat(cols)), {c, xs.size(), hw});
  return MaskedAvgPool(stacked, Concat(rows));
}

Var RefinePseudoMask(Var xq, Var m_pse0, Var p, const BoundParams &params) {
  const Shape &s = xq.shape();
  Var fused = Add(Mul(xq, m_pse0), p);
  Var logit = Conv2d(fused, params.Get("ffm.refine.w"), params.Get("ffm.refine.b"));
  return Reshape(Sigmoid(logit), {s[1], s[2]});
}

Var FilterQuery(Var xq, Var m_pse_r) { return Add(Mul(xq, m_pse_r), xq); }

}  // namespace dpcn
