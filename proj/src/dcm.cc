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

#include "dpcn/dcm.h"

#include <string>

#include "dpcn/error.h"

namespace dpcn {

namespace {

constexpr const char *kGenNames[3] = {"dcm.gen_v", "dcm.gen_h", "dcm.gen_s"};

// seq [L, C] -> [L, C] through conv1d(3) - ReLU - conv1d(3).
Var RunGenerator(Var seq, const BoundParams &params, const std::string &prefix) {
  const std::size_t l = seq.shape()[0], c = seq.shape()[1];
  Var x = Reshape(Transpose(seq), {c, 1, l});
  x = Relu(Conv2d(x, params.Get(prefix + ".conv1.w"), params.Get(prefix + ".conv1.b")));
  x = Conv2d(x, params.Get(prefix + ".conv2.w"), params.Get(prefix + ".conv2.b"));
  return Transpose(Reshape(x, {c, l}));
}

}  // namespace

void AddKernelGenParams(ModelParams &params, const ModelConfig &cfg, std::mt19937_64 &rng) {
  const std::size_t c = cfg.channels;
  const bool on[3] = {cfg.kernels.vertical, cfg.kernels.horizontal, cfg.kernels.square};
  for (int k = 0; k < 3; ++k) {
    if (!on[k]) continue;
    const std::string p = kGenNames[k];
    params.Add(p + ".conv1.w", ParamGroup::kKernelGen, HeUniform({c, c, 1, 3}, rng));
    params.Add(p + ".conv1.b", ParamGroup::kKernelGen, Tensor::Zeros({c}));
    params.Add(p + ".conv2.w", ParamGroup::kKernelGen, HeUniform({c, c, 1, 3}, rng));
    params.Add(p + ".conv2.b", ParamGroup::kKernelGen, Tensor::Zeros({c}));
  }
}

std::vector<std::size_t> ForegroundPositions(const Tensor &mask) {
  std::vector<std::size_t> pos;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] >= 0.5) pos.push_back(i);
  }
  return pos;
}

ForegroundVectors ExtractForeground(Var xs, Var mask) {
  const auto pos = ForegroundPositions(mask.value());
  return ExtractForeground(xs, mask, pos);
}

ForegroundVectors ExtractForeground(Var xs, Var mask, std::span<const std::size_t> positions) {
  if (positions.empty()) {
    throw Error(ErrorCode::kEmptyForeground, "support mask has no foreground position");
  }
  return {GatherPositions(xs, mask, positions), {positions.size()}};
}

ForegroundVectors MergeShots(std::span<const ForegroundVectors> shots) {
  if (shots.empty()) throw Error(ErrorCode::kEmptyForeground, "no shots to merge");
  if (shots.size() == 1) return shots[0];
  std::vector<Var> parts;
  ForegroundVectors merged;
  for (const ForegroundVectors &s : shots) {
    parts.push_back(s.rows);
    merged.counts.insert(merged.counts.end(), s.counts.begin(), s.counts.end());
  }
  merged.rows = Concat(parts);
  return merged;
}

Prototypes PoolPrototypes(Var p_fg, std::size_t s, PoolVariant variant) {
  Var p_s = AdaptivePool1d(p_fg, s);
  Var p_s2 = variant == PoolVariant::kSerial ? AdaptivePool1d(p_s, s * s)
                                             : AdaptivePool1d(p_fg, s * s);
  return {p_s, p_s2};
}

DynamicKernelSet GenerateKernels(const Prototypes &protos, const BoundParams &params,
                                 std::size_t s) {
  const Shape &ps = protos.p_s.shape();
  const Shape &ps2 = protos.p_s2.shape();
  if (ps.size() != 2 || ps[0] != s || ps2.size() != 2 || ps2[0] != s * s || ps2[1] != ps[1]) {
    throw Error(ErrorCode::kShapeMismatch, "prototypes " + ShapeString(ps) + ", " +
                                               ShapeString(ps2) + " for S=" + std::to_string(s));
  }
  const std::size_t c = ps[1];
  DynamicKernelSet k;
  if (params.Contains("dcm.gen_v.conv1.w")) {
    k.vertical = Reshape(RunGenerator(protos.p_s, params, kGenNames[0]), {s, 1, c});
  }
  if (params.Contains("dcm.gen_h.conv1.w")) {
    k.horizontal = Reshape(RunGenerator(protos.p_s, params, kGenNames[1]), {1, s, c});
  }
  if (params.Contains("dcm.gen_s.conv1.w")) {
    k.square = Reshape(RunGenerator(protos.p_s2, params, kGenNames[2]), {s, s, c});
  }
  return k;
}

std::vector<Var> EnhanceQuery(Var xq_filtered, const DynamicKernelSet &kernels) {
  std::vector<Var> out;
  for (const auto *k : {&kernels.vertical, &kernels.horizontal, &kernels.square}) {
    if (*k) out.push_back(DepthwiseConv2d(xq_filtered, **k));
  }
  return out;
}

Var AssembleXout(std::span<const Var> enhanced, Var x_p, const ActivationSet *maps,
                 std::optional<Var> m_pse_r) {
  const Shape &ref = x_p.shape();
  if (ref.size() != 3) throw Error(ErrorCode::kShapeMismatch, "x_p must be [C,H,W]");
  const std::size_t h = ref[1], w = ref[2];
  std::vector<Var> parts(enhanced.begin(), enhanced.end());
  for (const Var &e : enhanced) {
    if (e.shape().size() != 3 || e.shape()[1] != h || e.shape()[2] != w) {
      throw Error(ErrorCode::kShapeMismatch, "enhanced block " + ShapeString(e.shape()));
    }
  }
  parts.push_back(x_p);
  GradTape &tape = *x_p.tape;
  if (maps) {
    for (const Tensor &m : maps->maps) {
      Tensor map = m.dim(0) == h && m.dim(1) == w ? m : ResizeBilinear(m, h, w);
      parts.push_back(tape.Constant(map.Reshaped({1, h, w})));
    }
  }
  if (m_pse_r) {
    const Shape &ms = m_pse_r->shape();
    if (ms != Shape{h, w}) throw Error(ErrorCode::kShapeMismatch, "m_pse_r " + ShapeString(ms));
    parts.push_back(Reshape(*m_pse_r, {1, h, w}));
  }
  return Concat(parts);
}

}  // namespace dpcn
