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

#ifndef DPCN_EVAL_H_
#define DPCN_EVAL_H_

#include <cstdint>
#include <functional>
#include <map>
#include <string>

#include "dpcn/config.h"
#include "dpcn/model.h"
#include "dpcn/synth.h"
#include "dpcn/tensor.h"

namespace dpcn {

inline constexpr int kDefaultEvalEpisodes = 200;

// Intersection over union of two binary masks (values >= 0.5 count as set).
// Both empty scores 1; exactly one empty scores 0.
double Iou(const Tensor &pred, const Tensor &gt);

struct EvalReport {
  std::map<int, double> class_iou;  // accumulated over that class's episodes
  double miou = 0.0;
  double fb_iou = 0.0;
  double iou_fg = 0.0;
  double iou_bg = 0.0;
  int episodes = 0;
  std::string fingerprint;

  bool operator==(const EvalReport &) const = default;
};

// Maps an episode to a probability map (or binary mask) at mask resolution.
using Predictor = std::function<Tensor(const Episode &)>;

// Samples n_episodes test episodes (episode i uses MixSeed(seed, i)), scores
// predictions thresholded at 0.5 and accumulates intersections and unions
// per class and class-agnostically. If dump_dir is non-empty, predicted
// masks are written there as PGM files.
EvalReport Evaluate(const ClassLibrary &lib, const FoldSplit &split, int n_episodes, int shots,
                    std::uint64_t seed, const Predictor &predict,
                    const std::string &dump_dir = "");

// Evaluate with the model on cfg's fold and class library.
EvalReport EvaluateModel(const ModelParams &params, const TrainConfig &cfg,
                         int n_episodes = kDefaultEvalEpisodes, int shots = 1,
                         std::uint64_t seed = 1, const std::string &dump_dir = "");

std::string ToJson(const EvalReport &report);

}  // namespace dpcn

#endif  // DPCN_EVAL_H_
