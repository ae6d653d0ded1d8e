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

#include "dpcn/eval.h"

#include <cstdio>
#include <filesystem>

#include "json.hpp"

#include "dpcn/error.h"
#include "dpcn/trainer.h"

namespace dpcn {

namespace {

struct Counts {
  double inter = 0.0;
  double uni = 0.0;

  double Iou() const { return uni == 0.0 ? 1.0 : inter / uni; }
};

void Accumulate(const Tensor &pred, const Tensor &gt, bool fg, Counts &c) {
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool p = (pred[i] >= 0.5) == fg;
    const bool g = (gt[i] >= 0.5) == fg;
    c.inter += p && g;
    c.uni += p || g;
  }
}

void CheckShapes(const Tensor &pred, const Tensor &gt) {
  if (pred.shape() != gt.shape()) {
    throw Error(ErrorCode::kShapeMismatch, "prediction " + ShapeString(pred.shape()) +
                                               " vs mask " + ShapeString(gt.shape()));
  }
}

}  // namespace

double Iou(const Tensor &pred, const Tensor &gt) {
  CheckShapes(pred, gt);
  Counts c;
  Accumulate(pred, gt, true, c);
  return c.Iou();
}

EvalReport Evaluate(const ClassLibrary &lib, const FoldSplit &split, int n_episodes, int shots,
                    std::uint64_t seed, const Predictor &predict, const std::string &dump_dir) {
  if (n_episodes < 1) throw Error(ErrorCode::kInvalidArgument, "need at least one episode");
  if (!dump_dir.empty()) std::filesystem::create_directories(dump_dir);
  std::map<int, Counts> per_class;
  Counts fg, bg;
  for (int i = 0; i < n_episodes; ++i) {
    const Episode ep = SampleEpisode(lib, split, Phase::kTest, shots, MixSeed(seed, i));
    const Tensor pred = predict(ep);
    CheckShapes(pred, ep.query_mask);
    Accumulate(pred, ep.query_mask, true, per_class[ep.class_id]);
    Accumulate(pred, ep.query_mask, true, fg);
    Accumulate(pred, ep.query_mask, false, bg);
    if (!dump_dir.empty()) {
      char name[64];
      std::snprintf(name, sizeof name, "/ep%04d_class%02d.pgm", i, ep.class_id);
      Tensor bin = pred;
      for (std::size_t j = 0; j < bin.size(); ++j) bin[j] = bin[j] >= 0.5 ? 1.0 : 0.0;
      WriteMaskPgm(bin, dump_dir + name);
    }
  }
  EvalReport r;
  for (const auto &[id, c] : per_class) {
    r.class_iou[id] = c.Iou();
    r.miou += c.Iou();
  }
  r.miou /= static_cast<double>(per_class.size());
  r.iou_fg = fg.Iou();
  r.iou_bg = bg.Iou();
  r.fb_iou = 0.5 * (r.iou_fg + r.iou_bg);
  r.episodes = n_episodes;
  return r;
}

EvalReport EvaluateModel(const ModelParams &params, const TrainConfig &cfg, int n_episodes,
                         int shots, std::uint64_t seed, const std::string &dump_dir) {
  const ClassLibrary lib = MakeClassLibrary(cfg.num_classes, cfg.image_size);
  const FoldSplit split = MakeFold(cfg.fold, cfg.num_classes);
  EvalReport r = Evaluate(
      lib, split, n_episodes, shots, seed,
      [&](const Episode &ep) { return PredictQuery(ep, params, cfg.model); }, dump_dir);
  r.fingerprint = ConfigFingerprint(cfg);
  return r;
}

std::string ToJson(const EvalReport &report) {
  nlohmann::json j;
  j["miou"] = report.miou;
  j["fb_iou"] = report.fb_iou;
  j["iou_fg"] = report.iou_fg;
  j["iou_bg"] = report.iou_bg;
  j["episodes"] = report.episodes;
  j["fingerprint"] = report.fingerprint;
  for (const auto &[id, v] : report.class_iou) j["class_iou"][std::to_string(id)] = v;
  return j.dump(2);
}

}  // namespace dpcn
