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

#ifndef DPCN_TRAINER_H_
#define DPCN_TRAINER_H_

#include <array>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dpcn/config.h"
#include "dpcn/dcm.h"
#include "dpcn/model.h"
#include "dpcn/sam.h"
#include "dpcn/synth.h"
#include "dpcn/tape.h"

namespace dpcn {

// Non-differentiable decisions of one prediction branch: the SAM prior and
// the foreground positions picked from each support mask. Filling it once
// and replaying it pins those decisions, which is what a finite-difference
// check of a stop-gradient network needs.
struct BranchCache {
  bool filled = false;
  std::optional<ActivationSet> sam;
  std::vector<std::vector<std::size_t>> foreground;
  bool collapsed = false;  // support mask had no usable foreground
};

struct EpisodeCache {
  BranchCache query;
  std::vector<BranchCache> support;  // one per support shot
};

struct BranchResult {
  Var prob_feat;  // [h,w] decoder output
  Var prob;       // [H,W] bilinear upsample to mask resolution
  Var x_out;
  std::optional<ActivationSet> activations;
  std::optional<Var> m_pse_r;
  std::size_t foreground_count = 0;
};

// One pass of the network: supports (features + masks) predict the query.
struct BranchInputs {
  std::vector<Var> support_mid;
  std::vector<Tensor> support_high;
  std::vector<Var> support_masks;  // any resolution; resized nearest
  Var query_mid;
  Tensor query_high;
  std::size_t out_h = 0, out_w = 0;
};

BranchResult RunBranch(const BranchInputs &in, const BoundParams &params, const ModelConfig &cfg,
                       BranchCache *cache = nullptr);

struct EpisodeForward {
  BranchResult query;
  Var loss_q;
  std::optional<Var> loss_s;  // absent when lambda == 0 or every swap collapsed
  Var total;
  int collapsed_swaps = 0;
};

// Mean BCE between a predicted probability map and a binary mask.
Var LossQuery(Var prob, Var mask);

// encode -> SAM -> FFM -> DCM -> decode, plus (when lambda > 0) the
// role-swapped support prediction with the soft query prediction as mask.
// Total = L_q + lambda * L_s.
EpisodeForward ForwardEpisode(GradTape &tape, const Episode &ep, const BoundParams &params,
                              const TrainConfig &cfg, EpisodeCache *cache = nullptr);

// Query prediction only, at mask resolution.
Tensor PredictQuery(const Episode &ep, const ModelParams &params, const ModelConfig &cfg);

// lr0 * (1 - iter / max_iter)^power
double PolyLr(double lr0, std::size_t iter, std::size_t max_iter, double power);

struct StepLog {
  int epoch = 0;
  std::size_t step = 0;
  double lr = 0.0;
  double loss_q = 0.0;
  double loss_s = 0.0;
  double loss_total = 0.0;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_miou;
};

struct TrainResult {
  ModelParams params;
  std::vector<StepLog> steps;
  std::vector<EpochLog> epochs;
};

// Whether an entry receives updates at the given epoch.
bool IsTrainable(const ModelParams::Entry &e, const TrainConfig &cfg, int epoch);

std::size_t StepsPerEpoch(const TrainConfig &cfg);

// Plain SGD with the poly schedule; batch gradient is the mean over episode
// gradients accumulated in episode order. When out_dir is non-empty, writes
// train_log.csv, epoch_log.csv and model.ckpt there. Throws kNonFiniteLoss
// (after saving last_good.ckpt) on a non-finite batch loss.
TrainResult Train(const TrainConfig &cfg, const std::string &out_dir = "",
                  std::ostream *progress = nullptr);

void WriteStepLog(const std::vector<StepLog> &steps, std::ostream &out);

struct GradCheckEntry {
  std::size_t flat = 0;
  std::string name;
  ParamGroup group = ParamGroup::kEncoder;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct PipelineGradReport {
  double max_rel_err = 0.0;
  std::vector<GradCheckEntry> entries;
  std::array<int, kNumParamGroups> per_group{};
  double loss = 0.0;
};

// Samples n_params trainable scalars (at least one per parameter group) and
// compares tape gradients of the total loss against central differences on a
// small episode (cfg.image_size, typically 32).
PipelineGradReport GradcheckPipeline(const TrainConfig &cfg, int n_params, double h = 1e-5);
PipelineGradReport GradcheckPipeline(const TrainConfig &cfg, const ModelParams &params,
                                     const Episode &ep, int n_params, double h = 1e-5);

}  // namespace dpcn

#endif  // DPCN_TRAINER_H_
