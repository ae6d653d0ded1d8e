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

#ifndef DPCN_ABLATE_H_
#define DPCN_ABLATE_H_

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dpcn/config.h"
#include "dpcn/eval.h"
#include "dpcn/model.h"

namespace dpcn {

enum class AblationAxis { kComponents, kKernelSize, kKernelVariants, kPoolVariant, kLambda };

AblationAxis ParseAxis(const std::string &name);
const char *AxisName(AblationAxis axis);

struct AblationSetting {
  std::string label;
  TrainConfig cfg;
};

// The settings swept along one axis, each derived from base.
// components: the 2^3 SAM/FFM/DCM grid, baseline first and full last.
std::vector<AblationSetting> AxisSettings(const TrainConfig &base, AblationAxis axis);

// Trained parameters keyed by config fingerprint. With a directory, models
// are also persisted as <fingerprint>.ckpt and reloaded on later lookups.
class RunCache {
 public:
  explicit RunCache(std::string dir = "") : dir_(std::move(dir)) {}

  // Trains on a miss. Training errors propagate.
  const ModelParams &Get(const TrainConfig &cfg, std::ostream *progress = nullptr);
  bool Has(const TrainConfig &cfg) const;
  std::size_t trained() const { return trained_; }

 private:
  std::string dir_;
  std::map<std::string, ModelParams> models_;
  std::size_t trained_ = 0;
};

struct AblationOptions {
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::vector<int> folds = {0};
  int eval_episodes = kDefaultEvalEpisodes;
  int eval_shots = 1;
  std::ostream *progress = nullptr;
};

// Evaluation episodes depend on the training seed only, so every setting of
// a sweep is scored on the same episodes.
std::uint64_t EvalSeedFor(std::uint64_t train_seed);

struct AblationRun {
  std::string label;
  int fold = 0;
  std::uint64_t seed = 0;
  std::string fingerprint;
  std::optional<EvalReport> report;
  std::string error;  // set when training or evaluation failed
};

struct AblationRow {
  std::string label;
  int fold = 0;
  double miou = 0.0;      // mean over successful seeds
  double fb_iou = 0.0;
  double miou_std = 0.0;  // population std over seeds
  int seeds = 0;
};

struct AblationResult {
  AblationAxis axis = AblationAxis::kComponents;
  std::vector<AblationRun> runs;
  std::vector<AblationRow> rows;  // one per (setting, fold), in sweep order

  const AblationRow &Row(const std::string &label, int fold = 0) const;
};

AblationResult RunAblation(const TrainConfig &base, AblationAxis axis,
                           const AblationOptions &options, RunCache &cache);

// Columns: setting,fold,miou,fbiou,miou_std,seeds (IoUs in percent).
void WriteAblationCsv(const AblationResult &result, std::ostream &out);
// Columns: setting,fold,seed,fingerprint,miou,fbiou,status.
void WriteRunsCsv(const AblationResult &result, std::ostream &out);
// Self-contained chart of mean mIoU per setting with +-1 std whiskers.
std::string AblationSvg(const AblationResult &result);
// ablation_<axis>.csv, ablation_<axis>_runs.csv and ablation_<axis>.svg.
void WriteAblation(const AblationResult &result, const std::string &out_dir);

}  // namespace dpcn

#endif  // DPCN_ABLATE_H_
