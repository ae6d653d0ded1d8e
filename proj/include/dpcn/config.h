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

#ifndef DPCN_CONFIG_H_
#define DPCN_CONFIG_H_

#include <array>
#include <cstdint>
#include <map>
#include <string>

namespace dpcn {

enum class PoolVariant { kSerial, kParallel };

// Which dynamic kernels the DCM generates.
struct KernelSelection {
  bool vertical = true;
  bool horizontal = true;
  bool square = true;

  int count() const { return int(vertical) + int(horizontal) + int(square); }
  bool none() const { return count() == 0; }
  std::string ToString() const;  // "v+h+s", "s", ..., "none"
  static KernelSelection Parse(const std::string &text);
};

struct ModelConfig {
  std::size_t channels = 32;       // mid-level feature channels C
  std::size_t high_channels = 64;  // high-level feature channels C_h
  std::size_t kernel_size = 5;     // S
  PoolVariant pool_variant = PoolVariant::kSerial;
  KernelSelection kernels;
  bool sam = true;
  bool ffm = true;
  bool dcm = true;

  // DCM runs only when enabled with at least one kernel.
  bool dcm_active() const { return dcm && !kernels.none(); }
  // Channel count of the concatenated decoder input.
  std::size_t xout_channels() const;
};

struct TrainConfig {
  double lr0 = 0.005;
  int batch = 4;
  int epochs = 30;
  int episodes_per_epoch = 24;
  double poly_power = 0.9;
  // Largest global L2 norm of a batch gradient; larger ones are rescaled to
  // it. 0 leaves gradients untouched.
  double grad_clip = 0.0;
  double lambda = 1.0;  // support-loss weight
  int shots = 1;
  std::uint64_t seed = 1;
  int fold = 0;
  int num_classes = 12;
  std::size_t image_size = 64;
  // Encoder stages that stop training once warmup_epochs have elapsed.
  int warmup_epochs = 10;
  std::array<bool, 3> freeze_after_warmup = {true, true, false};
  // Validation episodes per epoch (0 disables the per-epoch mIoU column).
  int val_episodes = 20;
  ModelConfig model;
};

// Parses "key = value" lines ('#' starts a comment) into a flat map.
std::map<std::string, std::string> ParseKeyValues(const std::string &text);
// Applies recognised keys on top of cfg; unknown keys are an error.
void ApplyConfig(const std::map<std::string, std::string> &kv, TrainConfig &cfg);
TrainConfig LoadTrainConfig(const std::string &path, TrainConfig base = {});

// Canonical text of every setting that affects results. Disabled modules
// collapse to the same text regardless of their sub-options.
std::string CanonicalConfig(const TrainConfig &cfg);
// Every setting as "key = value" lines that LoadTrainConfig reads back.
std::string ConfigFileText(const TrainConfig &cfg);
// FNV-1a of the canonical config, as 16 hex digits.
std::string ConfigFingerprint(const TrainConfig &cfg);

}  // namespace dpcn

#endif  // DPCN_CONFIG_H_
