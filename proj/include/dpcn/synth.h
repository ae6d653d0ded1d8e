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

#ifndef DPCN_SYNTH_H_
#define DPCN_SYNTH_H_

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dpcn/tensor.h"

namespace dpcn {

// 64-bit mixing of two words (splitmix64 finalizer); used to derive
// independent seeds for sub-streams.
std::uint64_t MixSeed(std::uint64_t a, std::uint64_t b);

enum class Family { kRing, kComb, kCross, kBars, kBlob, kEllipse, kGrid, kHollowSquare };
inline constexpr int kNumFamilies = 8;
const char *FamilyName(Family family);

struct ShapeClass {
  int id = 0;
  Family family = Family::kRing;
  // Appearance.
  std::array<double, 3> color{};
  double texture_freq = 4.0;   // stripe cycles per image side
  double texture_angle = 0.0;  // stripe orientation
  double intensity_lo = 0.6;
  double intensity_hi = 1.0;
  // Geometry.
  double scale_min = 0.25;  // fraction of image side
  double scale_max = 0.6;
  int slots_min = 1;  // holes / slots / teeth gaps
  int slots_max = 2;
};

struct ClassLibrary {
  std::vector<ShapeClass> classes;
  std::size_t image_size = 64;
};

// Deterministic library: families are assigned cyclically and appearance is
// spread over hue so that classes differ in color, texture and geometry.
ClassLibrary MakeClassLibrary(int num_classes = 12, std::size_t image_size = 64,
                              std::uint64_t seed = 0x5EEDC1A55ULL);

struct Render {
  Tensor image;  // [3,S,S]
  Tensor mask;   // [S,S], values in {0,1}
};

inline constexpr double kMinForeground = 0.02;
inline constexpr double kMaxForeground = 0.6;
inline constexpr int kMaxRenderDraws = 16;

// Textured target composited over a cluttered background with 1-2
// distractors from other classes, plus N(0, 0.05^2) pixel noise. Pure
// function of (library, class, seed).
Render RenderClass(const ClassLibrary &lib, int class_id, std::uint64_t seed);

// Number of background components not connected to the image border.
int CountHoles(const Tensor &mask);

struct FoldSplit {
  int fold = 0;
  std::vector<int> train_ids;
  std::vector<int> test_ids;
};

inline constexpr int kNumFolds = 4;
// Fold f tests on the contiguous block [f*n/4, (f+1)*n/4).
FoldSplit MakeFold(int fold, int num_classes = 12);

enum class Phase { kTrain, kTest };

struct SupportPair {
  Tensor image;
  Tensor mask;
};

struct Episode {
  std::vector<SupportPair> support;
  Tensor query_image;
  Tensor query_mask;
  int class_id = 0;
};

Episode SampleEpisode(const ClassLibrary &lib, const FoldSplit &split, Phase phase,
                      int shots, std::uint64_t seed);

// Binary P5 PGM, maxval 255, foreground stored as 255.
void WriteMaskPgm(const Tensor &mask, const std::string &path);
Tensor ReadMaskPgm(const std::string &path);

}  // namespace dpcn

#endif  // DPCN_SYNTH_H_
