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

#include "dpcn/synth.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "dpcn/error.h"
#include "dpcn/tape.h"

namespace dpcn {

std::uint64_t MixSeed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

const char *FamilyName(Family family) {
  switch (family) {
    case Family::kRing: return "ring";
    case Family::kComb: return "comb";
    case Family::kCross: return "cross";
    case Family::kBars: return "bars";
    case Family::kBlob: return "blob";
    case Family::kEllipse: return "ellipse";
    case Family::kGrid: return "grid";
    case Family::kHollowSquare: return "hollow-square";
  }
  return "unknown";
}

namespace {

using Rng = std::mt19937_64;

double Uniform(Rng &rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int UniformInt(Rng &rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

std::array<double, 3> HsvToRgb(double h, double s, double v) {
  const double c = v * s;
  const double hp = std::fmod(h, 1.0) * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp)) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  const double m = v - c;
  return {r + m, g + m, b + m};
}

// One placed instance of a class.
struct Geometry {
  Family family;
  double cx, cy;  // pixel units
  double angle;
  double radius;  // half extent
  double stroke;
  int count;  // teeth, bars or grid cells per side
  double aspect;
  std::array<double, 4> wobble;
};

constexpr double kMinStroke = 4.0;

Geometry DrawGeometry(const ShapeClass &cls, Rng &rng, double size, double scale_lo,
                      double scale_hi, bool keep_inside) {
  Geometry g{};
  g.family = cls.family;
  g.radius = 0.5 * size * Uniform(rng, scale_lo, scale_hi);
  g.angle = Uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double r = g.radius;
  switch (cls.family) {
    case Family::kRing:
      g.stroke = std::min(std::max(kMinStroke, r * Uniform(rng, 0.35, 0.5)), r - 3.0);
      g.count = 1;
      break;
    case Family::kHollowSquare:
      g.stroke = std::min(std::max(kMinStroke, r * Uniform(rng, 0.3, 0.45)), r - 3.0);
      g.count = 1;
      break;
    case Family::kCross:
      g.stroke = std::max(kMinStroke, r * Uniform(rng, 0.45, 0.65));
      break;
    case Family::kComb:
    case Family::kBars: {
      g.stroke = std::max(kMinStroke, r * 0.3);
      const int fit = static_cast<int>((2.0 * r / kMinStroke + 1.0) / 2.0);
      g.count = std::clamp(UniformInt(rng, cls.slots_min + 1, cls.slots_max + 1), 2,
                           std::max(2, fit));
      break;
    }
    case Family::kGrid: {
      g.stroke = std::max(kMinStroke, r * 0.2);
      const int fit = static_cast<int>(2.0 * r / (g.stroke + 3.0));
      g.count = std::clamp(UniformInt(rng, cls.slots_min, cls.slots_max), 1,
                           std::max(1, fit));
      break;
    }
    case Family::kBlob:
      for (double &w : g.wobble) w = Uniform(rng, 0.0, 1.0);
      break;
    case Family::kEllipse:
      g.aspect = Uniform(rng, 0.45, 0.85);
      break;
  }
  // Rotated extent is bounded by r * sqrt(2).
  const double margin = keep_inside ? std::ceil(r * std::numbers::sqrt2) + 1.0 : 0.3 * r;
  const double lo = std::min(margin, 0.5 * size), hi = std::max(size - margin, 0.5 * size);
  g.cx = Uniform(rng, lo, hi);
  g.cy = Uniform(rng, lo, hi);
  return g;
}

bool Inside(const Geometry &g, double px, double py) {
  const double dx = px - g.cx, dy = py - g.cy;
  const double ca = std::cos(g.angle), sa = std::sin(g.angle);
  const double u = ca * dx + sa * dy;
  const double v = -sa * dx + ca * dy;
  const double r = g.radius;
  const double au = std::abs(u), av = std::abs(v);
  switch (g.family) {
    case Family::kRing: {
      const double d = std::hypot(u, v);
      return d <= r && d >= r - g.stroke;
    }
    case Family::kHollowSquare: {
      const double d = std::max(au, av);
      return d <= r && d >= r - g.stroke;
    }
    case Family::kCross:
      return (au <= 0.5 * g.stroke && av <= r) || (av <= 0.5 * g.stroke && au <= r);
    case Family::kComb:
    case Family::kBars: {
      if (au > r || av > r) return false;
      if (g.family == Family::kComb && v >= r - g.stroke) return true;
      const double w = 2.0 * r / (2.0 * g.count - 1.0);
      return static_cast<int>((u + r) / w) % 2 == 0;
    }
    case Family::kGrid: {
      if (au > r || av > r) return false;
      const double cell = 2.0 * r / g.count;
      auto near_line = [&](double s) {
        const double d = std::fmod(s + r, cell);
        return std::min(d, cell - d) <= 0.5 * g.stroke || s + r >= 2.0 * r - 0.5 * g.stroke;
      };
      return near_line(u) || near_line(v);
    }
    case Family::kBlob: {
      const double theta = std::atan2(v, u);
      const auto &w = g.wobble;
      const double f = 0.75 + 0.125 * (w[0] * std::sin(2.0 * theta + 6.0 * w[1]) +
                                       w[2] * std::sin(3.0 * theta + 6.0 * w[3]));
      return std::hypot(u, v) <= r * f;
    }
    case Family::kEllipse: {
      const double a = u / r, b = v / (r * g.aspect);
      return a * a + b * b <= 1.0;
    }
  }
  return false;
}

// Paints the class texture wherever the geometry covers; returns coverage.
Tensor Paint(const ShapeClass &cls, const Geometry &g, Rng &rng, Tensor &image) {
  const std::size_t n = image.dim(1);
  Tensor cover({n, n});
  std::array<double, 3> color = cls.color;
  for (double &c : color) c = std::clamp(c + Uniform(rng, -0.04, 0.04), 0.0, 1.0);
  const double phase = Uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double ca = std::cos(cls.texture_angle), sa = std::sin(cls.texture_angle);
  const double k = 2.0 * std::numbers::pi * cls.texture_freq / static_cast<double>(n);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      if (!Inside(g, px, py)) continue;
      cover.at(y, x) = 1.0;
      const double stripe = 0.5 + 0.5 * std::sin(k * (px * ca + py * sa) + phase);
      const double level =
          cls.intensity_lo + (cls.intensity_hi - cls.intensity_lo) * stripe;
      for (std::size_t c = 0; c < 3; ++c) image.at(c, y, x) = color[c] * level;
    }
  }
  return cover;
}

bool FeatureMaskNonEmpty(const Tensor &mask) {
  const std::size_t n = mask.dim(0), f = std::max<std::size_t>(1, n / 4);
  const Tensor small = ResizeNearest(mask, f, f);
  return std::any_of(small.data().begin(), small.data().end(),
                     [](double v) { return v > 0.5; });
}

bool NeedsHole(Family f) {
  return f == Family::kRing || f == Family::kHollowSquare || f == Family::kGrid;
}

}  // namespace

ClassLibrary MakeClassLibrary(int num_classes, std::size_t image_size, std::uint64_t seed) {
  if (num_classes < kNumFolds) {
    throw Error(ErrorCode::kInvalidArgument, "need at least 4 classes");
  }
  ClassLibrary lib;
  lib.image_size = image_size;
  Rng rng(seed);
  for (int id = 0; id < num_classes; ++id) {
    ShapeClass cls;
    cls.id = id;
    cls.family = static_cast<Family>(id % kNumFamilies);
    // Stride through hue so that neighbouring ids are far apart in color.
    const double hue = std::fmod(id * 5.0 / num_classes + Uniform(rng, -0.02, 0.02) + 1.0, 1.0);
    cls.color = HsvToRgb(hue, Uniform(rng, 0.55, 0.9), Uniform(rng, 0.75, 1.0));
    cls.texture_freq = 2.0 + (id * 7 % 12) * 0.75;
    cls.texture_angle = Uniform(rng, 0.0, std::numbers::pi);
    cls.intensity_lo = Uniform(rng, 0.45, 0.7);
    cls.intensity_hi = Uniform(rng, 0.85, 1.0);
    switch (cls.family) {
      case Family::kComb: cls.slots_min = 1; cls.slots_max = 3; break;
      case Family::kBars: cls.slots_min = 1; cls.slots_max = 2; break;
      case Family::kGrid: cls.slots_min = 2; cls.slots_max = 3; break;
      default: cls.slots_min = 1; cls.slots_max = 1; break;
    }
    lib.classes.push_back(cls);
  }
  return lib;
}

Render RenderClass(const ClassLibrary &lib, int class_id, std::uint64_t seed) {
  if (class_id < 0 || static_cast<std::size_t>(class_id) >= lib.classes.size()) {
    throw Error(ErrorCode::kInvalidArgument, "unknown class " + std::to_string(class_id));
  }
  const ShapeClass &cls = lib.classes[class_id];
  const std::size_t n = lib.image_size;
  const double size = static_cast<double>(n);
  for (int attempt = 0; attempt < kMaxRenderDraws; ++attempt) {
    Rng rng(MixSeed(seed, attempt));
    Tensor image({3, n, n});
    // Background: per-channel gray level with a linear ramp.
    for (std::size_t c = 0; c < 3; ++c) {
      const double base = Uniform(rng, 0.3, 0.55);
      const double gx = Uniform(rng, -0.15, 0.15), gy = Uniform(rng, -0.15, 0.15);
      for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
          image.at(c, y, x) = base + gx * ((x + 0.5) / size - 0.5) + gy * ((y + 0.5) / size - 0.5);
        }
      }
    }
    const int distractors = UniformInt(rng, 1, 2);
    for (int d = 0; d < distractors && lib.classes.size() > 1; ++d) {
      int other = UniformInt(rng, 0, static_cast<int>(lib.classes.size()) - 2);
      if (other >= class_id) ++other;
      const ShapeClass &oc = lib.classes[other];
      const Geometry g = DrawGeometry(oc, rng, size, 0.25, 0.45, false);
      Paint(oc, g, rng, image);
    }
    const Geometry g = DrawGeometry(cls, rng, size, cls.scale_min, cls.scale_max, true);
    Tensor mask = Paint(cls, g, rng, image);
    std::normal_distribution<double> noise(0.0, 0.05);
    for (double &v : image.data()) v += noise(rng);

    double fg = 0.0;
    for (double v : mask.data()) fg += v;
    fg /= static_cast<double>(mask.size());
    if (fg < kMinForeground || fg > kMaxForeground) continue;
    if (!FeatureMaskNonEmpty(mask)) continue;
    if (NeedsHole(cls.family) && CountHoles(mask) < 1) continue;
    return {std::move(image), std::move(mask)};
  }
  throw Error(ErrorCode::kDegenerateGeometry,
              "class " + std::to_string(class_id) + " failed after 16 draws");
}

int CountHoles(const Tensor &mask) {
  const std::size_t h = mask.dim(0), w = mask.dim(1);
  std::vector<int> label(h * w, 0);  // 0 unvisited bg, 1 visited/fg
  for (std::size_t i = 0; i < h * w; ++i) label[i] = mask[i] > 0.5 ? 1 : 0;
  std::vector<std::size_t> stack;
  auto flood = [&](std::size_t start) {
    stack.push_back(start);
    label[start] = 1;
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      const std::size_t y = i / w, x = i % w;
      const std::size_t nb[4] = {y > 0 ? i - w : i, y + 1 < h ? i + w : i,
                                 x > 0 ? i - 1 : i, x + 1 < w ? i + 1 : i};
      for (std::size_t j : nb) {
        if (label[j] == 0) {
          label[j] = 1;
          stack.push_back(j);
        }
      }
    }
  };
  for (std::size_t x = 0; x < w; ++x) {
    if (label[x] == 0) flood(x);
    if (label[(h - 1) * w + x] == 0) flood((h - 1) * w + x);
  }
  for (std::size_t y = 0; y < h; ++y) {
    if (label[y * w] == 0) flood(y * w);
    if (label[y * w + w - 1] == 0) flood(y * w + w - 1);
  }
  int holes = 0;
  for (std::size_t i = 0; i < h * w; ++i) {
    if (label[i] == 0) {
      ++holes;
      flood(i);
    }
  }
  return holes;
}

FoldSplit MakeFold(int fold, int num_classes) {
  if (fold < 0 || fold >= kNumFolds) {
    throw Error(ErrorCode::kInvalidArgument, "fold must be in 0..3");
  }
  if (num_classes % kNumFolds != 0) {
    throw Error(ErrorCode::kInvalidArgument, "class count must be divisible by 4");
  }
  FoldSplit split;
  split.fold = fold;
  const int per = num_classes / kNumFolds;
  for (int id = 0; id < num_classes; ++id) {
    (id / per == fold ? split.test_ids : split.train_ids).push_back(id);
  }
  return split;
}

Episode SampleEpisode(const ClassLibrary &lib, const FoldSplit &split, Phase phase,
                      int shots, std::uint64_t seed) {
  if (shots < 1) throw Error(ErrorCode::kInvalidArgument, "shots must be >= 1");
  const std::vector<int> &pool = phase == Phase::kTrain ? split.train_ids : split.test_ids;
  if (pool.empty()) throw Error(ErrorCode::kEmptyPool, "phase class pool is empty");
  Rng rng(seed);
  Episode ep;
  ep.class_id = pool[UniformInt(rng, 0, static_cast<int>(pool.size()) - 1)];
  for (int i = 0; i < shots; ++i) {
    Render r = RenderClass(lib, ep.class_id, MixSeed(seed, 2 * i + 1));
    ep.support.push_back({std::move(r.image), std::move(r.mask)});
  }
  Render q = RenderClass(lib, ep.class_id, MixSeed(seed, 2 * shots + 1));
  ep.query_image = std::move(q.image);
  ep.query_mask = std::move(q.mask);
  return ep;
}

void WriteMaskPgm(const Tensor &mask, const std::string &path) {
  if (mask.rank() != 2) throw Error(ErrorCode::kShapeMismatch, "mask must be [H,W]");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot open " + path);
  out << "P5\n" << mask.dim(1) << ' ' << mask.dim(0) << "\n255\n";
  std::vector<char> bytes(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    bytes[i] = static_cast<char>(mask[i] > 0.5 ? 255 : 0);
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIoError, "write failed for " + path);
}

Tensor ReadMaskPgm(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path);
  std::string magic;
  long width = 0, height = 0, maxval = 0;
  in >> magic >> width >> height >> maxval;
  if (!in || magic != "P5" || width <= 0 || height <= 0 || maxval <= 0 || maxval > 255) {
    throw Error(ErrorCode::kMalformedHeader, "not a binary 8-bit PGM: " + path);
  }
  if (!std::isspace(in.get())) throw Error(ErrorCode::kMalformedHeader, "missing separator");
  const std::size_t h = static_cast<std::size_t>(height), w = static_cast<std::size_t>(width);
  std::vector<unsigned char> bytes(h * w);
  in.read(reinterpret_cast<char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size()) {
    throw Error(ErrorCode::kMalformedHeader, "truncated PGM payload: " + path);
  }
  Tensor mask({h, w});
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    mask[i] = 2 * static_cast<long>(bytes[i]) > maxval ? 1.0 : 0.0;
  }
  return mask;
}

}  // namespace dpcn
