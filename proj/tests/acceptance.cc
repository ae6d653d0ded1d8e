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

// Acceptance gate. Prints one PASS/FAIL line per criterion on stdout and
// exits non-zero if any criterion fails. Progress goes to stderr.
//
// The ablation criteria train 40 models on the desk protocol. Trained models
// are cached by config fingerprint in --cache, so a rerun only re-evaluates.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dpcn/ablate.h"
#include "dpcn/config.h"
#include "dpcn/dcm.h"
#include "dpcn/error.h"
#include "dpcn/eval.h"
#include "dpcn/gradcheck.h"
#include "dpcn/model.h"
#include "dpcn/sam.h"
#include "dpcn/synth.h"
#include "dpcn/tape.h"
#include "dpcn/tensor.h"
#include "dpcn/trainer.h"
#include "oracles.h"

namespace dpcn {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double Seconds(Clock::time_point since) {
  return std::chrono::duration<double>(Clock::now() - since).count();
}

std::string Fmt(const char *fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

struct Verdict {
  bool pass = true;
  std::string detail;

  void Require(bool ok, const std::string &what) {
    if (ok) return;
    pass = false;
    detail += (detail.empty() ? "" : "; ") + what;
  }
};

double Deviation(const Tensor &a, const Tensor &b) {
  if (a.shape() != b.shape()) return INFINITY;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

std::size_t Pick(std::mt19937_64 &rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

std::size_t PickOdd(std::mt19937_64 &rng, std::size_t hi) { return 2 * Pick(rng, 0, hi / 2) + 1; }

// 1. Oracle equivalence.
Verdict OracleEquivalence() {
  constexpr int kInstances = 100;
  constexpr double kTol = 1e-10;
  const auto start = Clock::now();
  std::mt19937_64 rng(101);
  auto rt = [&](Shape s) { return oracle::RandomTensor(s, rng); };
  double worst[6] = {0, 0, 0, 0, 0, 0};

  for (int t = 0; t < kInstances; ++t) {
    GradTape tape;
    {
      const std::size_t cin = Pick(rng, 1, 4), cout = Pick(rng, 1, 4);
      const std::size_t kh = PickOdd(rng, 5), kw = PickOdd(rng, 5);
      const std::size_t stride = Pick(rng, 1, 2), dil = Pick(rng, 1, 2);
      const Tensor x = rt({cin, Pick(rng, 3, 9), Pick(rng, 3, 9)});
      const Tensor w = rt({cout, cin, kh, kw});
      const Tensor b = rt({cout});
      const Var y = Conv2d(tape.Constant(x), tape.Constant(w), tape.Constant(b),
                           {.stride = stride, .dilation = dil});
      worst[0] = std::max(worst[0], Deviation(y.value(), oracle::Conv2d(x, w, &b, long(stride),
                                                                       long(dil))));
    }
    {
      const std::size_t c = Pick(rng, 1, 5);
      const Tensor x = rt({c, Pick(rng, 3, 10), Pick(rng, 3, 10)});
      const Tensor k = rt({PickOdd(rng, 9), PickOdd(rng, 9), c});
      const Var y = DepthwiseConv2d(tape.Constant(x), tape.Constant(k));
      worst[1] = std::max(worst[1], Deviation(y.value(), oracle::Depthwise(x, k)));
    }
    {
      const std::size_t h = Pick(rng, 2, 9), w = Pick(rng, 2, 9);
      const Tensor x = rt({Pick(rng, 1, 6), h, w});
      Tensor m = oracle::RandomTensor({h, w}, rng, 0.0, 1.0);
      const Var y = MaskedAvgPool(tape.Constant(x), tape.Constant(m));
      worst[2] = std::max(worst[2], Deviation(y.value(), oracle::MaskedAvgPool(x, m)));
    }
    {
      const Tensor seq = rt({Pick(rng, 1, 40), Pick(rng, 1, 5)});
      const std::size_t target = Pick(rng, 1, 30);
      const Var y = AdaptivePool1d(tape.Constant(seq), target);
      worst[3] = std::max(worst[3], Deviation(y.value(), oracle::AdaptivePool1d(seq, target)));
    }
    {
      const std::size_t c = Pick(rng, 1, 5);
      const Tensor xs = rt({c, Pick(rng, 2, 6), Pick(rng, 2, 6)});
      const Tensor xq = rt({c, Pick(rng, 2, 6), Pick(rng, 2, 6)});
      const Window win{PickOdd(rng, 5), PickOdd(rng, 5)};
      const Tensor got = RegionalCorr(RegionFeatures(xs, win), RegionFeatures(xq, win));
      worst[4] = std::max(worst[4], Deviation(got, oracle::RegionalCorr(xs, xq, long(win.dh),
                                                                       long(win.dw))));
    }
    {
      const std::size_t c = Pick(rng, 1, 6), h = Pick(rng, 2, 7), w = Pick(rng, 2, 7);
      const std::size_t blocks = Pick(rng, 0, 3);
      std::vector<Tensor> parts;
      std::vector<Var> enhanced;
      for (std::size_t i = 0; i < blocks; ++i) {
        parts.push_back(rt({c, h, w}));
        enhanced.push_back(tape.Constant(parts.back()));
      }
      const Tensor xp = rt({c, h, w});
      parts.push_back(xp);
      const bool with_maps = Pick(rng, 0, 1) == 1, with_mr = Pick(rng, 0, 1) == 1;
      ActivationSet maps;
      if (with_maps) {
        for (Tensor &m : maps.maps) {
          m = oracle::RandomTensor({h, w}, rng, 0.0, 1.0);
          parts.push_back(m);
        }
      }
      std::optional<Var> mr;
      if (with_mr) {
        const Tensor m = oracle::RandomTensor({h, w}, rng, 0.0, 1.0);
        parts.push_back(m);
        mr = tape.Constant(m);
      }
      const Var y = AssembleXout(enhanced, tape.Constant(xp), with_maps ? &maps : nullptr, mr);
      worst[5] = std::max(worst[5], Deviation(y.value(), oracle::ConcatChannels(parts)));
    }
  }

  Verdict v;
  const char *names[6] = {"conv2d", "depthwise", "masked_avg_pool", "adaptive_pool1d",
                          "regional_corr", "assemble_xout"};
  std::string summary;
  for (int i = 0; i < 6; ++i) {
    v.Require(worst[i] < kTol, std::string(names[i]) + " err " + Fmt("%.2e", worst[i]));
    summary += std::string(i ? ", " : "") + names[i] + " " + Fmt("%.1e", worst[i]);
  }
  const double secs = Seconds(start);
  v.Require(secs < 60.0, "runtime " + Fmt("%.1f", secs) + "s");
  if (v.pass) {
    v.detail = std::to_string(kInstances) + " instances each, max abs err: " + summary + " (" +
               Fmt("%.1f", secs) + "s)";
  }
  return v;
}

// 2. Gradient suite.
Verdict GradientSuite() {
  const auto start = Clock::now();
  std::mt19937_64 rng(202);
  auto rt = [&](Shape s, double lo = -1.0, double hi = 1.0) {
    return oracle::RandomTensor(s, rng, lo, hi).set_requires_grad(true);
  };
  auto project = [](Var y, std::uint64_t seed) {
    std::mt19937_64 r(seed);
    return Sum(Mul(y, y.tape->Constant(oracle::RandomTensor(y.shape(), r))));
  };
  struct Case {
    const char *name;
    MultiScalarFn fn;
    std::vector<Tensor> inputs;
  };
  const std::vector<std::size_t> positions = {0, 3, 5, 11};
  std::vector<Case> cases = {
      {"add/sub/mul", [&](GradTape &, std::span<const Var> v) {
         return project(Mul(Sub(Add(v[0], v[1]), v[2]), v[0]), 1); },
       {rt({2, 3, 4}), rt({2}), rt({3, 4})}},
      {"matmul/transpose", [&](GradTape &, std::span<const Var> v) {
         return project(Transpose(Scale(MatMul(v[0], v[1]), 0.7)), 2); },
       {rt({3, 4}), rt({4, 2})}},
      {"conv2d", [&](GradTape &, std::span<const Var> v) {
         return project(Conv2d(v[0], v[1], v[2], {.stride = 1, .dilation = 2}), 3); },
       {rt({2, 6, 5}), rt({3, 2, 3, 3}), rt({3})}},
      {"depthwise", [&](GradTape &, std::span<const Var> v) {
         return project(DepthwiseConv2d(v[0], v[1]), 4); },
       {rt({2, 5, 6}), rt({3, 5, 2})}},
      {"masked_avg_pool", [&](GradTape &, std::span<const Var> v) {
         return project(MaskedAvgPool(v[0], v[1]), 5); },
       {rt({3, 4, 4}), rt({4, 4}, 0.2, 1.0)}},
      {"adaptive_pool1d", [&](GradTape &, std::span<const Var> v) {
         return Add(project(AdaptivePool1d(v[0], 4), 6), project(AdaptivePool1d(v[0], 13), 7)); },
       {rt({9, 3})}},
      {"relu/sigmoid", [&](GradTape &, std::span<const Var> v) {
         return project(Sigmoid(Relu(v[0])), 8); },
       {rt({4, 5})}},
      {"resize", [&](GradTape &, std::span<const Var> v) {
         return Add(project(ResizeBilinear(v[0], 7, 9), 9), project(ResizeNearest(v[0], 5, 3), 10)); },
       {rt({2, 4, 5})}},
      {"concat/slice/expand", [&](GradTape &, std::span<const Var> v) {
         const std::vector<Var> parts = {v[0], Expand(v[1], 3, 3)};
         return project(Slice(Concat(parts), 1, 4), 11); },
       {rt({2, 3, 3}), rt({3})}},
      {"gather", [&](GradTape &, std::span<const Var> v) {
         return project(GatherPositions(v[0], v[1], positions), 12); },
       {rt({3, 3, 4}), rt({3, 4}, 0.0, 1.0)}},
      {"bce", [&](GradTape &, std::span<const Var> v) {
         return BceMean(Sigmoid(v[0]), v[0].tape->Constant(Tensor({2, 3}, {1, 0, 1, 1, 0, 0}))); },
       {rt({2, 3})}},
  };
  Verdict v;
  double op_worst = 0.0;
  for (const Case &c : cases) {
    const double err = GradCheck(c.fn, c.inputs).max_rel_err;
    op_worst = std::max(op_worst, err);
    v.Require(err < 1e-6, std::string(c.name) + " rel err " + Fmt("%.2e", err));
  }

  TrainConfig cfg;
  cfg.image_size = 32;
  const PipelineGradReport r = GradcheckPipeline(cfg, 50);
  bool all_groups = true;
  for (int g = 0; g < kNumParamGroups; ++g) all_groups = all_groups && r.per_group[g] > 0;
  v.Require(r.entries.size() >= 50, "only " + std::to_string(r.entries.size()) + " parameters");
  v.Require(all_groups, "not every parameter group sampled");
  v.Require(r.max_rel_err < 1e-3, "end-to-end rel err " + Fmt("%.2e", r.max_rel_err));
  const double secs = Seconds(start);
  v.Require(secs < 300.0, "runtime " + Fmt("%.1f", secs) + "s");
  if (v.pass) {
    v.detail = std::to_string(cases.size()) + " op checks max " + Fmt("%.1e", op_worst) +
               "; end-to-end " + std::to_string(r.entries.size()) + " params over 4 groups max " +
               Fmt("%.1e", r.max_rel_err) + " on 32x32 (" + Fmt("%.1f", secs) + "s)";
  }
  return v;
}

// 3. Structural invariants.
Verdict StructuralInvariants() {
  Verdict v;
  ModelConfig full;
  v.Require(full.xout_channels() == 4 * full.channels + 4, "xout_channels formula");

  TrainConfig cfg;
  cfg.image_size = 32;
  const ModelParams params = InitModel(cfg.model, 3);
  const ClassLibrary lib = MakeClassLibrary(cfg.num_classes, cfg.image_size);
  const FoldSplit split = MakeFold(0, cfg.num_classes);
  {
    GradTape tape;
    const BoundParams bound(tape, params);
    const EpisodeForward fwd =
        ForwardEpisode(tape, SampleEpisode(lib, split, Phase::kTrain, 1, 4), bound, cfg);
    const Shape xs = fwd.query.x_out.shape();
    v.Require(xs[0] == 4 * cfg.model.channels + 4,
              "x_out has " + std::to_string(xs[0]) + " channels");
    const ActivationSet &act = *fwd.query.activations;
    for (const Tensor &m : act.maps) {
      for (double x : m.data()) v.Require(x >= 0.0 && x <= 1.0, "SAM map value outside [0,1]");
    }
    for (std::size_t i = 0; i < act.m_pse0.size(); ++i) {
      if (act.m_pse0[i] != (act.maps[0][i] + act.maps[1][i] + act.maps[2][i]) / 3.0) {
        v.Require(false, "m_pse0 differs from the map mean");
        break;
      }
    }
  }

  std::mt19937_64 rng(303);
  for (std::size_t s : {3u, 5u, 7u, 9u}) {
    ModelConfig mc;
    mc.channels = 8;
    mc.kernel_size = s;
    ModelParams gen;
    AddKernelGenParams(gen, mc, rng);
    GradTape tape;
    const BoundParams bound(tape, gen);
    const Prototypes protos = PoolPrototypes(
        tape.Constant(oracle::RandomTensor({23, 8}, rng)), s, PoolVariant::kSerial);
    const DynamicKernelSet k = GenerateKernels(protos, bound, s);
    v.Require(k.vertical->shape() == Shape{s, 1, 8} && k.horizontal->shape() == Shape{1, s, 8} &&
                  k.square->shape() == Shape{s, s, 8},
              "kernel shapes for S=" + std::to_string(s));
  }

  for (int t = 0; t < 5; ++t) {
    GradTape tape;
    std::vector<ForegroundVectors> shots;
    std::size_t expected = 0;
    for (int k = 0; k < 5; ++k) {
      Tensor m = oracle::RandomMask(8, 8, rng, 0.3);
      m[static_cast<std::size_t>(k)] = 1.0;
      expected += ForegroundPositions(m).size();
      shots.push_back(ExtractForeground(tape.Constant(oracle::RandomTensor({4, 8, 8}, rng)),
                                        tape.Constant(m)));
    }
    const ForegroundVectors merged = MergeShots(shots);
    v.Require(merged.rows.shape()[0] == expected, "k-shot N_fg is not additive");
  }
  if (v.pass) {
    v.detail = "x_out 4C+4 = " + std::to_string(4 * cfg.model.channels + 4) +
               ", kernel shapes S in {3,5,7,9}, N_fg additive over 5 shots, SAM maps in [0,1] "
               "with m_pse0 = mean";
  }
  return v;
}

struct Protocol {
  TrainConfig base;
  AblationOptions options;
  RunCache *cache = nullptr;
  double slowest_train = 0.0;  // seconds, over models trained in this process
  int trained = 0;
};

// Trains (or loads) every model of a sweep up front so training time can be
// reported per configuration.
void Warm(Protocol &p, const std::vector<AblationSetting> &settings) {
  for (const AblationSetting &s : settings) {
    for (std::uint64_t seed : p.options.seeds) {
      TrainConfig cfg = s.cfg;
      cfg.seed = seed;
      if (p.cache->Has(cfg)) continue;
      std::cerr << "training " << s.label << " seed " << seed << " ..." << std::flush;
      const auto start = Clock::now();
      p.cache->Get(cfg);
      const double secs = Seconds(start);
      std::cerr << ' ' << Fmt("%.0f", secs) << "s\n";
      p.slowest_train = std::max(p.slowest_train, secs);
      ++p.trained;
    }
  }
}

std::string Pct(double v) { return Fmt("%.2f", 100.0 * v); }

// 4. Component ablation direction.
Verdict ComponentAblation(Protocol &p, AblationResult &out) {
  Warm(p, AxisSettings(p.base, AblationAxis::kComponents));
  out = RunAblation(p.base, AblationAxis::kComponents, p.options, *p.cache);
  Verdict v;
  for (const AblationRow &r : out.rows) {
    v.Require(r.seeds == static_cast<int>(p.options.seeds.size()), r.label + " had failed runs");
  }
  const AblationRow &full = out.Row("SAM+FFM+DCM");
  const AblationRow &base = out.Row("baseline");
  std::string pairs;
  for (const char *two : {"SAM+FFM", "SAM+DCM", "FFM+DCM"}) {
    const AblationRow &r = out.Row(two);
    v.Require(full.miou > r.miou, std::string("full <= ") + two);
    v.Require(r.miou > base.miou, std::string(two) + " <= baseline");
    pairs += std::string(", ") + two + " " + Pct(r.miou);
  }
  const double gap = full.miou - base.miou;
  v.Require(gap >= 0.02, "full - baseline = " + Fmt("%.2f", 100.0 * gap) + " < 2");
  v.Require(p.slowest_train < 1800.0, "slowest run " + Fmt("%.0f", p.slowest_train) + "s");
  const std::string summary = "full " + Pct(full.miou) + pairs + ", baseline " +
                              Pct(base.miou) + " (gap " + Fmt("%.2f", 100.0 * gap) + ")";
  v.detail = v.pass ? summary : v.detail + " | " + summary;
  return v;
}

// 5. Kernel variant direction.
Verdict KernelVariants(Protocol &p, AblationResult &out) {
  Warm(p, AxisSettings(p.base, AblationAxis::kKernelVariants));
  out = RunAblation(p.base, AblationAxis::kKernelVariants, p.options, *p.cache);
  Verdict v;
  for (const AblationRow &r : out.rows) {
    v.Require(r.seeds == static_cast<int>(p.options.seeds.size()), r.label + " had failed runs");
  }
  const AblationRow &all = out.Row("v+h+s");
  std::string summary = "v+h+s " + Pct(all.miou);
  for (const char *k : {"s", "v", "v+h"}) {
    const AblationRow &r = out.Row(k);
    v.Require(all.miou >= r.miou - 0.005, std::string("v+h+s below ") + k + " beyond 0.5");
    summary += std::string(", ") + k + " " + Pct(out.Row(k).miou);
  }
  const AblationRow &none = out.Row("none");
  v.Require(all.miou > none.miou, "v+h+s does not beat w/o DCM");
  summary += ", w/o DCM " + Pct(none.miou);
  v.detail = v.pass ? summary : v.detail + " | " + summary;
  return v;
}

// 6. k-shot benefit on the same trained full models.
Verdict KShot(Protocol &p) {
  Warm(p, {{"full", p.base}});
  double one = 0.0, five = 0.0;
  for (std::uint64_t seed : p.options.seeds) {
    TrainConfig cfg = p.base;
    cfg.seed = seed;
    const ModelParams &params = p.cache->Get(cfg);
    one += EvaluateModel(params, cfg, p.options.eval_episodes, 1, EvalSeedFor(seed)).miou;
    five += EvaluateModel(params, cfg, p.options.eval_episodes, 5, EvalSeedFor(seed)).miou;
  }
  const double n = static_cast<double>(p.options.seeds.size());
  one /= n;
  five /= n;
  Verdict v;
  v.Require(five >= one, "5-shot below 1-shot");
  const std::string summary = "1-shot " + Pct(one) + ", 5-shot " + Pct(five);
  v.detail = v.pass ? summary : v.detail + " | " + summary;
  return v;
}

TrainConfig TinyConfig() {
  TrainConfig cfg;
  cfg.image_size = 32;
  cfg.epochs = 2;
  cfg.episodes_per_epoch = 8;
  cfg.batch = 2;
  cfg.val_episodes = 4;
  return cfg;
}

// 7. Lambda endpoint and sweep runner.
Verdict LambdaSweep(const fs::path &out_dir) {
  Verdict v;
  fs::create_directories(out_dir);
  TrainConfig cfg = TinyConfig();
  cfg.lambda = 0.0;
  const ClassLibrary lib = MakeClassLibrary(cfg.num_classes, cfg.image_size);
  const FoldSplit split = MakeFold(0, cfg.num_classes);
  ModelParams params = InitModel(cfg.model, 5);
  std::mt19937_64 rng(6);
  Tensor &head = params.entry(params.Find("decoder.cls.w")).value;
  head = HeUniform(head.shape(), rng);
  for (int i = 0; i < 5; ++i) {
    GradTape tape;
    const BoundParams bound(tape, params);
    const EpisodeForward f =
        ForwardEpisode(tape, SampleEpisode(lib, split, Phase::kTrain, 1, 40 + i), bound, cfg);
    v.Require(!f.loss_s && f.total.value().item() == f.loss_q.value().item(),
              "lambda=0 total differs from the query loss");
  }

  cfg.epochs = 1;
  cfg.val_episodes = 0;
  AblationOptions opts;
  opts.seeds = {1};
  opts.eval_episodes = 10;
  RunCache cache;
  const AblationResult r = RunAblation(cfg, AblationAxis::kLambda, opts, cache);
  WriteAblation(r, out_dir.string());
  std::ifstream csv(out_dir / "ablation_lambda.csv");
  int lines = 0;
  for (std::string line; std::getline(csv, line);) ++lines;
  v.Require(r.rows.size() == 5 && lines == 6, "sweep produced " + std::to_string(r.rows.size()) +
                                                   " rows");
  std::ifstream svg_in(out_dir / "ablation_lambda.svg");
  std::stringstream svg;
  svg << svg_in.rdbuf();
  v.Require(svg.str().find("<svg") != std::string::npos, "chart missing");
  if (v.pass) {
    v.detail = "lambda=0 total == L_q exactly on 5 episodes; sweep wrote 5 rows and " +
               (out_dir / "ablation_lambda.svg").string();
  }
  return v;
}

// 8. Determinism.
Verdict Determinism() {
  Verdict v;
  const TrainConfig cfg = TinyConfig();
  const TrainResult a = Train(cfg), b = Train(cfg);
  std::ostringstream la, lb;
  WriteStepLog(a.steps, la);
  WriteStepLog(b.steps, lb);
  v.Require(la.str() == lb.str(), "loss logs differ");
  v.Require(a.params.BitEqual(b.params), "parameters differ");
  const EvalReport ra = EvaluateModel(a.params, cfg, 20, 1, 9);
  const EvalReport rb = EvaluateModel(b.params, cfg, 20, 1, 9);
  v.Require(ra == rb, "eval reports differ");
  if (v.pass) {
    v.detail = std::to_string(a.steps.size()) + " logged steps and 20-episode reports identical";
  }
  return v;
}

// 9. Metric sanity and file formats.
Verdict MetricSanity(const fs::path &dir) {
  Verdict v;
  const ClassLibrary lib = MakeClassLibrary(12, 64);
  const FoldSplit split = MakeFold(0, 12);
  const EvalReport perfect =
      Evaluate(lib, split, 50, 1, 3, [](const Episode &ep) { return ep.query_mask; });
  v.Require(perfect.miou == 1.0 && perfect.fb_iou == 1.0, "oracle predictor below 1.0");

  std::mt19937_64 rng(909);
  const Tensor t = oracle::RandomTensor({3, 5, 7}, rng, -1e6, 1e6);
  const std::string tpath = (dir / "t.dpcnt").string();
  SaveTensor(tpath, t);
  v.Require(LoadTensor(tpath).BitEqual(t), "DPCN-T round trip");

  const Tensor mask = oracle::RandomMask(64, 48, rng);
  const std::string mpath = (dir / "m.pgm").string();
  WriteMaskPgm(mask, mpath);
  v.Require(ReadMaskPgm(mpath).BitEqual(mask), "PGM round trip");

  TrainConfig cfg;
  const ModelParams params = InitModel(cfg.model, 17);
  const std::string cpath = (dir / "m.ckpt").string();
  SaveCheckpoint(params, cpath);
  ModelParams loaded = InitModel(cfg.model, 18);
  LoadCheckpoint(loaded, cpath);
  v.Require(loaded.BitEqual(params), "checkpoint round trip");
  if (v.pass) v.detail = "oracle mIoU = FB-IoU = 1 on 50 episodes; DPCN-T, PGM, checkpoint bit-exact";
  return v;
}

}  // namespace
}  // namespace dpcn

int main(int argc, char **argv) {
  using namespace dpcn;
  CLI::App app{"DPCN acceptance gate"};
  std::string cache_dir = "acceptance_cache";
  std::string protocol_path;
  std::string out_dir = "acceptance_out";
  int seeds = 5;
  std::vector<int> only;
  app.add_option("--cache", cache_dir, "Directory of cached trained models");
  app.add_option("--protocol", protocol_path, "Config file with the desk ablation protocol");
  app.add_option("--out", out_dir, "Directory for ablation tables and charts");
  app.add_option("--seeds", seeds, "Training seeds per setting")->check(CLI::PositiveNumber);
  app.add_option("--only", only, "Run just these criteria (default: all)");
  CLI11_PARSE(app, argc, argv);

  const fs::path out(out_dir);
  fs::create_directories(out);
  int failed = 0;
  auto report = [&](int id, const char *name, const std::function<Verdict()> &fn) {
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) return;
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception &e) {
      v.pass = false;
      v.detail = std::string("error: ") + e.what();
    }
    failed += v.pass ? 0 : 1;
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name
              << "): " << v.detail << std::endl;
  };

  report(1, "oracle equivalence", OracleEquivalence);
  report(2, "gradient suite", GradientSuite);
  report(3, "structural invariants", StructuralInvariants);

  Protocol p;
  RunCache cache(cache_dir);
  p.cache = &cache;
  if (!protocol_path.empty()) p.base = LoadTrainConfig(protocol_path);
  p.base.val_episodes = 0;
  p.options.seeds.clear();
  for (int s = 1; s <= seeds; ++s) p.options.seeds.push_back(static_cast<std::uint64_t>(s));
  p.options.progress = &std::cerr;
  AblationResult components, variants;
  report(4, "component ablation direction", [&] {
    Verdict v = ComponentAblation(p, components);
    WriteAblation(components, out_dir);
    return v;
  });
  report(5, "kernel variant direction", [&] {
    Verdict v = KernelVariants(p, variants);
    WriteAblation(variants, out_dir);
    return v;
  });
  report(6, "k-shot benefit", [&] { return KShot(p); });
  report(7, "lambda endpoint and sweep", [&] { return LambdaSweep(out / "lambda"); });
  report(8, "determinism", Determinism);
  report(9, "metric sanity and round trips", [&] {
    fs::create_directories(out / "io");
    return MetricSanity(out / "io");
  });
  std::cerr << "models trained this run: " << p.trained << '\n';
  return failed == 0 ? 0 : 1;
}
