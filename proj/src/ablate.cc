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

#include "dpcn/ablate.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dpcn/error.h"
#include "dpcn/synth.h"
#include "dpcn/trainer.h"

namespace dpcn {

namespace {

std::string Fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string XmlEscape(const std::string &s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

}  // namespace

AblationAxis ParseAxis(const std::string &name) {
  for (AblationAxis a : {AblationAxis::kComponents, AblationAxis::kKernelSize,
                         AblationAxis::kKernelVariants, AblationAxis::kPoolVariant,
                         AblationAxis::kLambda}) {
    if (name == AxisName(a)) return a;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown ablation axis '" + name + "'");
}

const char *AxisName(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::kComponents: return "components";
    case AblationAxis::kKernelSize: return "kernel_size";
    case AblationAxis::kKernelVariants: return "kernel_variants";
    case AblationAxis::kPoolVariant: return "pool_variant";
    case AblationAxis::kLambda: return "lambda";
  }
  return "?";
}

std::vector<AblationSetting> AxisSettings(const TrainConfig &base, AblationAxis axis) {
  std::vector<AblationSetting> out;
  switch (axis) {
    case AblationAxis::kComponents:
      for (int bits = 0; bits < 8; ++bits) {
        TrainConfig c = base;
        c.model.sam = bits & 1;
        c.model.ffm = bits & 2;
        c.model.dcm = bits & 4;
        std::string label;
        for (auto [on, name] : {std::pair{c.model.sam, "SAM"}, std::pair{c.model.ffm, "FFM"},
                                std::pair{c.model.dcm, "DCM"}}) {
          if (!on) continue;
          if (!label.empty()) label += '+';
          label += name;
        }
        out.push_back({label.empty() ? "baseline" : label, c});
      }
      // Order by module count so baseline leads and the full model closes.
      std::stable_sort(out.begin(), out.end(), [](const auto &a, const auto &b) {
        auto n = [](const ModelConfig &m) { return int(m.sam) + int(m.ffm) + int(m.dcm); };
        return n(a.cfg.model) < n(b.cfg.model);
      });
      break;
    case AblationAxis::kKernelSize:
      for (std::size_t s : {3, 5, 7, 9}) {
        TrainConfig c = base;
        c.model.kernel_size = s;
        out.push_back({std::to_string(s), c});
      }
      break;
    case AblationAxis::kKernelVariants:
      for (const char *k : {"none", "s", "v", "v+h", "v+h+s"}) {
        TrainConfig c = base;
        c.model.kernels = KernelSelection::Parse(k);
        out.push_back({k, c});
      }
      break;
    case AblationAxis::kPoolVariant:
      for (PoolVariant p : {PoolVariant::kSerial, PoolVariant::kParallel}) {
        TrainConfig c = base;
        c.model.pool_variant = p;
        out.push_back({p == PoolVariant::kSerial ? "serial" : "parallel", c});
      }
      break;
    case AblationAxis::kLambda:
      for (const char *l : {"0", "0.1", "0.5", "1", "2"}) {
        TrainConfig c = base;
        c.lambda = std::stod(l);
        out.push_back({l, c});
      }
      break;
  }
  return out;
}

bool RunCache::Has(const TrainConfig &cfg) const {
  const std::string fp = ConfigFingerprint(cfg);
  return models_.count(fp) ||
         (!dir_.empty() && std::filesystem::exists(dir_ + "/" + fp + ".ckpt"));
}

const ModelParams &RunCache::Get(const TrainConfig &cfg, std::ostream *progress) {
  const std::string fp = ConfigFingerprint(cfg);
  if (auto it = models_.find(fp); it != models_.end()) return it->second;
  const std::string path = dir_.empty() ? "" : dir_ + "/" + fp + ".ckpt";
  if (!path.empty() && std::filesystem::exists(path)) {
    ModelParams params = InitModel(cfg.model, MixSeed(cfg.seed, 1));
    LoadCheckpoint(params, path);
    return models_.emplace(fp, std::move(params)).first->second;
  }
  TrainConfig quiet = cfg;
  quiet.val_episodes = 0;
  ModelParams params = Train(quiet).params;
  ++trained_;
  if (!path.empty()) {
    std::filesystem::create_directories(dir_);
    SaveCheckpoint(params, path);
  }
  if (progress) *progress << "trained " << fp << '\n';
  return models_.emplace(fp, std::move(params)).first->second;
}

std::uint64_t EvalSeedFor(std::uint64_t train_seed) { return MixSeed(train_seed, 0xE7A1); }

const AblationRow &AblationResult::Row(const std::string &label, int fold) const {
  for (const AblationRow &r : rows) {
    if (r.label == label && r.fold == fold) return r;
  }
  throw Error(ErrorCode::kInvalidArgument, "no ablation row '" + label + "'");
}

AblationResult RunAblation(const TrainConfig &base, AblationAxis axis,
                           const AblationOptions &options, RunCache &cache) {
  AblationResult result;
  result.axis = axis;
  for (const AblationSetting &setting : AxisSettings(base, axis)) {
    for (int fold : options.folds) {
      AblationRow row;
      row.label = setting.label;
      row.fold = fold;
      std::vector<double> mious;
      for (std::uint64_t seed : options.seeds) {
        TrainConfig cfg = setting.cfg;
        cfg.fold = fold;
        cfg.seed = seed;
        AblationRun run;
        run.label = setting.label;
        run.fold = fold;
        run.seed = seed;
        run.fingerprint = ConfigFingerprint(cfg);
        try {
          const ModelParams &params = cache.Get(cfg);
          run.report = EvaluateModel(params, cfg, options.eval_episodes, options.eval_shots,
                                     EvalSeedFor(seed));
          mious.push_back(run.report->miou);
          row.fb_iou += run.report->fb_iou;
        } catch (const Error &e) {
          run.error = e.what();
        }
        if (options.progress) {
          *options.progress << AxisName(axis) << ' ' << setting.label << " fold " << fold
                            << " seed " << seed << ": "
                            << (run.report ? "miou " + Fixed(100.0 * run.report->miou, 2)
                                           : "failed: " + run.error)
                            << std::endl;
        }
        result.runs.push_back(std::move(run));
      }
      row.seeds = static_cast<int>(mious.size());
      if (row.seeds > 0) {
        for (double m : mious) row.miou += m;
        row.miou /= row.seeds;
        row.fb_iou /= row.seeds;
        for (double m : mious) row.miou_std += (m - row.miou) * (m - row.miou);
        row.miou_std = std::sqrt(row.miou_std / row.seeds);
      }
      result.rows.push_back(row);
    }
  }
  return result;
}

void WriteAblationCsv(const AblationResult &result, std::ostream &out) {
  out << "setting,fold,miou,fbiou,miou_std,seeds\n";
  for (const AblationRow &r : result.rows) {
    out << r.label << ',' << r.fold << ',' << Fixed(100.0 * r.miou, 4) << ','
        << Fixed(100.0 * r.fb_iou, 4) << ',' << Fixed(100.0 * r.miou_std, 4) << ','
        << r.seeds << '\n';
  }
}

void WriteRunsCsv(const AblationResult &result, std::ostream &out) {
  out << "setting,fold,seed,fingerprint,miou,fbiou,status\n";
  for (const AblationRun &r : result.runs) {
    out << r.label << ',' << r.fold << ',' << r.seed << ',' << r.fingerprint << ',';
    if (r.report) {
      out << Fixed(100.0 * r.report->miou, 4) << ',' << Fixed(100.0 * r.report->fb_iou, 4)
          << ",ok\n";
    } else {
      std::string msg = r.error;
      std::replace(msg.begin(), msg.end(), ',', ';');
      out << ",,error: " << msg << '\n';
    }
  }
}

std::string AblationSvg(const AblationResult &result) {
  const bool line =
      result.axis == AblationAxis::kKernelSize || result.axis == AblationAxis::kLambda;
  const double w = 640, h = 360, left = 60, right = 20, top = 40, bottom = 60;
  const double pw = w - left - right, ph = h - top - bottom;
  const std::size_t n = result.rows.size();
  double ymax = 0.0;
  for (const AblationRow &r : result.rows) ymax = std::max(ymax, 100.0 * (r.miou + r.miou_std));
  ymax = std::max(10.0, std::ceil(ymax / 10.0) * 10.0);
  auto y = [&](double v) { return top + ph * (1.0 - v / ymax); };
  auto x = [&](std::size_t i) { return left + pw * (static_cast<double>(i) + 0.5) / n; };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << w / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
    << "mIoU by " << AxisName(result.axis) << "</text>\n";
  for (int t = 0; t <= 5; ++t) {
    const double v = ymax * t / 5.0;
    s << "<line x1=\"" << left << "\" x2=\"" << w - right << "\" y1=\"" << y(v) << "\" y2=\""
      << y(v) << "\" stroke=\"#ddd\"/>\n"
      << "<text x=\"" << left - 6 << "\" y=\"" << y(v) + 4 << "\" text-anchor=\"end\">"
      << Fixed(v, 0) << "</text>\n";
  }
  s << "<text x=\"16\" y=\"" << top + ph / 2 << "\" transform=\"rotate(-90 16 " << top + ph / 2
    << ")\" text-anchor=\"middle\">mIoU (%)</text>\n";
  const double bw = 0.6 * pw / std::max<std::size_t>(n, 1);
  std::string path;
  for (std::size_t i = 0; i < n; ++i) {
    const AblationRow &r = result.rows[i];
    const double m = 100.0 * r.miou, sd = 100.0 * r.miou_std;
    if (line) {
      path += (i == 0 ? "M" : " L") + Fixed(x(i), 1) + "," + Fixed(y(m), 1);
      s << "<circle cx=\"" << x(i) << "\" cy=\"" << y(m) << "\" r=\"4\" fill=\"#3b6ea5\"/>\n";
    } else {
      s << "<rect x=\"" << x(i) - bw / 2 << "\" y=\"" << y(m) << "\" width=\"" << bw
        << "\" height=\"" << y(0) - y(m) << "\" fill=\"#3b6ea5\"/>\n";
    }
    s << "<line x1=\"" << x(i) << "\" x2=\"" << x(i) << "\" y1=\"" << y(m - sd) << "\" y2=\""
      << y(m + sd) << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << x(i) << "\" y=\"" << y(m + sd) - 6 << "\" text-anchor=\"middle\">"
      << Fixed(m, 1) << "</text>\n"
      << "<text x=\"" << x(i) << "\" y=\"" << h - bottom + 18 << "\" text-anchor=\"middle\">"
      << XmlEscape(r.label) << (result.rows.size() > 1 && r.fold != result.rows[0].fold
                                    ? " f" + std::to_string(r.fold)
                                    : "")
      << "</text>\n";
  }
  if (line && !path.empty()) {
    s << "<path d=\"" << path << "\" fill=\"none\" stroke=\"#3b6ea5\" stroke-width=\"2\"/>\n";
  }
  s << "<line x1=\"" << left << "\" x2=\"" << w - right << "\" y1=\"" << y(0) << "\" y2=\""
    << y(0) << "\" stroke=\"black\"/>\n</svg>\n";
  return s.str();
}

void WriteAblation(const AblationResult &result, const std::string &out_dir) {
  std::filesystem::create_directories(out_dir);
  const std::string stem = out_dir + "/ablation_" + AxisName(result.axis);
  std::ofstream csv(stem + ".csv");
  WriteAblationCsv(result, csv);
  std::ofstream runs(stem + "_runs.csv");
  WriteRunsCsv(result, runs);
  std::ofstream(stem + ".svg") << AblationSvg(result);
  if (!csv || !runs) throw Error(ErrorCode::kIoError, "cannot write ablation output to " + out_dir);
}

}  // namespace dpcn
