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

#include "dpcn/trainer.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <set>

#include "dpcn/decoder.h"
#include "dpcn/encoder.h"
#include "dpcn/error.h"
#include "dpcn/eval.h"
#include "dpcn/ffm.h"

namespace dpcn {

namespace {

std::string Num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

bool IsCollapse(const Error &e) {
  return e.code() == ErrorCode::kEmptyMask || e.code() == ErrorCode::kEmptyForeground;
}

}  // namespace

BranchResult RunBranch(const BranchInputs &in, const BoundParams &params, const ModelConfig &cfg,
                       BranchCache *cache) {
  const std::size_t k = in.support_mid.size();
  if (k == 0 || in.support_high.size() != k || in.support_masks.size() != k) {
    throw Error(ErrorCode::kInvalidArgument, "branch needs matching support features and masks");
  }
  GradTape &tape = *in.query_mid.tape;
  const Shape &qs = in.query_mid.shape();
  const std::size_t h = qs[1], w = qs[2];

  BranchCache local;
  BranchCache &bc = cache ? *cache : local;
  const bool replay = bc.filled;

  std::vector<Var> masks;
  for (std::size_t i = 0; i < k; ++i) {
    const Shape &ss = in.support_mid[i].shape();
    const Var m = in.support_masks[i];
    masks.push_back(m.shape() == Shape{ss[1], ss[2]} ? m : ResizeNearest(m, ss[1], ss[2]));
  }

  BranchResult out;
  const Var p = SupportPrototype(in.support_mid, masks);
  const Var x_p = Expand(p, h, w);

  if (cfg.sam) {
    if (!replay) {
      std::vector<Tensor> mvals;
      for (const Var &m : masks) mvals.push_back(m.value());
      bc.sam = RunSam(in.support_high, mvals, in.query_high);
    }
    out.activations = bc.sam;
  }
  const Tensor m_pse0 = cfg.sam ? bc.sam->m_pse0 : Tensor::Full({h, w}, 1.0);

  Var xq = in.query_mid;
  if (cfg.ffm) {
    out.m_pse_r = RefinePseudoMask(xq, tape.Constant(m_pse0), p, params);
    xq = FilterQuery(xq, *out.m_pse_r);
  }

  std::vector<Var> blocks;
  if (cfg.dcm_active()) {
    if (!replay) {
      bc.foreground.clear();
      for (const Var &m : masks) bc.foreground.push_back(ForegroundPositions(m.value()));
    }
    std::vector<ForegroundVectors> shots;
    for (std::size_t i = 0; i < k; ++i) {
      shots.push_back(ExtractForeground(in.support_mid[i], masks[i], bc.foreground[i]));
    }
    const ForegroundVectors merged = MergeShots(shots);
    out.foreground_count = merged.rows.shape()[0];
    const Prototypes protos = PoolPrototypes(merged.rows, cfg.kernel_size, cfg.pool_variant);
    blocks = EnhanceQuery(xq, GenerateKernels(protos, params, cfg.kernel_size));
  } else {
    blocks.push_back(xq);
  }

  out.x_out = AssembleXout(blocks, x_p, out.activations ? &*out.activations : nullptr,
                           out.m_pse_r);
  out.prob_feat = Decode(out.x_out, params);
  out.prob = ResizeBilinear(out.prob_feat, in.out_h, in.out_w);
  bc.filled = true;
  return out;
}

Var LossQuery(Var prob, Var mask) { return BceMean(prob, mask); }

EpisodeForward ForwardEpisode(GradTape &tape, const Episode &ep, const BoundParams &params,
                              const TrainConfig &cfg, EpisodeCache *cache) {
  const std::size_t k = ep.support.size();
  if (k == 0) throw Error(ErrorCode::kInvalidArgument, "episode has no support");
  if (static_cast<int>(k) != cfg.shots) {
    throw Error(ErrorCode::kInvalidArgument, "episode has " + std::to_string(k) +
                                                 " shots, config expects " +
                                                 std::to_string(cfg.shots));
  }
  std::vector<Features> sup;
  std::vector<Var> sup_masks;
  for (const SupportPair &s : ep.support) {
    sup.push_back(Encode(tape.Constant(s.image), params));
    sup_masks.push_back(tape.Constant(s.mask));
  }
  const Features q = Encode(tape.Constant(ep.query_image), params);

  BranchInputs qin;
  for (std::size_t i = 0; i < k; ++i) {
    qin.support_mid.push_back(sup[i].mid);
    qin.support_high.push_back(sup[i].high.value());
  }
  qin.support_masks = sup_masks;
  qin.query_mid = q.mid;
  qin.query_high = q.high.value();
  qin.out_h = ep.query_mask.dim(0);
  qin.out_w = ep.query_mask.dim(1);

  EpisodeForward fwd;
  fwd.query = RunBranch(qin, params, cfg.model, cache ? &cache->query : nullptr);
  fwd.loss_q = LossQuery(fwd.query.prob, tape.Constant(ep.query_mask));
  fwd.total = fwd.loss_q;
  if (cfg.lambda <= 0.0) return fwd;

  if (cache) cache->support.resize(k);
  std::vector<Var> losses;
  for (std::size_t i = 0; i < k; ++i) {
    BranchCache local;
    BranchCache &sc = cache ? cache->support[i] : local;
    if (sc.filled && sc.collapsed) {
      ++fwd.collapsed_swaps;
      continue;
    }
    BranchInputs sin;
    sin.support_mid = {q.mid};
    sin.support_high = {q.high.value()};
    sin.support_masks = {fwd.query.prob};
    sin.query_mid = sup[i].mid;
    sin.query_high = sup[i].high.value();
    sin.out_h = ep.support[i].mask.dim(0);
    sin.out_w = ep.support[i].mask.dim(1);
    try {
      const BranchResult r = RunBranch(sin, params, cfg.model, &sc);
      losses.push_back(BceMean(r.prob, sup_masks[i]));
    } catch (const Error &e) {
      if (!IsCollapse(e)) throw;
      sc = BranchCache{};
      sc.filled = true;
      sc.collapsed = true;
      ++fwd.collapsed_swaps;
    }
  }
  if (losses.empty()) return fwd;
  Var sum = losses[0];
  for (std::size_t i = 1; i < losses.size(); ++i) sum = Add(sum, losses[i]);
  fwd.loss_s = losses.size() == 1 ? sum : Scale(sum, 1.0 / static_cast<double>(losses.size()));
  fwd.total = Add(fwd.loss_q, Scale(*fwd.loss_s, cfg.lambda));
  return fwd;
}

Tensor PredictQuery(const Episode &ep, const ModelParams &params, const ModelConfig &cfg) {
  GradTape tape;
  const BoundParams bound(tape, params, [](const ModelParams::Entry &) { return false; });
  BranchInputs in;
  for (const SupportPair &s : ep.support) {
    const Features f = Encode(tape.Constant(s.image), bound);
    in.support_mid.push_back(f.mid);
    in.support_high.push_back(f.high.value());
    in.support_masks.push_back(tape.Constant(s.mask));
  }
  const Features q = Encode(tape.Constant(ep.query_image), bound);
  in.query_mid = q.mid;
  in.query_high = q.high.value();
  in.out_h = ep.query_mask.dim(0);
  in.out_w = ep.query_mask.dim(1);
  return RunBranch(in, bound, cfg).prob.value();
}

double PolyLr(double lr0, std::size_t iter, std::size_t max_iter, double power) {
  if (max_iter == 0 || iter >= max_iter) return 0.0;
  return lr0 * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(max_iter), power);
}

bool IsTrainable(const ModelParams::Entry &e, const TrainConfig &cfg, int epoch) {
  if (e.group != ParamGroup::kEncoder || e.stage < 1 || e.stage > 3) return true;
  return !(epoch >= cfg.warmup_epochs && cfg.freeze_after_warmup[e.stage - 1]);
}

std::size_t StepsPerEpoch(const TrainConfig &cfg) {
  return static_cast<std::size_t>((cfg.episodes_per_epoch + cfg.batch - 1) / cfg.batch);
}

void WriteStepLog(const std::vector<StepLog> &steps, std::ostream &out) {
  out << "epoch,step,lr,loss_q,loss_s,loss_total\n";
  for (const StepLog &s : steps) {
    out << s.epoch << ',' << s.step << ',' << Num(s.lr) << ',' << Num(s.loss_q) << ','
        << Num(s.loss_s) << ',' << Num(s.loss_total) << '\n';
  }
}

TrainResult Train(const TrainConfig &cfg, const std::string &out_dir, std::ostream *progress) {
  const ClassLibrary lib = MakeClassLibrary(cfg.num_classes, cfg.image_size);
  const FoldSplit split = MakeFold(cfg.fold, cfg.num_classes);
  TrainResult result{InitModel(cfg.model, MixSeed(cfg.seed, 1)), {}, {}};
  ModelParams &params = result.params;

  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  const std::size_t steps_per_epoch = StepsPerEpoch(cfg);
  const std::size_t max_iter = steps_per_epoch * static_cast<std::size_t>(cfg.epochs);
  const std::uint64_t episode_stream = MixSeed(cfg.seed, 2);
  std::size_t iter = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto trainable = [&cfg, epoch](const ModelParams::Entry &e) {
      return IsTrainable(e, cfg, epoch);
    };
    double epoch_loss = 0.0;
    int collapsed = 0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++iter) {
      StepLog log;
      log.epoch = epoch;
      log.step = iter;
      log.lr = PolyLr(cfg.lr0, iter, max_iter, cfg.poly_power);
      std::vector<Tensor> grad_sum;
      for (const auto &e : params.entries()) grad_sum.push_back(Tensor::Zeros(e.value.shape()));
      for (int b = 0; b < cfg.batch; ++b) {
        const Episode ep = SampleEpisode(lib, split, Phase::kTrain, cfg.shots,
                                         MixSeed(episode_stream, iter * cfg.batch + b));
        GradTape tape;
        const BoundParams bound(tape, params, trainable);
        const EpisodeForward fwd = ForwardEpisode(tape, ep, bound, cfg);
        const double total = fwd.total.value().item();
        if (!std::isfinite(total)) {
          if (!out_dir.empty()) SaveCheckpoint(params, out_dir + "/last_good.ckpt");
          throw Error(ErrorCode::kNonFiniteLoss,
                      "non-finite loss at step " + std::to_string(iter));
        }
        collapsed += fwd.collapsed_swaps;
        log.loss_q += fwd.loss_q.value().item();
        log.loss_s += fwd.loss_s ? fwd.loss_s->value().item() : 0.0;
        log.loss_total += total;
        tape.Backward(fwd.total);
        const std::vector<Tensor> grads = bound.Gradients();
        for (std::size_t i = 0; i < grads.size(); ++i) {
          for (std::size_t j = 0; j < grads[i].size(); ++j) grad_sum[i][j] += grads[i][j];
        }
      }
      double inv = 1.0 / static_cast<double>(cfg.batch);
      log.loss_q *= inv;
      log.loss_s *= inv;
      log.loss_total *= inv;
      if (cfg.grad_clip > 0.0) {
        double sq = 0.0;
        for (std::size_t i = 0; i < params.size(); ++i) {
          if (!trainable(params.entry(i))) continue;
          for (double g : grad_sum[i].data()) sq += g * g;
        }
        const double norm = std::sqrt(sq) * inv;
        if (norm > cfg.grad_clip) inv *= cfg.grad_clip / norm;
      }
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto &e = params.entry(i);
        if (!trainable(e)) continue;
        for (std::size_t j = 0; j < e.value.size(); ++j) {
          e.value[j] -= log.lr * grad_sum[i][j] * inv;
        }
      }
      epoch_loss += log.loss_total;
      result.steps.push_back(log);
    }
    if (collapsed > 0) {
      std::clog << "warning: epoch " << epoch << ": " << collapsed
                << " support-branch swaps skipped (empty predicted foreground)\n";
    }
    EpochLog elog;
    elog.epoch = epoch;
    elog.train_loss = epoch_loss / static_cast<double>(steps_per_epoch);
    if (cfg.val_episodes > 0) {
      elog.val_miou = EvaluateModel(params, cfg, cfg.val_episodes, cfg.shots,
                                    MixSeed(cfg.seed, 3)).miou;
    }
    result.epochs.push_back(elog);
    if (progress) {
      *progress << "epoch " << epoch << " loss " << elog.train_loss;
      if (elog.val_miou) *progress << " val_miou " << *elog.val_miou;
      *progress << '\n';
    }
  }

  if (!out_dir.empty()) {
    std::ofstream steps(out_dir + "/train_log.csv");
    WriteStepLog(result.steps, steps);
    std::ofstream epochs(out_dir + "/epoch_log.csv");
    epochs << "epoch,train_loss,val_miou\n";
    for (const EpochLog &e : result.epochs) {
      epochs << e.epoch << ',' << Num(e.train_loss) << ','
             << (e.val_miou ? Num(*e.val_miou) : std::string()) << '\n';
    }
    SaveCheckpoint(params, out_dir + "/model.ckpt");
    std::ofstream(out_dir + "/config.cfg") << ConfigFileText(cfg);
  }
  return result;
}

PipelineGradReport GradcheckPipeline(const TrainConfig &cfg, int n_params, double h) {
  const ClassLibrary lib = MakeClassLibrary(cfg.num_classes, cfg.image_size);
  const FoldSplit split = MakeFold(cfg.fold, cfg.num_classes);
  const Episode ep = SampleEpisode(lib, split, Phase::kTrain, cfg.shots, MixSeed(cfg.seed, 5));
  ModelParams params = InitModel(cfg.model, MixSeed(cfg.seed, 1));
  // The freshly initialised head is zero, which would zero every upstream
  // gradient and make the check vacuous.
  std::mt19937_64 rng(MixSeed(cfg.seed, 6));
  Tensor &head = params.entry(params.Find("decoder.cls.w")).value;
  head = HeUniform(head.shape(), rng);
  return GradcheckPipeline(cfg, params, ep, n_params, h);
}

PipelineGradReport GradcheckPipeline(const TrainConfig &cfg, const ModelParams &params,
                                     const Episode &ep, int n_params, double h) {
  PipelineGradReport report;
  EpisodeCache cache;
  std::vector<Tensor> grads;
  {
    GradTape tape;
    const BoundParams bound(tape, params);
    const EpisodeForward fwd = ForwardEpisode(tape, ep, bound, cfg, &cache);
    report.loss = fwd.total.value().item();
    if (!std::isfinite(report.loss)) throw Error(ErrorCode::kNonFiniteLoss, "loss not finite");
    tape.Backward(fwd.total);
    grads = bound.Gradients();
  }

  // Flat index ranges per group, then one pick per group before the rest.
  std::mt19937_64 rng(MixSeed(cfg.seed, 7));
  std::array<std::vector<std::size_t>, kNumParamGroups> by_group;
  std::size_t flat = 0;
  for (const auto &e : params.entries()) {
    for (std::size_t j = 0; j < e.value.size(); ++j) {
      by_group[static_cast<int>(e.group)].push_back(flat + j);
    }
    flat += e.value.size();
  }
  std::set<std::size_t> chosen;
  for (const auto &g : by_group) {
    if (g.empty() || static_cast<int>(chosen.size()) >= n_params) continue;
    chosen.insert(g[std::uniform_int_distribution<std::size_t>(0, g.size() - 1)(rng)]);
  }
  const std::size_t total = params.NumScalars();
  while (static_cast<int>(chosen.size()) < n_params && chosen.size() < total) {
    chosen.insert(std::uniform_int_distribution<std::size_t>(0, total - 1)(rng));
  }

  ModelParams probe = params;
  auto eval = [&]() {
    GradTape tape;
    const BoundParams bound(tape, probe, [](const ModelParams::Entry &) { return false; });
    const double v = ForwardEpisode(tape, ep, bound, cfg, &cache).total.value().item();
    if (!std::isfinite(v)) throw Error(ErrorCode::kNonFiniteLoss, "loss not finite");
    return v;
  };
  for (std::size_t idx : chosen) {
    const auto [entry, off] = params.Locate(idx);
    const double x0 = probe.Scalar(idx);
    probe.Scalar(idx) = x0 + h;
    const double up = eval();
    probe.Scalar(idx) = x0 - h;
    const double down = eval();
    probe.Scalar(idx) = x0;
    GradCheckEntry g;
    g.flat = idx;
    g.name = params.entry(entry).name;
    g.group = params.entry(entry).group;
    g.analytic = grads[entry][off];
    g.numeric = (up - down) / (2.0 * h);
    g.rel_err = std::abs(g.numeric - g.analytic) /
                std::max(1.0, std::abs(g.numeric) + std::abs(g.analytic));
    report.max_rel_err = std::max(report.max_rel_err, g.rel_err);
    ++report.per_group[static_cast<int>(g.group)];
    report.entries.push_back(std::move(g));
  }
  return report;
}

}  // namespace dpcn
