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

// dpcn: command-line front end for data generation, training, evaluation,
// ablation sweeps, SAM inspection and the end-to-end gradient check.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "dpcn/ablate.h"
#include "dpcn/config.h"
#include "dpcn/encoder.h"
#include "dpcn/error.h"
#include "dpcn/eval.h"
#include "dpcn/sam.h"
#include "dpcn/synth.h"
#include "dpcn/trainer.h"

namespace {

using dpcn::TrainConfig;

TrainConfig BaseConfig(const std::string &path) {
  return path.empty() ? TrainConfig{} : dpcn::LoadTrainConfig(path);
}

// Model parameters from a checkpoint; the config comes from --config or the
// config.cfg that `train` leaves next to the checkpoint.
struct LoadedModel {
  TrainConfig cfg;
  dpcn::ModelParams params;
};

LoadedModel LoadModel(const std::string &ckpt, std::string config) {
  if (config.empty()) {
    const auto sibling = std::filesystem::path(ckpt).parent_path() / "config.cfg";
    if (std::filesystem::exists(sibling)) config = sibling.string();
  }
  LoadedModel m{BaseConfig(config), {}};
  m.params = dpcn::InitModel(m.cfg.model, dpcn::MixSeed(m.cfg.seed, 1));
  if (!ckpt.empty()) dpcn::LoadCheckpoint(m.params, ckpt);
  return m;
}

int GenData(const std::string &out, int classes, std::uint64_t seed, int per_class,
            std::size_t size) {
  std::filesystem::create_directories(out);
  const dpcn::ClassLibrary lib = dpcn::MakeClassLibrary(classes, size, seed);
  std::ofstream manifest(out + "/manifest.txt");
  manifest << "# id class family image mask\n";
  int id = 0;
  for (const dpcn::ShapeClass &c : lib.classes) {
    for (int i = 0; i < per_class; ++i, ++id) {
      const dpcn::Render r =
          dpcn::RenderClass(lib, c.id, dpcn::MixSeed(seed, static_cast<std::uint64_t>(id)));
      char stem[32];
      std::snprintf(stem, sizeof stem, "item%05d", id);
      const std::string image = std::string(stem) + "_image.dpcnt";
      const std::string mask = std::string(stem) + "_mask.pgm";
      dpcn::SaveTensor(out + "/" + image, r.image);
      dpcn::WriteMaskPgm(r.mask, out + "/" + mask);
      manifest << id << ' ' << c.id << ' ' << dpcn::FamilyName(c.family) << ' ' << image << ' '
               << mask << '\n';
    }
  }
  std::cout << "wrote " << id << " items to " << out << '\n';
  return 0;
}

int DumpSam(const LoadedModel &m, const std::string &out, std::uint64_t seed, int shots) {
  std::filesystem::create_directories(out);
  const TrainConfig &cfg = m.cfg;
  const dpcn::Episode ep = dpcn::SampleEpisode(
      dpcn::MakeClassLibrary(cfg.num_classes, cfg.image_size), dpcn::MakeFold(cfg.fold, cfg.num_classes),
      dpcn::Phase::kTest, shots, seed);
  dpcn::GradTape tape;
  const dpcn::BoundParams bound(tape, m.params, [](const auto &) { return false; });
  std::vector<dpcn::Tensor> highs, masks;
  for (const dpcn::SupportPair &s : ep.support) {
    highs.push_back(dpcn::Encode(tape.Constant(s.image), bound).high.value());
    masks.push_back(s.mask);
  }
  const dpcn::Tensor qh = dpcn::Encode(tape.Constant(ep.query_image), bound).high.value();
  const dpcn::ActivationSet set = dpcn::RunSam(highs, masks, qh);
  const char *names[] = {"sam_5x1", "sam_3x3", "sam_1x5"};
  for (int i = 0; i < 3; ++i) dpcn::SaveTensor(out + "/" + names[i] + ".dpcnt", set.maps[i]);
  dpcn::SaveTensor(out + "/m_pse0.dpcnt", set.m_pse0);
  dpcn::SaveTensor(out + "/query_image.dpcnt", ep.query_image);
  dpcn::WriteMaskPgm(ep.query_mask, out + "/query_mask.pgm");
  std::cout << "class " << ep.class_id << ": wrote SAM maps " << dpcn::ShapeString(set.m_pse0.shape())
            << " to " << out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"DPCN few-shot segmentation on a synthetic benchmark"};
  app.require_subcommand(1);

  std::string out, config, ckpt, axis;
  int classes = 12, per_class = 4, fold = 0, epochs = -1, shots = 1, episodes = -1;
  std::uint64_t seed = 1;
  std::size_t size = 64;

  auto *gen = app.add_subcommand("gen-data", "render the synthetic class library to disk");
  gen->add_option("--out", out, "output directory")->required();
  gen->add_option("--classes", classes, "number of classes")->check(CLI::PositiveNumber);
  gen->add_option("--seed", seed, "library and render seed");
  gen->add_option("--per-class", per_class, "renders per class")->check(CLI::PositiveNumber);
  gen->add_option("--size", size, "image side in pixels");

  auto *train = app.add_subcommand("train", "train one model");
  std::optional<int> t_fold, t_shots, t_epochs;
  std::optional<std::uint64_t> t_seed;
  train->add_option("--fold", t_fold, "test fold")->check(CLI::Range(0, 3));
  train->add_option("--shots", t_shots, "support shots per episode");
  train->add_option("--epochs", t_epochs, "training epochs");
  train->add_option("--seed", t_seed, "master seed");
  train->add_option("--config", config, "key = value config file");
  train->add_option("--out", out, "output directory")->required();

  auto *eval = app.add_subcommand("eval", "evaluate a checkpoint on test episodes");
  std::string dump_masks;
  bool json = false;
  episodes = dpcn::kDefaultEvalEpisodes;
  eval->add_option("--ckpt", ckpt, "checkpoint file")->required();
  eval->add_option("--config", config, "config (default: config.cfg beside the checkpoint)");
  eval->add_option("--fold", fold, "test fold")->check(CLI::Range(0, 3));
  eval->add_option("--shots", shots, "support shots")->check(CLI::PositiveNumber);
  eval->add_option("--episodes", episodes, "test episodes")->check(CLI::PositiveNumber);
  eval->add_option("--seed", seed, "episode seed");
  eval->add_option("--dump-masks", dump_masks, "write thresholded predictions as PGM");
  eval->add_flag("--json", json, "print the report as JSON");

  auto *ablate = app.add_subcommand("ablate", "train and evaluate a sweep along one axis");
  int n_seeds = 5, eval_episodes = dpcn::kDefaultEvalEpisodes;
  std::vector<int> folds = {0};
  std::string cache_dir;
  ablate->add_option("--axis", axis, "components|kernel_size|kernel_variants|pool_variant|lambda")
      ->required();
  ablate->add_option("--out", out, "output directory")->required();
  ablate->add_option("--config", config, "base config file");
  ablate->add_option("--seeds", n_seeds, "seeds 1..N per setting")->check(CLI::PositiveNumber);
  ablate->add_option("--folds", folds, "folds to run")->check(CLI::Range(0, 3));
  ablate->add_option("--episodes", eval_episodes, "test episodes per run");
  ablate->add_option("--epochs", epochs, "override training epochs");
  ablate->add_option("--cache", cache_dir, "reuse checkpoints by config fingerprint");

  auto *dump = app.add_subcommand("dump", "write intermediate tensors for inspection");
  bool sam = false;
  dump->add_flag("--sam", sam, "SAM activation maps and m_pse0")->required();
  dump->add_option("--ckpt", ckpt, "checkpoint (default: freshly initialised model)");
  dump->add_option("--config", config, "config file");
  dump->add_option("--out", out, "output directory")->required();
  dump->add_option("--seed", seed, "episode seed");
  dump->add_option("--shots", shots, "support shots")->check(CLI::PositiveNumber);

  auto *grad = app.add_subcommand("gradcheck", "finite-difference check of the total loss");
  int n_params = 60;
  grad->add_option("--params", n_params, "sampled parameters")->check(CLI::PositiveNumber);
  grad->add_option("--config", config, "config file");
  grad->add_option("--seed", seed, "sampling seed");
  grad->add_option("--size", size, "episode image side");
  grad->add_option("--shots", shots, "support shots")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return GenData(out, classes, seed, per_class, size);

    if (*train) {
      TrainConfig cfg = BaseConfig(config);
      if (t_fold) cfg.fold = *t_fold;
      if (t_shots) cfg.shots = *t_shots;
      if (t_epochs) cfg.epochs = *t_epochs;
      if (t_seed) cfg.seed = *t_seed;
      const auto start = std::chrono::steady_clock::now();
      dpcn::Train(cfg, out, &std::cout);
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::cout << "fingerprint " << dpcn::ConfigFingerprint(cfg) << ", " << secs
                << " s, checkpoint " << out << "/model.ckpt\n";
      return 0;
    }

    if (*eval) {
      LoadedModel m = LoadModel(ckpt, config);
      m.cfg.fold = fold;
      const dpcn::EvalReport r =
          dpcn::EvaluateModel(m.params, m.cfg, episodes, shots, seed, dump_masks);
      if (json) {
        std::cout << dpcn::ToJson(r) << '\n';
      } else {
        std::printf("episodes %d  mIoU %.2f  FB-IoU %.2f  fingerprint %s\n", r.episodes,
                    100.0 * r.miou, 100.0 * r.fb_iou, r.fingerprint.c_str());
        for (const auto &[id, v] : r.class_iou) std::printf("  class %2d  IoU %.2f\n", id, 100.0 * v);
      }
      return 0;
    }

    if (*ablate) {
      TrainConfig base = BaseConfig(config);
      if (epochs >= 0) base.epochs = epochs;
      dpcn::AblationOptions opts;
      opts.seeds.clear();
      for (int s = 1; s <= n_seeds; ++s) opts.seeds.push_back(static_cast<std::uint64_t>(s));
      opts.folds = folds;
      opts.eval_episodes = eval_episodes;
      opts.progress = &std::cout;
      dpcn::RunCache cache(cache_dir);
      const dpcn::AblationResult result =
          dpcn::RunAblation(base, dpcn::ParseAxis(axis), opts, cache);
      dpcn::WriteAblation(result, out);
      dpcn::WriteAblationCsv(result, std::cout);
      return 0;
    }

    if (*dump) return DumpSam(LoadModel(ckpt, config), out, seed, shots);

    if (*grad) {
      TrainConfig cfg = BaseConfig(config);
      cfg.image_size = size;
      cfg.shots = shots;
      cfg.seed = seed;
      const dpcn::PipelineGradReport r = dpcn::GradcheckPipeline(cfg, n_params);
      for (const dpcn::GradCheckEntry &e : r.entries) {
        std::printf("%-28s analytic % .6e  numeric % .6e  rel %.2e\n", e.name.c_str(),
                    e.analytic, e.numeric, e.rel_err);
      }
      std::printf("loss %.10f  checked %zu  max rel err %.3e\n", r.loss, r.entries.size(),
                  r.max_rel_err);
      return r.max_rel_err < 1e-3 ? 0 : 1;
    }
  } catch (const dpcn::Error &e) {
    std::cerr << "error [" << dpcn::ErrorCodeName(e.code()) << "]: " << e.what() << '\n';
    return 2;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
