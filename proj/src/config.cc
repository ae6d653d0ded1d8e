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

#include "dpcn/config.h"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "dpcn/error.h"

namespace dpcn {

std::string KernelSelection::ToString() const {
  if (none()) return "none";
  std::string out;
  auto add = [&out](bool on, const char *tag) {
    if (!on) return;
    if (!out.empty()) out += '+';
    out += tag;
  };
  add(vertical, "v");
  add(horizontal, "h");
  add(square, "s");
  return out;
}

KernelSelection KernelSelection::Parse(const std::string &text) {
  KernelSelection sel{false, false, false};
  if (text == "none" || text.empty()) return sel;
  for (char c : text) {
    switch (c) {
      case 'v': sel.vertical = true; break;
      case 'h': sel.horizontal = true; break;
      case 's': sel.square = true; break;
      case '+': case ',': case ' ': break;
      default:
        throw Error(ErrorCode::kInvalidArgument, "bad kernel selection '" + text + "'");
    }
  }
  return sel;
}

std::size_t ModelConfig::xout_channels() const {
  const std::size_t query_blocks = dcm_active() ? kernels.count() : 1;
  return query_blocks * channels + channels + (sam ? 3 : 0) + (ffm ? 1 : 0);
}

namespace {

std::string Trim(const std::string &s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool ParseBool(const std::string &key, const std::string &v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw Error(ErrorCode::kInvalidArgument, key + ": expected a boolean, got '" + v + "'");
}

template <typename T>
T ParseNumber(const std::string &key, const std::string &v) {
  std::istringstream is(v);
  T out{};
  is >> out;
  if (!is || !is.eof()) {
    throw Error(ErrorCode::kInvalidArgument, key + ": bad number '" + v + "'");
  }
  return out;
}

}  // namespace

std::map<std::string, std::string> ParseKeyValues(const std::string &text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = Trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kInvalidArgument,
                  "config line " + std::to_string(lineno) + ": missing '='");
    }
    kv[Trim(line.substr(0, eq))] = Trim(line.substr(eq + 1));
  }
  return kv;
}

void ApplyConfig(const std::map<std::string, std::string> &kv, TrainConfig &out) {
  // Work on a copy so a rejected file leaves the caller's config untouched.
  TrainConfig cfg = out;
  for (const auto &[key, v] : kv) {
    if (key == "train.lr0") cfg.lr0 = ParseNumber<double>(key, v);
    else if (key == "train.batch") cfg.batch = ParseNumber<int>(key, v);
    else if (key == "train.epochs") cfg.epochs = ParseNumber<int>(key, v);
    else if (key == "train.episodes_per_epoch") cfg.episodes_per_epoch = ParseNumber<int>(key, v);
    else if (key == "train.poly_power") cfg.poly_power = ParseNumber<double>(key, v);
    else if (key == "train.grad_clip") cfg.grad_clip = ParseNumber<double>(key, v);
    else if (key == "train.shots") cfg.shots = ParseNumber<int>(key, v);
    else if (key == "train.seed") cfg.seed = ParseNumber<std::uint64_t>(key, v);
    else if (key == "train.fold") cfg.fold = ParseNumber<int>(key, v);
    else if (key == "train.warmup_epochs") cfg.warmup_epochs = ParseNumber<int>(key, v);
    else if (key == "train.val_episodes") cfg.val_episodes = ParseNumber<int>(key, v);
    else if (key == "encoder.freeze_after_warmup") {
      // Comma-separated 1-based stage list, e.g. "1,2"; "none" keeps all trainable.
      cfg.freeze_after_warmup = {false, false, false};
      if (v != "none") {
        std::istringstream is(v);
        std::string tok;
        while (std::getline(is, tok, ',')) {
          const int stage = ParseNumber<int>(key, Trim(tok));
          if (stage < 1 || stage > 3) {
            throw Error(ErrorCode::kInvalidArgument, key + ": stage out of range");
          }
          cfg.freeze_after_warmup[stage - 1] = true;
        }
      }
    } else if (key == "loss.lambda") cfg.lambda = ParseNumber<double>(key, v);
    else if (key == "data.classes") cfg.num_classes = ParseNumber<int>(key, v);
    else if (key == "data.image_size") cfg.image_size = ParseNumber<std::size_t>(key, v);
    else if (key == "model.channels") cfg.model.channels = ParseNumber<std::size_t>(key, v);
    else if (key == "model.high_channels") cfg.model.high_channels = ParseNumber<std::size_t>(key, v);
    else if (key == "sam.enabled") cfg.model.sam = ParseBool(key, v);
    else if (key == "ffm.enabled") cfg.model.ffm = ParseBool(key, v);
    else if (key == "dcm.enabled") cfg.model.dcm = ParseBool(key, v);
    else if (key == "dcm.kernel_size") cfg.model.kernel_size = ParseNumber<std::size_t>(key, v);
    else if (key == "dcm.kernels") cfg.model.kernels = KernelSelection::Parse(v);
    else if (key == "dcm.pool_variant") {
      if (v == "serial") cfg.model.pool_variant = PoolVariant::kSerial;
      else if (v == "parallel") cfg.model.pool_variant = PoolVariant::kParallel;
      else throw Error(ErrorCode::kInvalidArgument, key + ": expected serial|parallel");
    } else {
      throw Error(ErrorCode::kInvalidArgument, "unknown config key '" + key + "'");
    }
  }
  if (cfg.lr0 <= 0.0) throw Error(ErrorCode::kInvalidArgument, "train.lr0 must be > 0");
  if (cfg.grad_clip < 0.0) throw Error(ErrorCode::kInvalidArgument, "train.grad_clip must be >= 0");
  if (cfg.lambda < 0.0) throw Error(ErrorCode::kInvalidArgument, "loss.lambda must be >= 0");
  if (cfg.batch < 1 || cfg.epochs < 0 || cfg.shots < 1 || cfg.episodes_per_epoch < 1) {
    throw Error(ErrorCode::kInvalidArgument, "batch, shots and episodes_per_epoch must be >= 1");
  }
  if (cfg.model.kernel_size % 2 == 0 || cfg.model.kernel_size < 1) {
    throw Error(ErrorCode::kNonOddKernel, "dcm.kernel_size must be odd");
  }
  out = cfg;
}

TrainConfig LoadTrainConfig(const std::string &path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  ApplyConfig(ParseKeyValues(ss.str()), base);
  return base;
}

std::string CanonicalConfig(const TrainConfig &cfg) {
  const ModelConfig &m = cfg.model;
  std::ostringstream os;
  os.precision(17);
  os << "train.lr0=" << cfg.lr0 << ";train.batch=" << cfg.batch
     << ";train.epochs=" << cfg.epochs << ";train.episodes_per_epoch=" << cfg.episodes_per_epoch
     << ";train.poly_power=" << cfg.poly_power << ";train.shots=" << cfg.shots
     << ";train.seed=" << cfg.seed << ";train.fold=" << cfg.fold
     << ";train.warmup_epochs=" << cfg.warmup_epochs << ";encoder.freeze="
     << cfg.freeze_after_warmup[0] << cfg.freeze_after_warmup[1] << cfg.freeze_after_warmup[2]
     << ";loss.lambda=" << cfg.lambda << ";data.classes=" << cfg.num_classes
     << ";data.image_size=" << cfg.image_size << ";model.channels=" << m.channels
     << ";model.high_channels=" << m.high_channels << ";sam=" << m.sam << ";ffm=" << m.ffm;
  // Only written when set, so unclipped runs keep their fingerprints.
  if (cfg.grad_clip > 0.0) os << ";train.grad_clip=" << cfg.grad_clip;
  if (m.dcm_active()) {
    os << ";dcm=1;dcm.kernel_size=" << m.kernel_size << ";dcm.kernels=" << m.kernels.ToString()
       << ";dcm.pool=" << (m.pool_variant == PoolVariant::kSerial ? "serial" : "parallel");
  } else {
    os << ";dcm=0";
  }
  return os.str();
}

std::string ConfigFileText(const TrainConfig &cfg) {
  const ModelConfig &m = cfg.model;
  std::string freeze;
  for (int i = 0; i < 3; ++i) {
    if (!cfg.freeze_after_warmup[i]) continue;
    if (!freeze.empty()) freeze += ',';
    freeze += std::to_string(i + 1);
  }
  std::ostringstream os;
  os.precision(17);
  os << "train.lr0 = " << cfg.lr0 << "\ntrain.batch = " << cfg.batch
     << "\ntrain.epochs = " << cfg.epochs
     << "\ntrain.episodes_per_epoch = " << cfg.episodes_per_epoch
     << "\ntrain.poly_power = " << cfg.poly_power << "\ntrain.grad_clip = " << cfg.grad_clip
     << "\ntrain.shots = " << cfg.shots << "\ntrain.seed = " << cfg.seed << "\ntrain.fold = " << cfg.fold
     << "\ntrain.warmup_epochs = " << cfg.warmup_epochs
     << "\ntrain.val_episodes = " << cfg.val_episodes
     << "\nencoder.freeze_after_warmup = " << (freeze.empty() ? "none" : freeze)
     << "\nloss.lambda = " << cfg.lambda << "\ndata.classes = " << cfg.num_classes
     << "\ndata.image_size = " << cfg.image_size << "\nmodel.channels = " << m.channels
     << "\nmodel.high_channels = " << m.high_channels << "\nsam.enabled = " << m.sam
     << "\nffm.enabled = " << m.ffm << "\ndcm.enabled = " << m.dcm
     << "\ndcm.kernel_size = " << m.kernel_size << "\ndcm.kernels = " << m.kernels.ToString()
     << "\ndcm.pool_variant = "
     << (m.pool_variant == PoolVariant::kSerial ? "serial" : "parallel") << '\n';
  return os.str();
}

std::string ConfigFingerprint(const TrainConfig &cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : CanonicalConfig(cfg)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace dpcn
