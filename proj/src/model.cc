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

#include "dpcn/model.h"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "dpcn/dcm.h"
#include "dpcn/decoder.h"
#include "dpcn/encoder.h"
#include "dpcn/error.h"
#include "dpcn/ffm.h"

namespace dpcn {

const char *ParamGroupName(ParamGroup group) {
  switch (group) {
    case ParamGroup::kEncoder: return "encoder";
    case ParamGroup::kFfm: return "ffm";
    case ParamGroup::kKernelGen: return "kernel_gen";
    case ParamGroup::kDecoder: return "decoder";
  }
  return "unknown";
}

std::size_t ModelParams::Add(std::string name, ParamGroup group, Tensor value, int stage) {
  if (Contains(name)) throw Error(ErrorCode::kInvalidArgument, "duplicate param " + name);
  value.set_requires_grad(true);
  entries_.push_back({std::move(name), group, stage, std::move(value)});
  return entries_.size() - 1;
}

bool ModelParams::Contains(const std::string &name) const {
  for (const Entry &e : entries_) {
    if (e.name == name) return true;
  }
  return false;
}

std::size_t ModelParams::Find(const std::string &name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  throw Error(ErrorCode::kInvalidArgument, "no parameter named " + name);
}

std::size_t ModelParams::NumScalars() const {
  std::size_t n = 0;
  for (const Entry &e : entries_) n += e.value.size();
  return n;
}

std::pair<std::size_t, std::size_t> ModelParams::Locate(std::size_t flat) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (flat < entries_[i].value.size()) return {i, flat};
    flat -= entries_[i].value.size();
  }
  throw Error(ErrorCode::kInvalidArgument, "flat index out of range");
}

double &ModelParams::Scalar(std::size_t flat) {
  const auto [e, off] = Locate(flat);
  return entries_[e].value[off];
}

double ModelParams::Scalar(std::size_t flat) const {
  const auto [e, off] = Locate(flat);
  return entries_[e].value[off];
}

bool ModelParams::BitEqual(const ModelParams &other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name ||
        !entries_[i].value.BitEqual(other.entries_[i].value)) {
      return false;
    }
  }
  return true;
}

ModelParams InitModel(const ModelConfig &cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelParams params;
  AddEncoderParams(params, cfg, rng);
  if (cfg.ffm) AddFfmParams(params, cfg, rng);
  if (cfg.dcm_active()) AddKernelGenParams(params, cfg, rng);
  AddDecoderParams(params, cfg, rng);
  return params;
}

Tensor HeUniform(Shape shape, std::mt19937_64 &rng) {
  std::size_t fan_in = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (double &v : t.data()) v = dist(rng);
  return t;
}

BoundParams::BoundParams(GradTape &tape, const ModelParams &params,
                         const TrainablePredicate &trainable)
    : params_(&params) {
  vars_.reserve(params.size());
  for (const auto &e : params.entries()) {
    const bool train = !trainable || trainable(e);
    vars_.push_back(train ? tape.Param(e.value) : tape.Constant(e.value));
  }
}

std::vector<Tensor> BoundParams::Gradients() const {
  std::vector<Tensor> grads;
  grads.reserve(vars_.size());
  for (const Var &v : vars_) grads.push_back(v.tape->grad(v));
  return grads;
}

void SaveCheckpoint(const ModelParams &params, const std::string &path) {
  std::ofstream out(path, std::ios::binary);
  std::ofstream index(path + ".index");
  if (!out || !index) throw Error(ErrorCode::kIoError, "cannot write checkpoint " + path);
  std::size_t offset = 0;
  for (const auto &e : params.entries()) {
    index << e.name << ' ' << offset << '\n';
    WriteTensor(out, e.value, DType::kF64);
    offset += SerializedSize(e.value, DType::kF64);
  }
  if (!out || !index) throw Error(ErrorCode::kIoError, "checkpoint write failed");
}

void LoadCheckpoint(ModelParams &params, const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  std::ifstream index(path + ".index");
  if (!in || !index) throw Error(ErrorCode::kIoError, "cannot open checkpoint " + path);
  // Staged so a failed load leaves the caller's model untouched.
  ModelParams staged = params;
  std::string name;
  std::size_t offset = 0;
  std::size_t loaded = 0;
  while (index >> name >> offset) {
    if (!staged.Contains(name)) {
      throw Error(ErrorCode::kMalformedHeader, "checkpoint entry " + name + " is not in the model");
    }
    const std::size_t i = staged.Find(name);
    in.seekg(static_cast<std::streamoff>(offset));
    Tensor t = ReadTensor(in);
    if (t.shape() != staged.entry(i).value.shape()) {
      throw Error(ErrorCode::kShapeMismatch, "checkpoint " + name + " has shape " +
                                                 ShapeString(t.shape()));
    }
    t.set_requires_grad(true);
    staged.entry(i).value = std::move(t);
    ++loaded;
  }
  if (loaded != staged.size()) {
    throw Error(ErrorCode::kMalformedHeader,
                "checkpoint holds " + std::to_string(loaded) + " of " +
                    std::to_string(staged.size()) + " parameters");
  }
  params = std::move(staged);
}

}  // namespace dpcn
