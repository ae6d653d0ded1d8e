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

#ifndef DPCN_MODEL_H_
#define DPCN_MODEL_H_

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dpcn/config.h"
#include "dpcn/tape.h"
#include "dpcn/tensor.h"

namespace dpcn {

enum class ParamGroup { kEncoder = 0, kFfm = 1, kKernelGen = 2, kDecoder = 3 };
inline constexpr int kNumParamGroups = 4;
const char *ParamGroupName(ParamGroup group);

// All learnable tensors of the network, in a fixed registration order. The
// concatenation of entries in that order defines the flat scalar index used
// by gradient checking and SGD.
class ModelParams {
 public:
  struct Entry {
    std::string name;
    ParamGroup group;
    int stage = 0;  // encoder stage (1..3); 0 elsewhere
    Tensor value;
  };

  std::size_t Add(std::string name, ParamGroup group, Tensor value, int stage = 0);

  std::size_t size() const { return entries_.size(); }
  const Entry &entry(std::size_t i) const { return entries_.at(i); }
  Entry &entry(std::size_t i) { return entries_.at(i); }
  const std::vector<Entry> &entries() const { return entries_; }

  bool Contains(const std::string &name) const;
  std::size_t Find(const std::string &name) const;
  const Tensor &Get(const std::string &name) const { return entries_[Find(name)].value; }

  std::size_t NumScalars() const;
  // Maps a flat scalar index to (entry, offset).
  std::pair<std::size_t, std::size_t> Locate(std::size_t flat) const;
  double &Scalar(std::size_t flat);
  double Scalar(std::size_t flat) const;

  bool BitEqual(const ModelParams &other) const;

 private:
  std::vector<Entry> entries_;
};

// Builds a freshly initialised network for the given configuration: He-uniform
// weights, zero biases.
ModelParams InitModel(const ModelConfig &cfg, std::uint64_t seed);

// U(-sqrt(6 / fan_in), sqrt(6 / fan_in)); fan_in is the product of all but
// the leading dimension.
Tensor HeUniform(Shape shape, std::mt19937_64 &rng);

// Per-forward binding of every parameter to a tape leaf.
class BoundParams {
 public:
  using TrainablePredicate = std::function<bool(const ModelParams::Entry &)>;

  BoundParams(GradTape &tape, const ModelParams &params,
              const TrainablePredicate &trainable = nullptr);

  Var Get(const std::string &name) const { return vars_[params_->Find(name)]; }
  bool Contains(const std::string &name) const { return params_->Contains(name); }
  const std::vector<Var> &vars() const { return vars_; }
  const ModelParams &params() const { return *params_; }

  // Gradients of the bound leaves, one tensor per entry.
  std::vector<Tensor> Gradients() const;

 private:
  const ModelParams *params_;
  std::vector<Var> vars_;
};

// Checkpoint: the entries as concatenated DPCN-T tensors in `path`, and a
// text index `path + ".index"` with one "name byte_offset" line per entry.
void SaveCheckpoint(const ModelParams &params, const std::string &path);
// Loads into a model built for the same configuration; names and shapes must
// match.
void LoadCheckpoint(ModelParams &params, const std::string &path);

}  // namespace dpcn

#endif  // DPCN_MODEL_H_
