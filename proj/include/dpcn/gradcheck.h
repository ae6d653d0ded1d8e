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

#ifndef DPCN_GRADCHECK_H_
#define DPCN_GRADCHECK_H_

#include <functional>
#include <span>
#include <vector>

#include "dpcn/tape.h"

namespace dpcn {

// |fd - an| / max(1, |fd| + |an|)
double GradRelErr(double fd, double an);

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

// Builds a scalar loss from the leaves it is handed.
using MultiScalarFn = std::function<Var(GradTape &, std::span<const Var>)>;
using ScalarFn = std::function<Var(GradTape &, Var)>;

// Central-difference check of every element of every input against the tape
// gradient. Throws kNonFiniteLoss if any evaluation is not finite.
GradCheckResult GradCheck(const MultiScalarFn &f, const std::vector<Tensor> &inputs,
                          double h = 1e-5);
GradCheckResult GradCheck(const ScalarFn &f, const Tensor &theta, double h = 1e-5);

}  // namespace dpcn

#endif  // DPCN_GRADCHECK_H_
