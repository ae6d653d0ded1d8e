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

#include "dpcn/gradcheck.h"

#include <algorithm>
#include <cmath>

#include "dpcn/error.h"

namespace dpcn {

double GradRelErr(double fd, double an) {
  return std::abs(fd - an) / std::max(1.0, std::abs(fd) + std::abs(an));
}

namespace {

double Evaluate(const MultiScalarFn &f, const std::vector<Tensor> &inputs) {
  GradTape tape;
  std::vector<Var> leaves;
  for (const Tensor &t : inputs) leaves.push_back(tape.Constant(t));
  const double v = f(tape, leaves).value().item();
  if (!std::isfinite(v)) throw Error(ErrorCode::kNonFiniteLoss, "loss is not finite");
  return v;
}

}  // namespace

GradCheckResult GradCheck(const MultiScalarFn &f, const std::vector<Tensor> &inputs,
                          double h) {
  std::vector<Tensor> analytic;
  {
    GradTape tape;
    std::vector<Var> leaves;
    for (const Tensor &t : inputs) leaves.push_back(tape.Param(t));
    Var loss = f(tape, leaves);
    if (!std::isfinite(loss.value().item())) {
      throw Error(ErrorCode::kNonFiniteLoss, "loss is not finite");
    }
    tape.Backward(loss);
    for (const Var &leaf : leaves) analytic.push_back(tape.grad(leaf));
  }
  GradCheckResult result;
  std::vector<Tensor> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double x0 = inputs[k][i];
      probe[k][i] = x0 + h;
      const double up = Evaluate(f, probe);
      probe[k][i] = x0 - h;
      const double down = Evaluate(f, probe);
      probe[k][i] = x0;
      const double err = GradRelErr((up - down) / (2.0 * h), analytic[k][i]);
      if (err > result.max_rel_err || result.checked == 0) {
        result.max_rel_err = std::max(result.max_rel_err, err);
        result.worst_input = k;
        result.worst_index = i;
      }
      ++result.checked;
    }
  }
  return result;
}

GradCheckResult GradCheck(const ScalarFn &f, const Tensor &theta, double h) {
  return GradCheck([&f](GradTape &tape, std::span<const Var> v) { return f(tape, v[0]); },
                   std::vector<Tensor>{theta}, h);
}

}  // namespace dpcn
