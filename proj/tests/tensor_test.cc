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

#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "dpcn/error.h"
#include "dpcn/gradcheck.h"
#include "dpcn/tape.h"
#include "dpcn/tensor.h"
#include "oracles.h"

namespace dpcn {
namespace {

// Contracts every element of y against fixed random weights so the check
// sees a generic upstream gradient.
Var Project(Var y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return Sum(Mul(y, y.tape->Constant(oracle::RandomTensor(y.shape(), rng))));
}

double WorstGrad(const MultiScalarFn &f, const std::vector<Tensor> &inputs) {
  return GradCheck(f, inputs).max_rel_err;
}

void CheckCodeThrown(ErrorCode code, const std::function<void()> &fn) {
  try {
    fn();
    FAIL("expected an error");
  } catch (const Error &e) {
    CHECK(e.code() == code);
  }
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("construction validates shape and finiteness") {
  CHECK(Tensor({2, 3}).size() == 6);
  CheckCodeThrown(ErrorCode::kShapeMismatch, [] { Tensor({2, 2}, {1.0, 2.0}); });
  CheckCodeThrown(ErrorCode::kNonFiniteValue, [] { Tensor({1}, {NAN}); });
  CheckCodeThrown(ErrorCode::kNonFiniteValue, [] { Tensor({2}, {1.0, INFINITY}); });
  CHECK(Tensor::Scalar(3.5).item() == 3.5);
  CHECK(Tensor::Of({1, 2, 3}).shape() == Shape{3});
}

TEST_CASE("DPCN-T header layout and round trip") {
  std::mt19937_64 rng(3);
  const Tensor t = oracle::RandomTensor({2, 3, 4}, rng);
  std::stringstream ss;
  WriteTensor(ss, t);
  const std::string bytes = ss.str();
  REQUIRE(bytes.size() == SerializedSize(t));
  CHECK(bytes.substr(0, 4) == "DPCN");
  CHECK(static_cast<unsigned char>(bytes[4]) == 1);  // u16 version, low byte first
  CHECK(static_cast<unsigned char>(bytes[5]) == 0);
  CHECK(static_cast<unsigned char>(bytes[6]) == 1);  // f64
  CHECK(static_cast<unsigned char>(bytes[7]) == 3);  // rank
  CHECK(static_cast<unsigned char>(bytes[8]) == 2);  // dims as u32 LE
  CHECK(static_cast<unsigned char>(bytes[12]) == 3);
  CHECK(static_cast<unsigned char>(bytes[16]) == 4);
  CHECK(bytes.size() == 8 + 3 * 4 + 24 * 8);
  CHECK(ReadTensor(ss).BitEqual(t));
}

TEST_CASE("DPCN-T f32 payload and malformed headers") {
  const Tensor t = Tensor::Of({0.5, -2.0, 1024.0});
  std::stringstream ss;
  WriteTensor(ss, t, DType::kF32);
  CHECK(ss.str().size() == 8 + 4 + 3 * 4);
  CHECK(ReadTensor(ss).BitEqual(t));  // exactly representable in f32
  std::stringstream bad("DPCX\x01\x00\x01\x01");
  CheckCodeThrown(ErrorCode::kMalformedHeader, [&] { ReadTensor(bad); });
  std::stringstream truncated(std::string("DPCN\x01\x00\x01\x01\x02\x00\x00\x00", 12));
  CheckCodeThrown(ErrorCode::kMalformedHeader, [&] { ReadTensor(truncated); });
  CheckCodeThrown(ErrorCode::kIoError, [] { LoadTensor("/nonexistent/x.dpcnt"); });
}

}  // TEST_SUITE("tensor")

TEST_SUITE("ops") {

TEST_CASE("elementwise examples and broadcasting") {
  GradTape tape;
  const Var a = tape.Constant(Tensor::Of({1, 2, 3}));
  CHECK(Mul(a, tape.Constant(Tensor::Zeros({3}))).value().BitEqual(Tensor::Zeros({3})));
  CHECK(Add(a, tape.Constant(Tensor::Zeros({3}))).value().BitEqual(a.value()));

  std::mt19937_64 rng(5);
  const Tensor x = oracle::RandomTensor({2, 3}, rng), y = oracle::RandomTensor({2, 3}, rng);
  const Tensor z = Mul(tape.Constant(x), tape.Constant(y)).value();
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 3; ++j) CHECK(z.at(i, j) == x.at(i, j) * y.at(i, j));
  }

  const Tensor f = oracle::RandomTensor({2, 3, 4}, rng);
  const Tensor ch = oracle::RandomTensor({2}, rng);
  const Tensor sp = oracle::RandomTensor({3, 4}, rng);
  const Tensor by_c = Add(tape.Constant(f), tape.Constant(ch)).value();
  const Tensor by_s = Mul(tape.Constant(f), tape.Constant(sp)).value();
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 4; ++j) {
        CHECK(by_c.at(c, i, j) == f.at(c, i, j) + ch[c]);
        CHECK(by_s.at(c, i, j) == f.at(c, i, j) * sp.at(i, j));
      }
    }
  }
  CheckCodeThrown(ErrorCode::kShapeMismatch,
                  [&] { Add(tape.Constant(f), tape.Constant(Tensor::Zeros({4}))); });
}

TEST_CASE("matmul examples and triple-loop oracle") {
  GradTape tape;
  const Tensor eye({2, 2}, {1, 0, 0, 1});
  CHECK(MatMul(tape.Constant(eye), tape.Constant(eye)).value().BitEqual(eye));
  const Tensor r = MatMul(tape.Constant(Tensor({2, 2}, {1, 2, 3, 4})),
                          tape.Constant(Tensor({2, 1}, {1, 1})))
                       .value();
  CHECK(r.BitEqual(Tensor({2, 1}, {3, 7})));
  std::mt19937_64 rng(9);
  const Tensor a = oracle::RandomTensor({4, 5}, rng), b = oracle::RandomTensor({5, 3}, rng);
  const Tensor c = MatMul(tape.Constant(a), tape.Constant(b)).value();
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 5; ++k) acc += a.at(i, k) * b.at(k, j);
      CHECK(std::abs(c.at(i, j) - acc) < 1e-12);
    }
  }
}

TEST_CASE("conv2d examples") {
  GradTape tape;
  std::mt19937_64 rng(11);
  const Tensor x = oracle::RandomTensor({1, 5, 5}, rng);
  Tensor delta({1, 1, 3, 3});
  delta[4] = 1.0;
  CHECK(Conv2d(tape.Constant(x), tape.Constant(delta), std::nullopt).value().BitEqual(x));

  const Tensor ones = Tensor::Full({1, 5, 5}, 1.0);
  const Tensor out = Conv2d(tape.Constant(ones), tape.Constant(Tensor::Full({1, 1, 3, 3}, 1.0)),
                            std::nullopt)
                         .value();
  CHECK(out.at(0, 2, 2) == 9.0);
  CHECK(out.at(0, 0, 0) == 4.0);
  CHECK(out.at(0, 0, 2) == 6.0);

  const Tensor xr = oracle::RandomTensor({2, 6, 6}, rng);
  const Tensor w = oracle::RandomTensor({3, 2, 3, 3}, rng);
  const Tensor b = oracle::RandomTensor({3}, rng);
  const Tensor got = Conv2d(tape.Constant(xr), tape.Constant(w), tape.Constant(b)).value();
  CHECK(MaxAbsDiff(got, oracle::Conv2d(xr, w, &b)) < 1e-10);

  CheckCodeThrown(ErrorCode::kNonOddKernel, [&] {
    Conv2d(tape.Constant(xr), tape.Constant(Tensor::Zeros({1, 2, 2, 3})), std::nullopt);
  });
  CheckCodeThrown(ErrorCode::kShapeMismatch, [&] {
    Conv2d(tape.Constant(xr), tape.Constant(Tensor::Zeros({1, 3, 3, 3})), std::nullopt);
  });
}

TEST_CASE("conv2d stride and dilation match the direct oracle") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t h = 3 + rng() % 8, w = 3 + rng() % 8;
    const std::size_t s = 1 + rng() % 2, d = 1 + rng() % 3;
    const std::size_t k = 1 + 2 * (rng() % 2);
    GradTape tape;
    const Tensor x = oracle::RandomTensor({2, h, w}, rng);
    const Tensor wt = oracle::RandomTensor({3, 2, k, k}, rng);
    const Tensor got =
        Conv2d(tape.Constant(x), tape.Constant(wt), std::nullopt, {s, d}).value();
    CHECK(MaxAbsDiff(got, oracle::Conv2d(x, wt, nullptr, s, d)) < 1e-10);
  }
}

TEST_CASE("depthwise conv examples") {
  GradTape tape;
  std::mt19937_64 rng(13);
  const Tensor x = oracle::RandomTensor({4, 8, 8}, rng);
  Tensor delta({3, 3, 4});
  for (std::size_t c = 0; c < 4; ++c) delta.at(1, 1, c) = 1.0;
  CHECK(DepthwiseConv2d(tape.Constant(x), tape.Constant(delta)).value().BitEqual(x));
  CHECK(DepthwiseConv2d(tape.Constant(x), tape.Constant(Tensor({3, 3, 4})))
            .value()
            .BitEqual(Tensor(x.shape())));
  const Tensor ker = oracle::RandomTensor({5, 1, 4}, rng);
  CHECK(MaxAbsDiff(DepthwiseConv2d(tape.Constant(x), tape.Constant(ker)).value(),
                   oracle::Depthwise(x, ker)) < 1e-10);
  CheckCodeThrown(ErrorCode::kChannelMismatch, [&] {
    DepthwiseConv2d(tape.Constant(x), tape.Constant(Tensor({3, 3, 5})));
  });
  CheckCodeThrown(ErrorCode::kNonOddKernel, [&] {
    DepthwiseConv2d(tape.Constant(x), tape.Constant(Tensor({2, 1, 4})));
  });
}

TEST_CASE("masked average pooling") {
  GradTape tape;
  std::mt19937_64 rng(17);
  Tensor x({2, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) {
    x[i] = 3.0;
    x[16 + i] = -1.5;
  }
  const Tensor m = oracle::RandomMask(4, 4, rng, 0.5);
  const Tensor p = MaskedAvgPool(tape.Constant(x), tape.Constant(m)).value();
  CHECK(p[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(-1.5).epsilon(1e-12));

  const Tensor xr = oracle::RandomTensor({3, 4, 4}, rng);
  const Tensor all = MaskedAvgPool(tape.Constant(xr), tape.Constant(Tensor::Full({4, 4}, 1.0)))
                         .value();
  const Tensor mean = Mean(Reshape(Slice(tape.Constant(xr), 1, 2), {16})).value();
  CHECK(std::abs(all[1] - mean.item()) < 1e-12);

  Tensor five({4, 4});
  for (std::size_t i : {0, 3, 6, 9, 15}) five[i] = 1.0;
  CHECK(MaxAbsDiff(MaskedAvgPool(tape.Constant(xr), tape.Constant(five)).value(),
                   oracle::MaskedAvgPool(xr, five)) < 1e-12);
  CheckCodeThrown(ErrorCode::kEmptyMask, [&] {
    MaskedAvgPool(tape.Constant(xr), tape.Constant(Tensor({4, 4})));
  });
}

TEST_CASE("adaptive pool 1d") {
  GradTape tape;
  std::mt19937_64 rng(19);
  const Tensor seq = oracle::RandomTensor({6, 3}, rng);
  CHECK(AdaptivePool1d(tape.Constant(seq), 6).value().BitEqual(seq));
  const Tensor r = AdaptivePool1d(tape.Constant(Tensor({4, 1}, {1, 2, 3, 4})), 2).value();
  CHECK(r.BitEqual(Tensor({2, 1}, {1.5, 3.5})));
  const Tensor three = oracle::RandomTensor({3, 2}, rng);
  const Tensor up = AdaptivePool1d(tape.Constant(three), 9).value();
  for (std::size_t i = 0; i < 9; ++i) {
    for (std::size_t c = 0; c < 2; ++c) CHECK(up.at(i, c) == three.at(i / 3, c));
  }
  // Pooling an already pooled sequence to the same length changes nothing.
  const Tensor long_seq = oracle::RandomTensor({23, 2}, rng);
  const Tensor once = AdaptivePool1d(tape.Constant(long_seq), 5).value();
  CHECK(AdaptivePool1d(tape.Constant(once), 5).value().BitEqual(once));
}

TEST_CASE("cosine similarity and min-max normalization") {
  const std::vector<double> a = {0.3, -1.2, 2.0};
  CHECK(CosineSim(a, a) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(CosineSim(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 0.0);
  CHECK(CosineSim(std::vector<double>{0, 0, 0}, a) == 0.0);
  const Tensor n = MinMaxNorm(Tensor::Of({0, 5, 10}));
  CHECK(n[0] == 0.0);
  CHECK(n[1] == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(n[2] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(MinMaxNorm(Tensor::Full({3, 3}, 2.5)).BitEqual(Tensor({3, 3})));
}

TEST_CASE("nearest and bilinear resize") {
  const Tensor m({2, 2}, {1, 0, 0, 1});
  const Tensor up = ResizeNearest(m, 4, 4);
  for (std::size_t y = 0; y < 4; ++y) {
    for (std::size_t x = 0; x < 4; ++x) CHECK(up.at(y, x) == m.at(y / 2, x / 2));
  }
  std::mt19937_64 rng(23);
  const Tensor big = oracle::RandomTensor({8, 8}, rng);
  const Tensor down = ResizeNearest(big, 4, 4);
  for (std::size_t y = 0; y < 4; ++y) {
    for (std::size_t x = 0; x < 4; ++x) CHECK(down.at(y, x) == big.at(2 * y + 1, 2 * x + 1));
  }
  // Half-pixel bilinear: constant maps stay constant, identity size is a copy,
  // and 2x upsampling of [a, b] gives [a, .75a+.25b, .25a+.75b, b].
  CHECK(MaxAbsDiff(ResizeBilinear(Tensor::Full({3, 3}, 0.7), 7, 5), Tensor::Full({7, 5}, 0.7)) <
        1e-15);
  CHECK(ResizeBilinear(big, 8, 8).BitEqual(big));
  const Tensor row = ResizeBilinear(Tensor({1, 2}, {1.0, 3.0}), 1, 4);
  CHECK(row.BitEqual(Tensor({1, 4}, {1.0, 1.5, 2.5, 3.0})));
}

TEST_CASE("gather positions and bce") {
  GradTape tape;
  std::mt19937_64 rng(29);
  const Tensor x = oracle::RandomTensor({3, 2, 3}, rng);
  const Tensor m = oracle::RandomTensor({2, 3}, rng, 0.0, 1.0);
  const std::vector<std::size_t> pos = {1, 4, 5};
  const Tensor g = GatherPositions(tape.Constant(x), tape.Constant(m), pos).value();
  REQUIRE(g.shape() == Shape{3, 3});
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 3; ++c) CHECK(g.at(r, c) == x[c * 6 + pos[r]] * m[pos[r]]);
  }
  const Tensor y({2, 2}, {1, 0, 0, 1});
  CHECK(BceMean(tape.Constant(y), tape.Constant(y)).value().item() < 1e-6);
  CHECK(BceMean(tape.Constant(Tensor::Full({2, 2}, 0.5)), tape.Constant(y)).value().item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  const Tensor p = oracle::RandomTensor({3, 5}, rng, 0.01, 0.99);
  const Tensor t = oracle::RandomMask(3, 5, rng);
  CHECK(std::abs(BceMean(tape.Constant(p), tape.Constant(t)).value().item() -
                 oracle::BceMean(p, t)) < 1e-12);
}

}  // TEST_SUITE("ops")

TEST_SUITE("gradcheck") {

TEST_CASE("harness examples") {
  const auto sq = [](GradTape &, Var x) { return Sum(Mul(x, x)); };
  GradTape tape;
  const Var x = tape.Param(Tensor::Of({1, 2}));
  tape.Backward(sq(tape, x));
  CHECK(tape.grad(x).BitEqual(Tensor::Of({2, 4})));
  CHECK(GradCheck(sq, Tensor::Of({1, 2})).max_rel_err < 1e-8);

  // d/dw BCE(sigmoid(w x), y) = (sigmoid(w x) - y) x
  const double xv = 0.8, yv = 1.0, wv = -0.4;
  GradTape t2;
  const Var w = t2.Param(Tensor::Of({wv}));
  const Var loss = BceMean(Sigmoid(Scale(w, xv)), t2.Constant(Tensor::Of({yv})));
  t2.Backward(loss);
  CHECK(t2.grad(w)[0] == doctest::Approx((oracle::Sigmoid(wv * xv) - yv) * xv).epsilon(1e-12));

  CheckCodeThrown(ErrorCode::kNonFiniteLoss, [] {
    GradCheck([](GradTape &, Var v) { return Scale(Sum(v), 1e308 * 10); }, Tensor::Of({1.0}));
  });
}

TEST_CASE("every op passes a central-difference check") {
  std::mt19937_64 rng(31);
  auto rt = [&](Shape s, double lo = -1.0, double hi = 1.0) {
    return oracle::RandomTensor(s, rng, lo, hi);
  };
  const double tol = 1e-6;
  SUBCASE("add sub mul with broadcasting") {
    CHECK(WorstGrad([](GradTape &, std::span<const Var> v) {
            return Project(Mul(Sub(Add(v[0], v[1]), v[2]), v[0]), 1);
          }, {rt({2, 3, 3}), rt({2}), rt({3, 3})}) < tol);
  }
  SUBCASE("scale matmul transpose reshape") {
    CHECK(WorstGrad([](GradTape &, std::span<const Var> v) {
            return Project(Reshape(Transpose(Scale(MatMul(v[0], v[1]), 1.7)), {6}), 2);
          }, {rt({2, 4}), rt({4, 3})}) < tol);
  }
  SUBCASE("conv2d with stride, dilation and bias") {
    for (Conv2dOptions o : {Conv2dOptions{1, 1}, Conv2dOptions{2, 1}, Conv2dOptions{1, 2}}) {
      CHECK(WorstGrad([o](GradTape &, std::span<const Var> v) {
              return Project(Conv2d(v[0], v[1], v[2], o), 3);
            }, {rt({2, 5, 6}), rt({3, 2, 3, 3}), rt({3})}) < tol);
    }
  }
  SUBCASE("depthwise conv") {
    CHECK(WorstGrad([](GradTape &, std::span<const Var> v) {
            return Project(DepthwiseConv2d(v[0], v[1]), 4);
          }, {rt({3, 5, 5}), rt({3, 1, 3})}) < tol);
  }
  SUBCASE("masked average pool, gradient to features and mask") {
    CHECK(WorstGrad([](GradTape &, std::span<const Var> v) {
            return Project(MaskedAvgPool(v[0], v[1]), 5);
          }, {rt({3, 4, 4}), rt({4, 4}, 0.2, 1.0)}) < tol);
  }
  SUBCASE("adaptive pool down and up") {
    for (std::size_t target : {3, 5, 11}) {
      CHECK(WorstGrad([target](GradTape &, std::span<const Var> v) {
              return Project(AdaptivePool1d(v[0], target), 6);
            }, {rt({7, 2})}) < tol);
    }
  }
  SUBCASE("relu and sigmoid") {
    Tensor x = rt({12});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += x[i] > 0 ? 0.1 : -0.1;  // away from 0
    CHECK(WorstGrad([](GradTape &, std::span<const Var> v) {
            return Project(Sigmoid(Relu(v[0])), 7);
          }, {x}) < tol);
  }
  SUBCASE("resizes") {
    CHECK(WorstGrad([](GradTape &, std::span<const Var> v) {
            return Add(Project(ResizeBilinear(v[0], 7, 5), 8),
                       Project(ResizeNearest(v[0], 6, 2), 9));
          }, {rt({2, 3, 4})}) < tol);
  }
  SUBCASE("concat slice expand") {
    CHECK(WorstGrad([](GradTape &, std::span<const Var> v) {
            const Var e = Expand(v[1], 3, 3);
            const std::vector<Var> parts = {v[0], e, Slice(v[0], 1, 2)};
            return Project(Concat(parts), 10);
          }, {rt({2, 3, 3}), rt({4})}) < tol);
  }
  SUBCASE("gather positions, gradient to features and mask") {
    const std::vector<std::size_t> pos = {0, 2, 5, 7};
    CHECK(WorstGrad([&pos](GradTape &, std::span<const Var> v) {
            return Project(GatherPositions(v[0], v[1], pos), 11);
          }, {rt({3, 2, 4}), rt({2, 4}, 0.5, 1.0)}) < tol);
  }
  SUBCASE("sum mean bce") {
    CHECK(WorstGrad([](GradTape &t, std::span<const Var> v) {
            return Add(Mean(Mul(v[0], v[0])),
                       BceMean(v[1], t.Constant(Tensor({2, 3}, {1, 0, 1, 1, 0, 0}))));
          }, {rt({4}), rt({2, 3}, 0.1, 0.9)}) < tol);
  }
}

TEST_CASE("backward may run once and reaches every leaf once") {
  GradTape tape;
  const Var x = tape.Param(Tensor::Of({1, 2, 3}));
  const Var y = Add(x, x);  // x used twice: gradient accumulates to 2
  const Var loss = Sum(y);
  tape.Backward(loss);
  CHECK(tape.grad(x).BitEqual(Tensor::Of({2, 2, 2})));
  CheckCodeThrown(ErrorCode::kInvalidArgument, [&] { tape.Backward(loss); });
}

}  // TEST_SUITE("gradcheck")

}  // namespace dpcn
