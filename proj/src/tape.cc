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

#include "dpcn/tape.h"

#include <algorithm>
#include <cmath>

#include "dpcn/error.h"

namespace dpcn {

const Tensor &Var::value() const { return tape->value(*this); }
bool Var::requires_grad() const { return tape->requires_grad(*this); }

Var GradTape::Leaf(Tensor value) {
  Node node;
  node.requires_grad = value.requires_grad();
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var GradTape::Constant(Tensor value) {
  value.set_requires_grad(false);
  return Leaf(std::move(value));
}

Var GradTape::Param(Tensor value) {
  value.set_requires_grad(true);
  return Leaf(std::move(value));
}

Tensor GradTape::grad(Var v) const {
  const Node &node = nodes_.at(v.id);
  if (node.grad.empty()) return Tensor::Zeros(node.value.shape());
  return node.grad;
}

Tensor &GradTape::GradBuffer(Var v) {
  Node &node = nodes_[v.id];
  if (node.grad.empty()) node.grad = Tensor::Zeros(node.value.shape());
  return node.grad;
}

Var GradTape::Record(Tensor value, std::initializer_list<Var> inputs,
                     BackwardFn fn) {
  return Record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(fn));
}

Var GradTape::Record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  bool any = false;
  for (const Var &in : inputs) {
    if (in.tape != this) {
      throw Error(ErrorCode::kInvalidArgument, "operands on different tapes");
    }
    any = any || nodes_[in.id].requires_grad;
  }
  Node node;
  node.value = std::move(value);
  node.requires_grad = any;
  if (any) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

void GradTape::Backward(Var loss) {
  if (backward_done_) {
    throw Error(ErrorCode::kInvalidArgument, "tape already replayed");
  }
  backward_done_ = true;
  if (nodes_.at(loss.id).value.size() != 1) {
    throw Error(ErrorCode::kShapeMismatch, "backward target must be scalar");
  }
  GradBuffer(loss).Fill(1.0);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node &node = nodes_[i];
    if (!node.requires_grad || !node.backward || node.grad.empty()) continue;
    node.backward(*this, node.grad);
  }
}

namespace {

enum class Broadcast { kSame, kChannel, kSpatial };

Broadcast ResolveBroadcast(const Shape &a, const Shape &b) {
  if (a == b) return Broadcast::kSame;
  if (a.size() == 3 && b.size() == 1 && b[0] == a[0]) return Broadcast::kChannel;
  if (a.size() == 3 && b.size() == 2 && b[0] == a[1] && b[1] == a[2]) {
    return Broadcast::kSpatial;
  }
  throw Error(ErrorCode::kShapeMismatch,
              "no broadcast rule for " + ShapeString(a) + " and " + ShapeString(b));
}

// Index of b's element paired with a's element i.
inline std::size_t BIndex(Broadcast mode, std::size_t i, std::size_t plane) {
  switch (mode) {
    case Broadcast::kSame: return i;
    case Broadcast::kChannel: return i / plane;
    case Broadcast::kSpatial: return i % plane;
  }
  return i;
}

enum class BinaryOp { kAdd, kSub, kMul };

Var Elementwise(BinaryOp op, Var a, Var b) {
  const Tensor &av = a.value();
  const Tensor &bv = b.value();
  const Broadcast mode = ResolveBroadcast(av.shape(), bv.shape());
  const std::size_t plane = av.rank() == 3 ? av.dim(1) * av.dim(2) : 1;
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double x = av[i];
    const double y = bv[BIndex(mode, i, plane)];
    out[i] = op == BinaryOp::kAdd ? x + y : op == BinaryOp::kSub ? x - y : x * y;
  }
  return a.tape->Record(
      std::move(out), {a, b}, [a, b, op, mode, plane](GradTape &t, const Tensor &g) {
        const Tensor &av = t.value(a);
        const Tensor &bv = t.value(b);
        if (t.requires_grad(a)) {
          Tensor &ga = t.GradBuffer(a);
          for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += op == BinaryOp::kMul ? g[i] * bv[BIndex(mode, i, plane)] : g[i];
          }
        }
        if (t.requires_grad(b)) {
          Tensor &gb = t.GradBuffer(b);
          for (std::size_t i = 0; i < g.size(); ++i) {
            const std::size_t j = BIndex(mode, i, plane);
            switch (op) {
              case BinaryOp::kAdd: gb[j] += g[i]; break;
              case BinaryOp::kSub: gb[j] -= g[i]; break;
              case BinaryOp::kMul: gb[j] += g[i] * av[i]; break;
            }
          }
        }
      });
}

void RequireRank(const Tensor &t, std::size_t rank, const char *what) {
  if (t.rank() != rank) {
    throw Error(ErrorCode::kShapeMismatch, std::string(what) + " expects rank " +
                                               std::to_string(rank) + ", got " +
                                               ShapeString(t.shape()));
  }
}

// Output positions o in [lo, hi) with 0 <= o * stride + off < in.
struct Range {
  long lo, hi;
};

inline Range ValidRange(long off, long stride, long in, long out) {
  const long lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
  const long last = in - 1 - off;
  const long hi = last < 0 ? 0 : std::min(out, last / stride + 1);
  return {lo, std::max(lo, hi)};
}

struct ConvGeometry {
  long cin, h, w, cout, kh, kw, ho, wo, stride, dil, ph, pw;
};

ConvGeometry MakeGeometry(const Shape &xs, const Shape &ws, Conv2dOptions opts) {
  if (xs.size() != 3 || ws.size() != 4) {
    throw Error(ErrorCode::kShapeMismatch,
                "conv2d expects x [Cin,H,W] and w [Cout,Cin,kh,kw], got " +
                    ShapeString(xs) + " and " + ShapeString(ws));
  }
  if (ws[1] != xs[0]) {
    throw Error(ErrorCode::kShapeMismatch, "conv2d input channels " +
                                               std::to_string(xs[0]) + " vs weight " +
                                               std::to_string(ws[1]));
  }
  if (ws[2] % 2 == 0 || ws[3] % 2 == 0) {
    throw Error(ErrorCode::kNonOddKernel, "kernel " + ShapeString(ws));
  }
  if (opts.dilation < 1 || opts.stride < 1) {
    throw Error(ErrorCode::kInvalidArgument, "stride and dilation must be >= 1");
  }
  ConvGeometry g;
  g.cin = static_cast<long>(xs[0]);
  g.h = static_cast<long>(xs[1]);
  g.w = static_cast<long>(xs[2]);
  g.cout = static_cast<long>(ws[0]);
  g.kh = static_cast<long>(ws[2]);
  g.kw = static_cast<long>(ws[3]);
  g.stride = static_cast<long>(opts.stride);
  g.dil = static_cast<long>(opts.dilation);
  g.ph = g.dil * (g.kh - 1) / 2;
  g.pw = g.dil * (g.kw - 1) / 2;
  g.ho = (g.h - 1) / g.stride + 1;
  g.wo = (g.w - 1) / g.stride + 1;
  return g;
}

// Visits every (output row, input row, output col range, input col offset)
// tap of the convolution; fn(ci/co/ky/kx indices are bound by caller).
template <typename Fn>
void ForEachTap(const ConvGeometry &g, long ky, long kx, Fn &&fn) {
  const long off_y = ky * g.dil - g.ph;
  const long off_x = kx * g.dil - g.pw;
  const Range ry = ValidRange(off_y, g.stride, g.h, g.ho);
  const Range rx = ValidRange(off_x, g.stride, g.w, g.wo);
  if (rx.lo >= rx.hi) return;
  for (long oy = ry.lo; oy < ry.hi; ++oy) {
    fn(oy, oy * g.stride + off_y, rx.lo, rx.hi, off_x);
  }
}

// Unrolls x into a [cin*kh*kw, ho*wo] matrix whose row (ci,ky,kx) holds the
// input value each output position sees through that tap (0 in the padding).
std::vector<double> Im2Col(const Tensor &x, const ConvGeometry &g) {
  const long n = g.ho * g.wo;
  std::vector<double> col(static_cast<std::size_t>(g.cin * g.kh * g.kw * n), 0.0);
  const double *xp = x.ptr();
  const long s = g.stride;
  long row = 0;
  for (long ci = 0; ci < g.cin; ++ci) {
    const double *xplane = xp + ci * g.h * g.w;
    for (long ky = 0; ky < g.kh; ++ky) {
      for (long kx = 0; kx < g.kw; ++kx, ++row) {
        double *crow = col.data() + row * n;
        ForEachTap(g, ky, kx, [&](long oy, long iy, long lo, long hi, long off) {
          const double *in = xplane + iy * g.w + off;
          double *c = crow + oy * g.wo;
          for (long ox = lo; ox < hi; ++ox) c[ox] = in[ox * s];
        });
      }
    }
  }
  return col;
}

// Scatter-adds a column-matrix gradient back onto the input planes.
void Col2Im(const std::vector<double> &col, const ConvGeometry &g, Tensor &gx) {
  const long n = g.ho * g.wo;
  double *gp = gx.ptr();
  const long s = g.stride;
  long row = 0;
  for (long ci = 0; ci < g.cin; ++ci) {
    double *gplane = gp + ci * g.h * g.w;
    for (long ky = 0; ky < g.kh; ++ky) {
      for (long kx = 0; kx < g.kw; ++kx, ++row) {
        const double *crow = col.data() + row * n;
        ForEachTap(g, ky, kx, [&](long oy, long iy, long lo, long hi, long off) {
          double *gi = gplane + iy * g.w + off;
          const double *c = crow + oy * g.wo;
          for (long ox = lo; ox < hi; ++ox) gi[ox * s] += c[ox];
        });
      }
    }
  }
}

Tensor Conv2dForward(const Tensor &x, const Tensor &w, const Tensor *bias,
                     const ConvGeometry &g) {
  Tensor out({static_cast<std::size_t>(g.cout), static_cast<std::size_t>(g.ho),
              static_cast<std::size_t>(g.wo)});
  const std::vector<double> col = Im2Col(x, g);
  const long k = g.cin * g.kh * g.kw, n = g.ho * g.wo;
  const double *wp = w.ptr();
  double *op = out.ptr();
  for (long co = 0; co < g.cout; ++co) {
    double *o = op + co * n;
    if (bias) std::fill(o, o + n, (*bias)[co]);
    for (long r = 0; r < k; ++r) {
      const double wv = wp[co * k + r];
      const double *c = col.data() + r * n;
      for (long i = 0; i < n; ++i) o[i] += wv * c[i];
    }
  }
  return out;
}

void Conv2dBackward(const Tensor &x, const Tensor &w, const Tensor &grad,
                    const ConvGeometry &g, Tensor *gx, Tensor *gw, Tensor *gb) {
  const long k = g.cin * g.kh * g.kw, n = g.ho * g.wo;
  const double *wp = w.ptr();
  const double *gp = grad.ptr();
  if (gb) {
    for (long co = 0; co < g.cout; ++co) {
      double acc = 0.0;
      for (long i = 0; i < n; ++i) acc += gp[co * n + i];
      (*gb)[co] += acc;
    }
  }
  if (gw) {
    const std::vector<double> col = Im2Col(x, g);
    double *gwp = gw->ptr();
    for (long co = 0; co < g.cout; ++co) {
      const double *go = gp + co * n;
      for (long r = 0; r < k; ++r) {
        const double *c = col.data() + r * n;
        double acc = 0.0;
        for (long i = 0; i < n; ++i) acc += go[i] * c[i];
        gwp[co * k + r] += acc;
      }
    }
  }
  if (gx) {
    std::vector<double> gcol(static_cast<std::size_t>(k * n), 0.0);
    for (long co = 0; co < g.cout; ++co) {
      const double *go = gp + co * n;
      for (long r = 0; r < k; ++r) {
        const double wv = wp[co * k + r];
        double *c = gcol.data() + r * n;
        for (long i = 0; i < n; ++i) c[i] += wv * go[i];
      }
    }
    Col2Im(gcol, g, *gx);
  }
}

}  // namespace

Var Add(Var a, Var b) { return Elementwise(BinaryOp::kAdd, a, b); }
Var Sub(Var a, Var b) { return Elementwise(BinaryOp::kSub, a, b); }
Var Mul(Var a, Var b) { return Elementwise(BinaryOp::kMul, a, b); }

Var Scale(Var a, double s) {
  Tensor out = a.value();
  for (double &v : out.data()) v *= s;
  return a.tape->Record(std::move(out), {a}, [a, s](GradTape &t, const Tensor &g) {
    Tensor &ga = t.GradBuffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

Var MatMul(Var a, Var b) {
  const Tensor &av = a.value();
  const Tensor &bv = b.value();
  RequireRank(av, 2, "matmul");
  RequireRank(bv, 2, "matmul");
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  if (bv.dim(0) != k) {
    throw Error(ErrorCode::kShapeMismatch, "matmul " + ShapeString(av.shape()) +
                                               " x " + ShapeString(bv.shape()));
  }
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
    }
  }
  return a.tape->Record(std::move(out), {a, b}, [a, b, m, k, n](GradTape &t,
                                                               const Tensor &g) {
    const Tensor &av = t.value(a);
    const Tensor &bv = t.value(b);
    // dA = dC * B^T, dB = A^T * dC
    if (t.requires_grad(a)) {
      Tensor &ga = t.GradBuffer(a);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (t.requires_grad(b)) {
      Tensor &gb = t.GradBuffer(b);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
      }
    }
  });
}

Var Transpose(Var a) {
  const Tensor &av = a.value();
  RequireRank(av, 2, "transpose");
  const std::size_t r = av.dim(0), c = av.dim(1);
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  }
  return a.tape->Record(std::move(out), {a}, [a, r, c](GradTape &t, const Tensor &g) {
    Tensor &ga = t.GradBuffer(a);
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
    }
  });
}

Var Reshape(Var a, Shape shape) {
  Tensor out = a.value().Reshaped(std::move(shape));
  return a.tape->Record(std::move(out), {a}, [a](GradTape &t, const Tensor &g) {
    Tensor &ga = t.GradBuffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var Conv2d(Var x, Var w, std::optional<Var> bias, Conv2dOptions opts) {
  const ConvGeometry geo = MakeGeometry(x.shape(), w.shape(), opts);
  if (bias && bias->value().shape() != Shape{static_cast<std::size_t>(geo.cout)}) {
    throw Error(ErrorCode::kShapeMismatch, "conv2d bias " + ShapeString(bias->shape()));
  }
  Tensor out = Conv2dForward(x.value(), w.value(), bias ? &bias->value() : nullptr, geo);
  auto backward = [x, w, bias, geo](GradTape &t, const Tensor &g) {
    Tensor *gx = t.requires_grad(x) ? &t.GradBuffer(x) : nullptr;
    Tensor *gw = t.requires_grad(w) ? &t.GradBuffer(w) : nullptr;
    Tensor *gb = bias && t.requires_grad(*bias) ? &t.GradBuffer(*bias) : nullptr;
    Conv2dBackward(t.value(x), t.value(w), g, geo, gx, gw, gb);
  };
  if (bias) return x.tape->Record(std::move(out), {x, w, *bias}, std::move(backward));
  return x.tape->Record(std::move(out), {x, w}, std::move(backward));
}

Var DepthwiseConv2d(Var x, Var ker) {
  const Tensor &xv = x.value();
  const Tensor &kv = ker.value();
  RequireRank(xv, 3, "depthwise conv input");
  RequireRank(kv, 3, "dynamic kernel");
  const long c = static_cast<long>(xv.dim(0)), h = static_cast<long>(xv.dim(1)),
             w = static_cast<long>(xv.dim(2));
  const long kh = static_cast<long>(kv.dim(0)), kw = static_cast<long>(kv.dim(1));
  if (static_cast<long>(kv.dim(2)) != c) {
    throw Error(ErrorCode::kChannelMismatch, "kernel channels " +
                                                 std::to_string(kv.dim(2)) +
                                                 " vs feature channels " +
                                                 std::to_string(c));
  }
  if (kh % 2 == 0 || kw % 2 == 0) {
    throw Error(ErrorCode::kNonOddKernel, "dynamic kernel " + ShapeString(kv.shape()));
  }
  const long ph = (kh - 1) / 2, pw = (kw - 1) / 2;
  // Visits (channel, kernel tap, output row, input row, column range, offset).
  auto visit = [=](auto &&fn) {
    for (long ch = 0; ch < c; ++ch) {
      for (long ky = 0; ky < kh; ++ky) {
        const Range ry = ValidRange(ky - ph, 1, h, h);
        for (long kx = 0; kx < kw; ++kx) {
          const Range rx = ValidRange(kx - pw, 1, w, w);
          const long kidx = (ky * kw + kx) * c + ch;
          for (long oy = ry.lo; oy < ry.hi; ++oy) {
            fn(ch, kidx, oy, oy + ky - ph, rx.lo, rx.hi, kx - pw);
          }
        }
      }
    }
  };
  Tensor out(xv.shape());
  {
    const double *xp = xv.ptr();
    const double *kp = kv.ptr();
    double *op = out.ptr();
    visit([&](long ch, long kidx, long oy, long iy, long lo, long hi, long off) {
      const double kval = kp[kidx];
      const double *in = xp + (ch * h + iy) * w + off;
      double *o = op + (ch * h + oy) * w;
      for (long ox = lo; ox < hi; ++ox) o[ox] += kval * in[ox];
    });
  }
  return x.tape->Record(std::move(out), {x, ker}, [x, ker, visit, h, w](GradTape &t,
                                                                       const Tensor &g) {
    const double *xp = t.value(x).ptr();
    const double *kp = t.value(ker).ptr();
    const double *gp = g.ptr();
    double *gx = t.requires_grad(x) ? t.GradBuffer(x).ptr() : nullptr;
    double *gk = t.requires_grad(ker) ? t.GradBuffer(ker).ptr() : nullptr;
    visit([&](long ch, long kidx, long oy, long iy, long lo, long hi, long off) {
      const double *go = gp + (ch * h + oy) * w;
      if (gk) {
        const double *in = xp + (ch * h + iy) * w + off;
        double acc = 0.0;
        for (long ox = lo; ox < hi; ++ox) acc += go[ox] * in[ox];
        gk[kidx] += acc;
      }
      if (gx) {
        const double kval = kp[kidx];
        double *gi = gx + (ch * h + iy) * w + off;
        for (long ox = lo; ox < hi; ++ox) gi[ox] += kval * go[ox];
      }
    });
  });
}

Var MaskedAvgPool(Var x, Var m) {
  const Tensor &xv = x.value();
  const Tensor &mv = m.value();
  RequireRank(xv, 3, "masked_avg_pool features");
  if (mv.shape() != Shape{xv.dim(1), xv.dim(2)}) {
    throw Error(ErrorCode::kShapeMismatch, "mask " + ShapeString(mv.shape()) +
                                               " vs features " +
                                               ShapeString(xv.shape()));
  }
  const std::size_t c = xv.dim(0), plane = mv.size();
  double msum = 0.0;
  for (double v : mv.data()) msum += v;
  if (msum < kMaskEps) throw Error(ErrorCode::kEmptyMask, "mask sum below 1e-6");
  Tensor out({c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += xv[ch * plane + i] * mv[i];
    out[ch] = acc / msum;
  }
  return x.tape->Record(std::move(out), {x, m}, [x, m, c, plane, msum](GradTape &t,
                                                                      const Tensor &g) {
    const Tensor &xv = t.value(x);
    const Tensor &mv = t.value(m);
    if (t.requires_grad(x)) {
      Tensor &gx = t.GradBuffer(x);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double s = g[ch] / msum;
        for (std::size_t i = 0; i < plane; ++i) gx[ch * plane + i] += s * mv[i];
      }
    }
    if (t.requires_grad(m)) {
      // p = sum(x m) / sum(m)  =>  dp/dm_i = (x_i - p) / sum(m)
      std::vector<double> p(c);
      for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += xv[ch * plane + i] * mv[i];
        p[ch] = acc / msum;
      }
      Tensor &gm = t.GradBuffer(m);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double s = g[ch] / msum;
        for (std::size_t i = 0; i < plane; ++i) gm[i] += s * (xv[ch * plane + i] - p[ch]);
      }
    }
  });
}

Var AdaptivePool1d(Var seq, std::size_t target) {
  const Tensor &sv = seq.value();
  RequireRank(sv, 2, "adaptive_pool1d");
  if (target == 0) throw Error(ErrorCode::kInvalidArgument, "pool target must be >= 1");
  const std::size_t n = sv.dim(0), c = sv.dim(1);
  // Each output row averages rows [begin, end) of the input.
  std::vector<std::size_t> begin(target), end(target);
  for (std::size_t i = 0; i < target; ++i) {
    if (n >= target) {
      begin[i] = i * n / target;
      end[i] = (i + 1) * n / target;
    } else {
      begin[i] = i * n / target;
      end[i] = begin[i] + 1;
    }
  }
  Tensor out({target, c});
  for (std::size_t i = 0; i < target; ++i) {
    const double inv = 1.0 / static_cast<double>(end[i] - begin[i]);
    for (std::size_t r = begin[i]; r < end[i]; ++r) {
      for (std::size_t ch = 0; ch < c; ++ch) out[i * c + ch] += sv[r * c + ch];
    }
    for (std::size_t ch = 0; ch < c; ++ch) out[i * c + ch] *= inv;
  }
  return seq.tape->Record(std::move(out), {seq}, [seq, begin, end, c](GradTape &t,
                                                                     const Tensor &g) {
    Tensor &gs = t.GradBuffer(seq);
    for (std::size_t i = 0; i < begin.size(); ++i) {
      const double inv = 1.0 / static_cast<double>(end[i] - begin[i]);
      for (std::size_t r = begin[i]; r < end[i]; ++r) {
        for (std::size_t ch = 0; ch < c; ++ch) gs[r * c + ch] += inv * g[i * c + ch];
      }
    }
  });
}

Var Relu(Var x) {
  Tensor out = x.value();
  for (double &v : out.data()) v = v > 0.0 ? v : 0.0;
  return x.tape->Record(std::move(out), {x}, [x](GradTape &t, const Tensor &g) {
    const Tensor &xv = t.value(x);
    Tensor &gx = t.GradBuffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > 0.0) gx[i] += g[i];
    }
  });
}

Var Sigmoid(Var x) {
  Tensor out = x.value();
  for (double &v : out.data()) v = 1.0 / (1.0 + std::exp(-v));
  return x.tape->Record(std::move(out), {x}, [x](GradTape &t, const Tensor &g) {
    const Tensor &xv = t.value(x);
    Tensor &gx = t.GradBuffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = 1.0 / (1.0 + std::exp(-xv[i]));
      gx[i] += g[i] * s * (1.0 - s);
    }
  });
}

namespace {

struct PlaneLayout {
  std::size_t planes, h, w;
};

PlaneLayout Planes(const Tensor &t, const char *what) {
  if (t.rank() == 2) return {1, t.dim(0), t.dim(1)};
  if (t.rank() == 3) return {t.dim(0), t.dim(1), t.dim(2)};
  throw Error(ErrorCode::kShapeMismatch,
              std::string(what) + " expects [H,W] or [C,H,W], got " +
                  ShapeString(t.shape()));
}

Shape ResizedShape(const Tensor &t, std::size_t oh, std::size_t ow) {
  if (oh == 0 || ow == 0) {
    throw Error(ErrorCode::kInvalidArgument, "resize target must be >= 1");
  }
  if (t.rank() == 2) return {oh, ow};
  return {t.dim(0), oh, ow};
}

// Source index for every output element of a nearest resize.
std::vector<std::size_t> NearestIndex(const PlaneLayout &in, std::size_t oh,
                                      std::size_t ow) {
  std::vector<std::size_t> idx(in.planes * oh * ow);
  std::size_t k = 0;
  for (std::size_t p = 0; p < in.planes; ++p) {
    for (std::size_t y = 0; y < oh; ++y) {
      const std::size_t sy = NearestSource(y, in.h, oh);
      for (std::size_t x = 0; x < ow; ++x) {
        idx[k++] = (p * in.h + sy) * in.w + NearestSource(x, in.w, ow);
      }
    }
  }
  return idx;
}

struct Lerp {
  std::size_t i0, i1;
  double w0, w1;
};

// Half-pixel-centered linear interpolation weights along one axis.
std::vector<Lerp> LerpTable(std::size_t in, std::size_t out) {
  std::vector<Lerp> table(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    std::size_t i0 = static_cast<std::size_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    const double l = src - static_cast<double>(i0);
    table[o] = {i0, i1, 1.0 - l, l};
  }
  return table;
}

template <typename Fn>
void VisitBilinear(const PlaneLayout &in, std::size_t oh, std::size_t ow, Fn &&fn) {
  const auto ty = LerpTable(in.h, oh);
  const auto tx = LerpTable(in.w, ow);
  std::size_t k = 0;
  for (std::size_t p = 0; p < in.planes; ++p) {
    const std::size_t base = p * in.h * in.w;
    for (std::size_t y = 0; y < oh; ++y) {
      const Lerp &ly = ty[y];
      for (std::size_t x = 0; x < ow; ++x, ++k) {
        const Lerp &lx = tx[x];
        fn(k, base + ly.i0 * in.w + lx.i0, ly.w0 * lx.w0);
        fn(k, base + ly.i0 * in.w + lx.i1, ly.w0 * lx.w1);
        fn(k, base + ly.i1 * in.w + lx.i0, ly.w1 * lx.w0);
        fn(k, base + ly.i1 * in.w + lx.i1, ly.w1 * lx.w1);
      }
    }
  }
}

}  // namespace

Tensor ResizeNearest(const Tensor &x, std::size_t out_h, std::size_t out_w) {
  const PlaneLayout in = Planes(x, "resize_nearest");
  Tensor out(ResizedShape(x, out_h, out_w));
  const auto idx = NearestIndex(in, out_h, out_w);
  for (std::size_t k = 0; k < idx.size(); ++k) out[k] = x[idx[k]];
  return out;
}

Tensor ResizeBilinear(const Tensor &x, std::size_t out_h, std::size_t out_w) {
  const PlaneLayout in = Planes(x, "resize_bilinear");
  Tensor out(ResizedShape(x, out_h, out_w));
  VisitBilinear(in, out_h, out_w,
                [&](std::size_t o, std::size_t i, double wt) { out[o] += wt * x[i]; });
  return out;
}

Var ResizeNearest(Var x, std::size_t out_h, std::size_t out_w) {
  const Tensor &xv = x.value();
  const PlaneLayout in = Planes(xv, "resize_nearest");
  Tensor out(ResizedShape(xv, out_h, out_w));
  auto idx = NearestIndex(in, out_h, out_w);
  for (std::size_t k = 0; k < idx.size(); ++k) out[k] = xv[idx[k]];
  return x.tape->Record(std::move(out), {x},
                        [x, idx = std::move(idx)](GradTape &t, const Tensor &g) {
                          Tensor &gx = t.GradBuffer(x);
                          for (std::size_t k = 0; k < idx.size(); ++k) gx[idx[k]] += g[k];
                        });
}

Var ResizeBilinear(Var x, std::size_t out_h, std::size_t out_w) {
  const PlaneLayout in = Planes(x.value(), "resize_bilinear");
  Tensor out = ResizeBilinear(x.value(), out_h, out_w);
  return x.tape->Record(std::move(out), {x},
                        [x, in, out_h, out_w](GradTape &t, const Tensor &g) {
                          Tensor &gx = t.GradBuffer(x);
                          VisitBilinear(in, out_h, out_w,
                                        [&](std::size_t o, std::size_t i, double wt) {
                                          gx[i] += wt * g[o];
                                        });
                        });
}

Var Concat(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorCode::kInvalidArgument, "concat of nothing");
  const Shape &first = parts[0].shape();
  if (first.empty()) throw Error(ErrorCode::kShapeMismatch, "concat of scalars");
  Shape shape = first;
  shape[0] = 0;
  for (const Var &p : parts) {
    const Shape &s = p.shape();
    if (s.size() != first.size() || !std::equal(s.begin() + 1, s.end(), first.begin() + 1)) {
      throw Error(ErrorCode::kShapeMismatch, "concat " + ShapeString(first) + " with " +
                                                 ShapeString(s));
    }
    shape[0] += s[0];
  }
  Tensor out(shape);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var &p : parts) {
    offsets.push_back(off);
    const Tensor &v = p.value();
    std::copy(v.data().begin(), v.data().end(), out.data().begin() + off);
    off += v.size();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape->Record(std::move(out), parts,
                               [inputs, offsets](GradTape &t, const Tensor &g) {
                                 for (std::size_t k = 0; k < inputs.size(); ++k) {
                                   if (!t.requires_grad(inputs[k])) continue;
                                   Tensor &gi = t.GradBuffer(inputs[k]);
                                   for (std::size_t i = 0; i < gi.size(); ++i) {
                                     gi[i] += g[offsets[k] + i];
                                   }
                                 }
                               });
}

Var Slice(Var x, std::size_t begin, std::size_t end) {
  const Tensor &xv = x.value();
  if (xv.rank() == 0 || begin >= end || end > xv.dim(0)) {
    throw Error(ErrorCode::kShapeMismatch, "slice [" + std::to_string(begin) + "," +
                                               std::to_string(end) + ") of " +
                                               ShapeString(xv.shape()));
  }
  Shape shape = xv.shape();
  shape[0] = end - begin;
  const std::size_t stride = xv.size() / xv.dim(0);
  Tensor out(shape);
  std::copy(xv.data().begin() + begin * stride, xv.data().begin() + end * stride,
            out.data().begin());
  return x.tape->Record(std::move(out), {x}, [x, begin, stride](GradTape &t,
                                                               const Tensor &g) {
    Tensor &gx = t.GradBuffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[begin * stride + i] += g[i];
  });
}

Var Expand(Var p, std::size_t h, std::size_t w) {
  const Tensor &pv = p.value();
  RequireRank(pv, 1, "expand");
  const std::size_t c = pv.dim(0), plane = h * w;
  Tensor out({c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    std::fill(out.ptr() + ch * plane, out.ptr() + (ch + 1) * plane, pv[ch]);
  }
  return p.tape->Record(std::move(out), {p}, [p, c, plane](GradTape &t, const Tensor &g) {
    Tensor &gp = t.GradBuffer(p);
    for (std::size_t ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      for (std::size_t i = 0; i < plane; ++i) acc += g[ch * plane + i];
      gp[ch] += acc;
    }
  });
}

Var GatherPositions(Var x, Var m, std::span<const std::size_t> positions) {
  const Tensor &xv = x.value();
  const Tensor &mv = m.value();
  RequireRank(xv, 3, "gather features");
  if (mv.shape() != Shape{xv.dim(1), xv.dim(2)}) {
    throw Error(ErrorCode::kShapeMismatch, "gather mask " + ShapeString(mv.shape()));
  }
  if (positions.empty()) {
    throw Error(ErrorCode::kEmptyForeground, "no foreground positions");
  }
  const std::size_t c = xv.dim(0), plane = mv.size(), n = positions.size();
  for (std::size_t u : positions) {
    if (u >= plane) throw Error(ErrorCode::kShapeMismatch, "position out of range");
  }
  Tensor out({n, c});
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t u = positions[r];
    for (std::size_t ch = 0; ch < c; ++ch) out[r * c + ch] = xv[ch * plane + u] * mv[u];
  }
  std::vector<std::size_t> pos(positions.begin(), positions.end());
  return x.tape->Record(std::move(out), {x, m}, [x, m, pos, c, plane](GradTape &t,
                                                                     const Tensor &g) {
    const Tensor &xv = t.value(x);
    const Tensor &mv = t.value(m);
    Tensor *gx = t.requires_grad(x) ? &t.GradBuffer(x) : nullptr;
    Tensor *gm = t.requires_grad(m) ? &t.GradBuffer(m) : nullptr;
    for (std::size_t r = 0; r < pos.size(); ++r) {
      const std::size_t u = pos[r];
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double gv = g[r * c + ch];
        if (gx) (*gx)[ch * plane + u] += gv * mv[u];
        if (gm) (*gm)[u] += gv * xv[ch * plane + u];
      }
    }
  });
}

Var Sum(Var x) {
  double acc = 0.0;
  for (double v : x.value().data()) acc += v;
  return x.tape->Record(Tensor::Scalar(acc), {x}, [x](GradTape &t, const Tensor &g) {
    Tensor &gx = t.GradBuffer(x);
    for (double &v : gx.data()) v += g[0];
  });
}

Var Mean(Var x) { return Scale(Sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var BceMean(Var pred, Var target) {
  const Tensor &pv = pred.value();
  const Tensor &yv = target.value();
  if (pv.shape() != yv.shape()) {
    throw Error(ErrorCode::kShapeMismatch, "bce " + ShapeString(pv.shape()) + " vs " +
                                               ShapeString(yv.shape()));
  }
  const double n = static_cast<double>(pv.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double p = std::clamp(pv[i], kBceEps, 1.0 - kBceEps);
    acc -= yv[i] * std::log(p) + (1.0 - yv[i]) * std::log(1.0 - p);
  }
  return pred.tape->Record(Tensor::Scalar(acc / n), {pred}, [pred, target, n](
                                                                GradTape &t,
                                                                const Tensor &g) {
    const Tensor &pv = t.value(pred);
    const Tensor &yv = t.value(target);
    Tensor &gp = t.GradBuffer(pred);
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const double p = pv[i];
      if (p < kBceEps || p > 1.0 - kBceEps) continue;
      gp[i] -= g[0] / n * (yv[i] / p - (1.0 - yv[i]) / (1.0 - p));
    }
  });
}

double CosineSim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::kShapeMismatch, "cosine of unequal lengths");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / (std::sqrt(na) * std::sqrt(nb) + kCosEps);
}

Tensor MinMaxNorm(const Tensor &map) {
  Tensor out(map.shape());
  if (map.empty()) return out;
  const auto [lo, hi] = std::minmax_element(map.data().begin(), map.data().end());
  const double range = *hi - *lo;
  if (range < kCosEps) return out;
  for (std::size_t i = 0; i < map.size(); ++i) {
    out[i] = (map[i] - *lo) / (range + kCosEps);
  }
  return out;
}

}  // namespace dpcn
