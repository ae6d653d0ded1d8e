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

#include "dpcn/sam.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "dpcn/error.h"
#include "dpcn/tape.h"

namespace dpcn {

namespace {

void CheckWindow(Window w) {
  if (w.dh == 0 || w.dw == 0 || w.dh % 2 == 0 || w.dw % 2 == 0) {
    throw Error(ErrorCode::kUnsupportedWindow,
                "window " + std::to_string(w.dh) + "x" + std::to_string(w.dw));
  }
}

struct Offset {
  long dy, dx;
};

std::vector<Offset> WindowOffsets(Window w) {
  std::vector<Offset> offs;
  const long ch = static_cast<long>(w.dh / 2), cw = static_cast<long>(w.dw / 2);
  for (long a = 0; a < static_cast<long>(w.dh); ++a) {
    for (long b = 0; b < static_cast<long>(w.dw); ++b) offs.push_back({a - ch, b - cw});
  }
  return offs;
}

// [C,H,W] -> [H*W, C] plus per-position L2 norms.
std::vector<double> PositionMajor(const Tensor &x, std::vector<double> &norms) {
  const std::size_t c = x.dim(0), n = x.dim(1) * x.dim(2);
  std::vector<double> out(n * c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t u = 0; u < n; ++u) out[u * c + ch] = x[ch * n + u];
  }
  norms.assign(n, 0.0);
  for (std::size_t u = 0; u < n; ++u) {
    double acc = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) acc += out[u * c + ch] * out[u * c + ch];
    norms[u] = std::sqrt(acc);
  }
  return out;
}

}  // namespace

Tensor RegionFeatures(const Tensor &x, Window window) {
  CheckWindow(window);
  if (x.rank() != 3) {
    throw Error(ErrorCode::kShapeMismatch, "region features expect [Ch,H,W]");
  }
  const std::size_t c = x.dim(0);
  const long h = static_cast<long>(x.dim(1)), w = static_cast<long>(x.dim(2));
  const auto offs = WindowOffsets(window);
  const std::size_t n = static_cast<std::size_t>(h * w);
  Tensor out({offs.size(), c, n});
  for (std::size_t j = 0; j < offs.size(); ++j) {
    for (long y = 0; y < h; ++y) {
      const long sy = y + offs[j].dy;
      if (sy < 0 || sy >= h) continue;
      for (long xx = 0; xx < w; ++xx) {
        const long sx = xx + offs[j].dx;
        if (sx < 0 || sx >= w) continue;
        for (std::size_t ch = 0; ch < c; ++ch) {
          out[(j * c + ch) * n + static_cast<std::size_t>(y * w + xx)] =
              x[(ch * static_cast<std::size_t>(h) + sy) * static_cast<std::size_t>(w) + sx];
        }
      }
    }
  }
  return out;
}

Tensor RegionalCorr(const Tensor &rs, const Tensor &rq) {
  if (rs.rank() != 3 || rq.rank() != 3 || rs.dim(0) != rq.dim(0) || rs.dim(1) != rq.dim(1)) {
    throw Error(ErrorCode::kShapeMismatch, "regional corr " + ShapeString(rs.shape()) +
                                               " vs " + ShapeString(rq.shape()));
  }
  const std::size_t jn = rs.dim(0), c = rs.dim(1), ns = rs.dim(2), nq = rq.dim(2);
  Tensor corr({jn, ns, nq});
  std::vector<double> a(c), b(c);
  for (std::size_t j = 0; j < jn; ++j) {
    std::vector<std::vector<double>> qv(nq, std::vector<double>(c));
    for (std::size_t v = 0; v < nq; ++v) {
      for (std::size_t ch = 0; ch < c; ++ch) qv[v][ch] = rq[(j * c + ch) * nq + v];
    }
    for (std::size_t u = 0; u < ns; ++u) {
      for (std::size_t ch = 0; ch < c; ++ch) a[ch] = rs[(j * c + ch) * ns + u];
      for (std::size_t v = 0; v < nq; ++v) {
        corr[(j * ns + u) * nq + v] = CosineSim(a, qv[v]);
      }
    }
  }
  return corr;
}

Tensor ActivationMap(const Tensor &corr, std::size_t hq, std::size_t wq) {
  if (corr.rank() != 3 || corr.dim(2) != hq * wq) {
    throw Error(ErrorCode::kShapeMismatch, "corr " + ShapeString(corr.shape()));
  }
  const std::size_t jn = corr.dim(0), ns = corr.dim(1), nq = corr.dim(2);
  Tensor raw({hq, wq});
  for (std::size_t v = 0; v < nq; ++v) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t u = 0; u < ns; ++u) {
      double acc = 0.0;
      for (std::size_t j = 0; j < jn; ++j) acc += corr[(j * ns + u) * nq + v];
      best = std::max(best, acc / static_cast<double>(jn));
    }
    raw[v] = best;
  }
  return MinMaxNorm(raw);
}

Tensor MaskSupportFeatures(const Tensor &xs_high, const Tensor &mask) {
  if (xs_high.rank() != 3 || mask.rank() != 2) {
    throw Error(ErrorCode::kShapeMismatch, "support features/mask rank");
  }
  const std::size_t h = xs_high.dim(1), w = xs_high.dim(2), c = xs_high.dim(0);
  const Tensor m = ResizeNearest(mask, h, w);
  Tensor out = xs_high;
  bool any = false;
  for (std::size_t i = 0; i < h * w; ++i) {
    const bool fg = m[i] >= 0.5;
    any = any || fg;
    if (fg) continue;
    for (std::size_t ch = 0; ch < c; ++ch) out[ch * h * w + i] = 0.0;
  }
  if (!any) throw Error(ErrorCode::kEmptyMask, "support mask empty at feature resolution");
  return out;
}

namespace {

// Pixel-level cosine similarities between one support and the query. A
// region pair at offset j compares the pixels at u + o_j and v + o_j, so
// Corr is a shifted read of this table.
struct CosineTable {
  long hs = 0, ws = 0;
  std::vector<double> cos;  // [hs*ws, hq*wq]
};

CosineTable MakeCosineTable(const Tensor &xs, const Tensor &xq) {
  if (xs.rank() != 3 || xq.rank() != 3 || xs.dim(0) != xq.dim(0)) {
    throw Error(ErrorCode::kShapeMismatch, "support " + ShapeString(xs.shape()) +
                                               " vs query " + ShapeString(xq.shape()));
  }
  const std::size_t c = xq.dim(0), nq = xq.dim(1) * xq.dim(2);
  const std::size_t ns = xs.dim(1) * xs.dim(2);
  std::vector<double> snorm, qnorm;
  PositionMajor(xs, snorm);
  PositionMajor(xq, qnorm);
  CosineTable t{static_cast<long>(xs.dim(1)), static_cast<long>(xs.dim(2)),
                std::vector<double>(ns * nq, 0.0)};
  for (std::size_t u = 0; u < ns; ++u) {
    double *row = &t.cos[u * nq];
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double a = xs[ch * ns + u];
      const double *q = xq.ptr() + ch * nq;
      for (std::size_t v = 0; v < nq; ++v) row[v] += a * q[v];
    }
    for (std::size_t v = 0; v < nq; ++v) row[v] /= snorm[u] * qnorm[v] + kCosEps;
  }
  return t;
}

Tensor WindowFromTables(std::span<const CosineTable> tables, long hq, long wq, Window window) {
  const auto offs = WindowOffsets(window);
  const double inv_j = 1.0 / static_cast<double>(offs.size());
  const std::size_t nq = static_cast<std::size_t>(hq * wq);
  std::vector<double> best(nq, -std::numeric_limits<double>::infinity());
  for (const CosineTable &t : tables) {
    const long hs = t.hs, ws = t.ws;
    const std::size_t ns = static_cast<std::size_t>(hs * ws);
    // sum[u, v] accumulates the offsets in window order, skipping pairs that
    // leave either grid.
    std::vector<double> sum(ns * nq, 0.0);
    for (const Offset &o : offs) {
      const long vx_lo = std::max(0L, -o.dx), vx_hi = std::min(wq, wq - o.dx);
      const long vy_lo = std::max(0L, -o.dy), vy_hi = std::min(hq, hq - o.dy);
      if (vx_lo >= vx_hi) continue;
      for (long uy = 0; uy < hs; ++uy) {
        const long sy = uy + o.dy;
        if (sy < 0 || sy >= hs) continue;
        for (long ux = 0; ux < ws; ++ux) {
          const long sx = ux + o.dx;
          if (sx < 0 || sx >= ws) continue;
          const double *src = &t.cos[static_cast<std::size_t>(sy * ws + sx) * nq];
          double *dst = &sum[static_cast<std::size_t>(uy * ws + ux) * nq];
          for (long vy = vy_lo; vy < vy_hi; ++vy) {
            const double *s = src + (vy + o.dy) * wq + o.dx;
            double *d = dst + vy * wq;
            for (long vx = vx_lo; vx < vx_hi; ++vx) d[vx] += s[vx];
          }
        }
      }
    }
    for (std::size_t u = 0; u < ns; ++u) {
      const double *row = &sum[u * nq];
      for (std::size_t v = 0; v < nq; ++v) best[v] = std::max(best[v], row[v] * inv_j);
    }
  }
  Tensor raw({static_cast<std::size_t>(hq), static_cast<std::size_t>(wq)}, std::move(best));
  return MinMaxNorm(raw);
}

}  // namespace

Tensor WindowActivation(std::span<const Tensor> xs_masked, const Tensor &xq, Window window) {
  CheckWindow(window);
  if (xs_masked.empty()) throw Error(ErrorCode::kEmptyMask, "no support shots");
  std::vector<CosineTable> tables;
  for (const Tensor &xs : xs_masked) tables.push_back(MakeCosineTable(xs, xq));
  return WindowFromTables(tables, static_cast<long>(xq.dim(1)), static_cast<long>(xq.dim(2)),
                          window);
}

ActivationSet RunSam(std::span<const Tensor> xs_high, std::span<const Tensor> masks,
                     const Tensor &xq_high, const std::array<Window, 3> &windows) {
  if (xs_high.size() != masks.size() || xs_high.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "support features and masks must pair up");
  }
  std::vector<Tensor> masked;
  for (std::size_t i = 0; i < xs_high.size(); ++i) {
    masked.push_back(MaskSupportFeatures(xs_high[i], masks[i]));
  }
  std::vector<CosineTable> tables;
  for (const Tensor &xs : masked) tables.push_back(MakeCosineTable(xs, xq_high));
  ActivationSet act;
  act.m_pse0 = Tensor({xq_high.dim(1), xq_high.dim(2)});
  for (std::size_t i = 0; i < windows.size(); ++i) {
    CheckWindow(windows[i]);
    act.maps[i] = WindowFromTables(tables, static_cast<long>(xq_high.dim(1)),
                                   static_cast<long>(xq_high.dim(2)), windows[i]);
  }
  for (std::size_t k = 0; k < act.m_pse0.size(); ++k) {
    act.m_pse0[k] = (act.maps[0][k] + act.maps[1][k] + act.maps[2][k]) / 3.0;
  }
  return act;
}

}  // namespace dpcn
