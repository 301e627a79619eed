// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "ctad/tensor.hpp"

namespace ctad {

using detail::Node;

namespace {

struct Chw {
  int c, h, w;
};

Chw require_chw(const Tensor& t, const char* op) {
  if (t.rank() != 3) throw DimensionError(std::string(op) + ": expected [C,H,W], got " + shape_str(t.shape()));
  return {t.dim(0), t.dim(1), t.dim(2)};
}

// Output columns [lo, hi) whose input column ox*stride - pad + k is inside [0, w).
std::pair<int, int> valid_range(int out, int in, int stride, int pad, int k) {
  int lo = 0;
  while (lo < out && lo * stride - pad + k < 0) ++lo;
  int hi = out;
  while (hi > lo && (hi - 1) * stride - pad + k >= in) --hi;
  return {lo, hi};
}

// Rows (c, ky, kx), columns output pixels; out-of-image taps are zero.
std::vector<Scalar> im2col(const Scalar* x, int cin, int h, int w, int kh, int kw, int stride, int pad, int oh,
                           int ow) {
  const std::size_t plane = std::size_t(oh) * ow;
  std::vector<Scalar> col(std::size_t(cin) * kh * kw * plane, 0);
  for (int c = 0; c < cin; ++c) {
    const Scalar* ip = x + std::size_t(c) * h * w;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        Scalar* row = col.data() + ((std::size_t(c) * kh + ky) * kw + kx) * plane;
        const auto [lo, hi] = valid_range(ow, w, stride, pad, kx);
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const std::ptrdiff_t base = std::ptrdiff_t(iy) * w - pad + kx;
          Scalar* dst = row + std::size_t(oy) * ow;
          for (int ox = lo; ox < hi; ++ox) dst[ox] = ip[base + std::ptrdiff_t(ox) * stride];
        }
      }
    }
  }
  return col;
}

void col2im_add(const Scalar* col, Scalar* gx, int cin, int h, int w, int kh, int kw, int stride, int pad, int oh,
                int ow) {
  const std::size_t plane = std::size_t(oh) * ow;
  for (int c = 0; c < cin; ++c) {
    Scalar* gp = gx + std::size_t(c) * h * w;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const Scalar* row = col + ((std::size_t(c) * kh + ky) * kw + kx) * plane;
        const auto [lo, hi] = valid_range(ow, w, stride, pad, kx);
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const std::ptrdiff_t base = std::ptrdiff_t(iy) * w - pad + kx;
          const Scalar* src = row + std::size_t(oy) * ow;
          for (int ox = lo; ox < hi; ++ox) gp[base + std::ptrdiff_t(ox) * stride] += src[ox];
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  const auto [cin, h, w] = require_chw(x, "conv2d");
  if (weight.rank() != 4 || weight.dim(1) != cin) {
    throw DimensionError("conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " +
                         shape_str(x.shape()));
  }
  const int cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (kh % 2 == 0 || kw % 2 == 0) throw DimensionError("conv2d: kernel dims must be odd, got " + shape_str(weight.shape()));
  if (stride < 1 || padding < 0) throw DimensionError("conv2d: invalid stride/padding");
  if (h + 2 * padding < kh || w + 2 * padding < kw) {
    throw DimensionError("conv2d: kernel " + shape_str(weight.shape()) + " larger than padded input " +
                         shape_str(x.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout)) {
    throw DimensionError("conv2d: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(cout) +
                         " output channels");
  }
  const int oh = (h + 2 * padding - kh) / stride + 1;
  const int ow = (w + 2 * padding - kw) / stride + 1;
  const std::size_t out_plane = std::size_t(oh) * ow;

  const int kk = cin * kh * kw;
  const Scalar* wv = weight.data().data();
  std::vector<Scalar> col = im2col(x.data().data(), cin, h, w, kh, kw, stride, padding, oh, ow);
  std::vector<Scalar> out(std::size_t(cout) * out_plane, 0);
  // Per output: bias, then (channel, kernel row, kernel column) in order.
  if (bias.defined()) {
    for (int o = 0; o < cout; ++o) std::fill_n(out.data() + o * out_plane, out_plane, bias.data()[o]);
  }
  detail::gemm_nn(wv, col.data(), out.data(), cout, kk, int(out_plane));

  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  const bool has_bias = bias.defined();
  return detail::make_result(Shape{cout, oh, ow}, std::move(out), inputs, [=](Node& self) {
    auto& X = *self.inputs[0];
    auto& W = *self.inputs[1];
    const Scalar* g = self.grad.data();
    const int p = int(out_plane);
    if (has_bias && self.inputs[2]->requires_grad) {
      auto& gb = self.inputs[2]->ensure_grad();
      for (int o = 0; o < cout; ++o) {
        Scalar s = 0;
        for (int q = 0; q < p; ++q) s += g[std::size_t(o) * p + q];
        gb[o] += s;
      }
    }
    if (W.requires_grad) {
      const std::vector<Scalar> cols = im2col(X.data.data(), cin, h, w, kh, kw, stride, padding, oh, ow);
      detail::gemm_nt(g, cols.data(), W.ensure_grad().data(), cout, p, kk);
    }
    if (X.requires_grad) {
      std::vector<Scalar> gcol(std::size_t(kk) * p, 0);
      detail::gemm_tn(W.data.data(), g, gcol.data(), cout, kk, p);
      col2im_add(gcol.data(), X.ensure_grad().data(), cin, h, w, kh, kw, stride, padding, oh, ow);
    }
  });
}

Tensor avg_pool2d(const Tensor& x, int k) {
  const auto [c, h, w] = require_chw(x, "avg_pool2d");
  if (k < 1 || h % k != 0 || w % k != 0) {
    throw DimensionError("avg_pool2d: kernel " + std::to_string(k) + " does not tile " + shape_str(x.shape()));
  }
  const int oh = h / k, ow = w / k;
  const Scalar inv = Scalar(1) / Scalar(k * k);
  auto xv = x.data();
  std::vector<Scalar> out(std::size_t(c) * oh * ow, 0);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        out[(std::size_t(ch) * oh + y / k) * ow + xx / k] += xv[(std::size_t(ch) * h + y) * w + xx] * inv;
  return detail::make_result(Shape{c, oh, ow}, std::move(out), {x}, [=](Node& self) {
    auto& gx = self.inputs[0]->ensure_grad();
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx)
          gx[(std::size_t(ch) * h + y) * w + xx] += self.grad[(std::size_t(ch) * oh + y / k) * ow + xx / k] * inv;
  });
}

Tensor adaptive_avg_pool2d(const Tensor& x, int out_h, int out_w) {
  const auto [c, h, w] = require_chw(x, "adaptive_avg_pool2d");
  if (out_h < 1 || out_w < 1 || out_h > h || out_w > w) {
    throw DimensionError("adaptive_avg_pool2d: " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                         " bins exceed input " + shape_str(x.shape()));
  }
  auto bin = [](int i, int out, int in) {
    const int start = (i * in) / out;
    const int end = ((i + 1) * in + out - 1) / out;
    return std::pair<int, int>{start, end};
  };
  auto xv = x.data();
  std::vector<Scalar> out(std::size_t(c) * out_h * out_w, 0);
  for (int ch = 0; ch < c; ++ch)
    for (int by = 0; by < out_h; ++by)
      for (int bx = 0; bx < out_w; ++bx) {
        const auto [y0, y1] = bin(by, out_h, h);
        const auto [x0, x1] = bin(bx, out_w, w);
        Scalar s = 0;
        for (int y = y0; y < y1; ++y)
          for (int xx = x0; xx < x1; ++xx) s += xv[(std::size_t(ch) * h + y) * w + xx];
        out[(std::size_t(ch) * out_h + by) * out_w + bx] = s / Scalar((y1 - y0) * (x1 - x0));
      }
  return detail::make_result(Shape{c, out_h, out_w}, std::move(out), {x}, [=](Node& self) {
    auto& gx = self.inputs[0]->ensure_grad();
    for (int ch = 0; ch < c; ++ch)
      for (int by = 0; by < out_h; ++by)
        for (int bx = 0; bx < out_w; ++bx) {
          const auto [y0, y1] = bin(by, out_h, h);
          const auto [x0, x1] = bin(bx, out_w, w);
          const Scalar g = self.grad[(std::size_t(ch) * out_h + by) * out_w + bx] / Scalar((y1 - y0) * (x1 - x0));
          for (int y = y0; y < y1; ++y)
            for (int xx = x0; xx < x1; ++xx) gx[(std::size_t(ch) * h + y) * w + xx] += g;
        }
  });
}

Tensor global_avg_pool(const Tensor& x) {
  const auto [c, h, w] = require_chw(x, "global_avg_pool");
  const std::size_t hw = std::size_t(h) * w;
  auto xv = x.data();
  std::vector<Scalar> out(c, 0);
  for (int ch = 0; ch < c; ++ch) {
    Scalar s = 0;
    for (std::size_t p = 0; p < hw; ++p) s += xv[ch * hw + p];
    out[ch] = s / Scalar(hw);
  }
  return detail::make_result(Shape{c}, std::move(out), {x}, [c, hw](Node& self) {
    auto& gx = self.inputs[0]->ensure_grad();
    for (int ch = 0; ch < c; ++ch) {
      const Scalar g = self.grad[ch] / Scalar(hw);
      for (std::size_t p = 0; p < hw; ++p) gx[ch * hw + p] += g;
    }
  });
}

Tensor resize_nearest(const Tensor& x, int out_h, int out_w) {
  const auto [c, h, w] = require_chw(x, "resize_nearest");
  if (out_h < 1 || out_w < 1) throw DimensionError("resize_nearest: invalid output size");
  std::vector<std::size_t> src(std::size_t(out_h) * out_w);
  for (int y = 0; y < out_h; ++y)
    for (int xx = 0; xx < out_w; ++xx) {
      const int sy = std::min(h - 1, static_cast<int>((std::int64_t(y) * h) / out_h));
      const int sx = std::min(w - 1, static_cast<int>((std::int64_t(xx) * w) / out_w));
      src[std::size_t(y) * out_w + xx] = std::size_t(sy) * w + sx;
    }
  const std::size_t in_plane = std::size_t(h) * w, out_plane = src.size();
  auto xv = x.data();
  std::vector<Scalar> out(c * out_plane);
  for (int ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < out_plane; ++p) out[ch * out_plane + p] = xv[ch * in_plane + src[p]];
  return detail::make_result(Shape{c, out_h, out_w}, std::move(out), {x}, [=, src = std::move(src)](Node& self) {
    auto& gx = self.inputs[0]->ensure_grad();
    for (int ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < out_plane; ++p) gx[ch * in_plane + src[p]] += self.grad[ch * out_plane + p];
  });
}

Tensor resize_bilinear(const Tensor& x, int out_h, int out_w) {
  const auto [c, h, w] = require_chw(x, "resize_bilinear");
  if (out_h < 1 || out_w < 1) throw DimensionError("resize_bilinear: invalid output size");
  struct Tap {
    int i0, i1;
    Scalar a;
  };
  auto taps = [](int out, int in) {
    std::vector<Tap> t(out);
    for (int o = 0; o < out; ++o) {
      Scalar s = std::min(Scalar(o) * Scalar(in) / Scalar(out), Scalar(in - 1));
      int i0 = std::min(static_cast<int>(std::floor(s)), std::max(in - 2, 0));
      int i1 = std::min(i0 + 1, in - 1);
      t[o] = {i0, i1, in == 1 ? Scalar(0) : s - Scalar(i0)};
    }
    return t;
  };
  const auto ty = taps(out_h, h), tx = taps(out_w, w);
  const std::size_t in_plane = std::size_t(h) * w, out_plane = std::size_t(out_h) * out_w;
  auto xv = x.data();
  std::vector<Scalar> out(c * out_plane);
  for (int ch = 0; ch < c; ++ch) {
    const Scalar* ip = xv.data() + ch * in_plane;
    for (int y = 0; y < out_h; ++y)
      for (int xx = 0; xx < out_w; ++xx) {
        const auto& a = ty[y];
        const auto& b = tx[xx];
        const Scalar top = (1 - b.a) * ip[a.i0 * w + b.i0] + b.a * ip[a.i0 * w + b.i1];
        const Scalar bot = (1 - b.a) * ip[a.i1 * w + b.i0] + b.a * ip[a.i1 * w + b.i1];
        out[ch * out_plane + std::size_t(y) * out_w + xx] = (1 - a.a) * top + a.a * bot;
      }
  }
  return detail::make_result(Shape{c, out_h, out_w}, std::move(out), {x}, [=](Node& self) {
    auto& gx = self.inputs[0]->ensure_grad();
    for (int ch = 0; ch < c; ++ch) {
      Scalar* gp = gx.data() + ch * in_plane;
      for (int y = 0; y < out_h; ++y)
        for (int xx = 0; xx < out_w; ++xx) {
          const auto& a = ty[y];
          const auto& b = tx[xx];
          const Scalar g = self.grad[ch * out_plane + std::size_t(y) * out_w + xx];
          gp[a.i0 * w + b.i0] += g * (1 - a.a) * (1 - b.a);
          gp[a.i0 * w + b.i1] += g * (1 - a.a) * b.a;
          gp[a.i1 * w + b.i0] += g * a.a * (1 - b.a);
          gp[a.i1 * w + b.i1] += g * a.a * b.a;
        }
    }
  });
}

namespace {

// Flat source index in [C*s*s,H,W] for every element of [C,s*H,s*W].
std::vector<std::size_t> shuffle_map(int c, int h, int w, int s) {
  const int oh = h * s, ow = w * s;
  std::vector<std::size_t> src(std::size_t(c) * oh * ow);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        const int i = y / s, di = y % s, j = x / s, dj = x % s;
        const int sc = ch * s * s + di * s + dj;
        src[(std::size_t(ch) * oh + y) * ow + x] = (std::size_t(sc) * h + i) * w + j;
      }
  return src;
}

}  // namespace

Tensor pixel_shuffle(const Tensor& x, int s) {
  const auto [cs, h, w] = require_chw(x, "pixel_shuffle");
  if (s < 1 || cs % (s * s) != 0) {
    throw DimensionError("pixel_shuffle: " + std::to_string(cs) + " channels not divisible by " +
                         std::to_string(s * s));
  }
  const int c = cs / (s * s);
  auto src = shuffle_map(c, h, w, s);
  auto xv = x.data();
  std::vector<Scalar> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = xv[src[i]];
  return detail::make_result(Shape{c, h * s, w * s}, std::move(out), {x}, [src = std::move(src)](Node& self) {
    auto& gx = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < src.size(); ++i) gx[src[i]] += self.grad[i];
  });
}

Tensor pixel_unshuffle(const Tensor& x, int s) {
  const auto [c, hs, ws] = require_chw(x, "pixel_unshuffle");
  if (s < 1 || hs % s != 0 || ws % s != 0) {
    throw DimensionError("pixel_unshuffle: " + shape_str(x.shape()) + " not divisible by " + std::to_string(s));
  }
  const int h = hs / s, w = ws / s;
  // Inverse permutation: output [C*s*s,h,w] element src[i] reads input i.
  auto dst = shuffle_map(c, h, w, s);
  auto xv = x.data();
  std::vector<Scalar> out(dst.size());
  for (std::size_t i = 0; i < dst.size(); ++i) out[dst[i]] = xv[i];
  return detail::make_result(Shape{c * s * s, h, w}, std::move(out), {x}, [dst = std::move(dst)](Node& self) {
    auto& gx = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < dst.size(); ++i) gx[i] += self.grad[dst[i]];
  });
}

Sampled bilinear_sample(const Tensor& feat, const Tensor& coords) {
  const auto [c, h, w] = require_chw(feat, "bilinear_sample");
  if (coords.rank() != 3 || coords.dim(0) != 2) {
    throw DimensionError("bilinear_sample: coords must be [2,H',W'], got " + shape_str(coords.shape()));
  }
  const int oh = coords.dim(1), ow = coords.dim(2);
  const std::size_t n = std::size_t(oh) * ow;
  const std::size_t in_plane = std::size_t(h) * w;

  struct Tap {
    int x0, x1, y0, y1;
    Scalar ax, ay;
  };
  auto cv = coords.data();
  std::vector<Tap> taps(n);
  Mask valid(oh, ow, false);
  for (std::size_t p = 0; p < n; ++p) {
    Scalar x = cv[p], y = cv[n + p];
    // Rounding slack so exact border pixels survive a project/unproject round trip.
    const Scalar tol = Scalar(1e-9);
    const bool ok = std::isfinite(x) && std::isfinite(y) && x >= -tol && y >= -tol && x <= Scalar(w - 1) + tol &&
                    y <= Scalar(h - 1) + tol;
    valid.values[p] = ok ? 1 : 0;
    x = std::isfinite(x) ? std::clamp(x, Scalar(0), Scalar(w - 1)) : Scalar(0);
    y = std::isfinite(y) ? std::clamp(y, Scalar(0), Scalar(h - 1)) : Scalar(0);
    Tap t;
    t.x0 = std::min(static_cast<int>(std::floor(x)), std::max(w - 2, 0));
    t.y0 = std::min(static_cast<int>(std::floor(y)), std::max(h - 2, 0));
    t.x1 = std::min(t.x0 + 1, w - 1);
    t.y1 = std::min(t.y0 + 1, h - 1);
    t.ax = w == 1 ? Scalar(0) : x - Scalar(t.x0);
    t.ay = h == 1 ? Scalar(0) : y - Scalar(t.y0);
    taps[p] = t;
  }

  auto fv = feat.data();
  std::vector<Scalar> out(c * n);
  for (int ch = 0; ch < c; ++ch) {
    const Scalar* fp = fv.data() + ch * in_plane;
    for (std::size_t p = 0; p < n; ++p) {
      const Tap& t = taps[p];
      const Scalar top = (1 - t.ax) * fp[t.y0 * w + t.x0] + t.ax * fp[t.y0 * w + t.x1];
      const Scalar bot = (1 - t.ax) * fp[t.y1 * w + t.x0] + t.ax * fp[t.y1 * w + t.x1];
      out[ch * n + p] = (1 - t.ay) * top + t.ay * bot;
    }
  }

  Tensor values = detail::make_result(
      Shape{c, oh, ow}, std::move(out), {feat, coords}, [=, taps = std::move(taps)](Node& self) {
        auto& F = *self.inputs[0];
        auto& C = *self.inputs[1];
        const Scalar* g = self.grad.data();
        if (F.requires_grad) {
          auto& gf = F.ensure_grad();
          for (int ch = 0; ch < c; ++ch) {
            Scalar* gp = gf.data() + ch * in_plane;
            for (std::size_t p = 0; p < n; ++p) {
              const Tap& t = taps[p];
              const Scalar gv = g[ch * n + p];
              gp[t.y0 * w + t.x0] += gv * (1 - t.ay) * (1 - t.ax);
              gp[t.y0 * w + t.x1] += gv * (1 - t.ay) * t.ax;
              gp[t.y1 * w + t.x0] += gv * t.ay * (1 - t.ax);
              gp[t.y1 * w + t.x1] += gv * t.ay * t.ax;
            }
          }
        }
        if (C.requires_grad) {
          auto& gc = C.ensure_grad();
          for (std::size_t p = 0; p < n; ++p) {
            if (!valid.values[p]) continue;
            const Tap& t = taps[p];
            Scalar dx = 0, dy = 0;
            for (int ch = 0; ch < c; ++ch) {
              const Scalar* fp = F.data.data() + ch * in_plane;
              const Scalar f00 = fp[t.y0 * w + t.x0], f01 = fp[t.y0 * w + t.x1];
              const Scalar f10 = fp[t.y1 * w + t.x0], f11 = fp[t.y1 * w + t.x1];
              const Scalar gv = g[ch * n + p];
              dx += gv * ((1 - t.ay) * (f01 - f00) + t.ay * (f11 - f10));
              dy += gv * ((1 - t.ax) * (f10 - f00) + t.ax * (f11 - f01));
            }
            gc[p] += dx;
            gc[n + p] += dy;
          }
        }
      });
  return {values, valid};
}

}  // namespace ctad
