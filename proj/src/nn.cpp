// SPDX-License-Identifier: Apache-2.0

#include "ctad/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace ctad::nn {

Conv2d Conv2d::create(ParamStore& store, const std::string& name, int in, int out, int kernel, int stride, Rng& rng,
                      Init init) {
  Conv2d c;
  const Shape wshape{out, in, kernel, kernel};
  if (init == Init::kZero) {
    c.weight = store.zeros(name + ".weight", wshape);
  } else {
    c.weight = store.uniform(name + ".weight", wshape, fan_in_bound(in * kernel * kernel), rng);
  }
  c.bias = store.zeros(name + ".bias", Shape{out});
  c.stride = stride;
  c.padding = same_padding(kernel);
  return c;
}

Linear Linear::create(ParamStore& store, const std::string& name, int in, int out, Rng& rng, Init init) {
  Linear l;
  if (init == Init::kZero) {
    l.weight = store.zeros(name + ".weight", Shape{in, out});
  } else {
    l.weight = store.uniform(name + ".weight", Shape{in, out}, fan_in_bound(in), rng);
  }
  l.bias = store.zeros(name + ".bias", Shape{out});
  return l;
}

Tensor Linear::operator()(const Tensor& v) const {
  const int in = weight.dim(0), out = weight.dim(1);
  if (v.numel() != static_cast<std::size_t>(in)) {
    throw DimensionError("linear: input " + shape_str(v.shape()) + " does not match weight " +
                         shape_str(weight.shape()));
  }
  return add(reshape(matmul(reshape(v, Shape{1, in}), weight), Shape{out}), bias);
}

AttentionBlock AttentionBlock::create(ParamStore& store, const std::string& name, int context_channels,
                                      int value_channels, int qk_channels, Rng& rng) {
  return {Conv2d::create(store, name + ".theta", context_channels, qk_channels, 1, 1, rng),
          Conv2d::create(store, name + ".phi", context_channels, qk_channels, 1, 1, rng),
          Conv2d::create(store, name + ".sigma", value_channels, value_channels, 1, 1, rng)};
}

AttentionOutput cross_attention_full(const AttentionBlock& block, const Tensor& ctx, const Tensor& tmp,
                                     const Tensor& embed) {
  if (ctx.rank() != 3 || tmp.rank() != 3 || ctx.dim(1) != tmp.dim(1) || ctx.dim(2) != tmp.dim(2)) {
    throw DimensionError("cross_attention: spatial mismatch between context " + shape_str(ctx.shape()) +
                         " and temporal " + shape_str(tmp.shape()));
  }
  if (block.value_channels() != tmp.dim(0)) {
    throw DimensionError("cross_attention: residual needs " + std::to_string(block.value_channels()) +
                         " channels, temporal input is " + shape_str(tmp.shape()));
  }
  const int h = ctx.dim(1), w = ctx.dim(2), hw = h * w;
  const int cqk = block.qk_channels(), cv = block.value_channels();
  Tensor q = block.theta(ctx);
  Tensor k = block.phi(ctx);
  if (embed.defined()) {
    if (embed.shape() != q.shape()) {
      throw DimensionError("cross_attention: embedding " + shape_str(embed.shape()) + " does not match queries " +
                           shape_str(q.shape()));
    }
    q = add(q, embed);
    k = add(k, embed);
  }
  Tensor v = block.sigma(tmp);
  Tensor scores = matmul(transpose(reshape(q, Shape{cqk, hw})), reshape(k, Shape{cqk, hw}));
  Tensor weights = softmax(mul_scalar(scores, Scalar(1) / std::sqrt(Scalar(cqk))), 1);
  // out^T = V A^T : [cv, hw]
  Tensor attended = matmul(reshape(v, Shape{cv, hw}), transpose(weights));
  return {add(reshape(attended, Shape{cv, h, w}), tmp), weights};
}

ConvGRUCell ConvGRUCell::create(ParamStore& store, const std::string& name, int hidden, int input, Rng& rng) {
  const int in = hidden + input;
  return {Conv2d::create(store, name + ".update", in, hidden, 3, 1, rng),
          Conv2d::create(store, name + ".reset", in, hidden, 3, 1, rng),
          Conv2d::create(store, name + ".candidate", in, hidden, 3, 1, rng)};
}

Tensor conv_gru(const ConvGRUCell& cell, const Tensor& h, const Tensor& x) {
  if (h.rank() != 3 || x.rank() != 3 || h.dim(1) != x.dim(1) || h.dim(2) != x.dim(2)) {
    throw DimensionError("conv_gru: hidden " + shape_str(h.shape()) + " and input " + shape_str(x.shape()) +
                         " differ spatially");
  }
  if (h.dim(0) != cell.hidden_channels() || h.dim(0) + x.dim(0) != cell.update.in_channels()) {
    throw DimensionError("conv_gru: cell expects " + std::to_string(cell.update.in_channels()) +
                         " stacked channels, got hidden " + shape_str(h.shape()) + " and input " +
                         shape_str(x.shape()));
  }
  const Tensor hx = concat({h, x});
  const Tensor z = sigmoid(cell.update(hx));
  const Tensor r = sigmoid(cell.reset(hx));
  const Tensor c = tanh(cell.candidate(concat({mul(r, h), x})));
  return add(mul(add_scalar(neg(z), Scalar(1)), h), mul(z, c));
}

PPMBlock PPMBlock::create(ParamStore& store, const std::string& name, int in, int branch, int out,
                          std::vector<int> bins, Rng& rng) {
  PPMBlock b;
  b.bins = std::move(bins);
  for (int bin : b.bins) {
    b.reduce.push_back(Conv2d::create(store, name + ".reduce" + std::to_string(bin), in, branch, 1, 1, rng));
  }
  b.fuse = Conv2d::create(store, name + ".fuse", in + branch * static_cast<int>(b.bins.size()), out, 3, 1, rng);
  return b;
}

Tensor ppm(const PPMBlock& block, const Tensor& x) {
  if (x.rank() != 3) throw DimensionError("ppm: expected [C,H,W], got " + shape_str(x.shape()));
  const int h = x.dim(1), w = x.dim(2);
  std::vector<Tensor> parts{x};
  for (std::size_t i = 0; i < block.bins.size(); ++i) {
    const int b = block.bins[i];
    if (b > h || b > w) {
      throw DimensionError("ppm: input " + shape_str(x.shape()) + " smaller than bin " + std::to_string(b));
    }
    parts.push_back(resize_bilinear(block.reduce[i](adaptive_avg_pool2d(x, b, b)), h, w));
  }
  return block.fuse(concat(parts));
}

}  // namespace ctad::nn
