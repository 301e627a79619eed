// SPDX-License-Identifier: Apache-2.0
//
// Learnable building blocks: convolutions, a linear layer, scaled
// dot-product cross-attention over spatial positions, a convolutional GRU
// cell, pyramid pooling and pixel-shuffle up-scaling.

#ifndef CTAD_NN_HPP_
#define CTAD_NN_HPP_

#include <string>
#include <vector>

#include "ctad/params.hpp"
#include "ctad/tensor.hpp"

namespace ctad::nn {

enum class Init { kFanIn, kZero };

struct Conv2d {
  Tensor weight;  // [out, in, k, k]
  Tensor bias;    // [out]
  int stride = 1;
  int padding = 0;

  static Conv2d create(ParamStore& store, const std::string& name, int in, int out, int kernel, int stride, Rng& rng,
                       Init init = Init::kFanIn);
  int in_channels() const { return weight.dim(1); }
  int out_channels() const { return weight.dim(0); }
  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding); }
};

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  static Linear create(ParamStore& store, const std::string& name, int in, int out, Rng& rng,
                       Init init = Init::kFanIn);
  /// [in] -> [out]
  Tensor operator()(const Tensor& v) const;
};

/// theta/phi map the context to query/key space, sigma lifts the values.
struct AttentionBlock {
  Conv2d theta;
  Conv2d phi;
  Conv2d sigma;

  static AttentionBlock create(ParamStore& store, const std::string& name, int context_channels, int value_channels,
                               int qk_channels, Rng& rng);
  int qk_channels() const { return theta.out_channels(); }
  int value_channels() const { return sigma.out_channels(); }
};

struct AttentionOutput {
  Tensor output;   // [C_v,h,w]
  Tensor weights;  // [h*w, h*w], row q = softmax over keys for query q
};

/// softmax((theta(ctx)+embed)^T (phi(ctx)+embed) / sqrt(C_qk)) applied to
/// sigma(tmp), plus the residual tmp. `embed` may be undefined.
AttentionOutput cross_attention_full(const AttentionBlock& block, const Tensor& ctx, const Tensor& tmp,
                                     const Tensor& embed);
inline Tensor cross_attention(const AttentionBlock& block, const Tensor& ctx, const Tensor& tmp,
                              const Tensor& embed = Tensor()) {
  return cross_attention_full(block, ctx, tmp, embed).output;
}

/// Gates are 3x3 convolutions over the concatenated [h, x].
struct ConvGRUCell {
  Conv2d update;
  Conv2d reset;
  Conv2d candidate;

  static ConvGRUCell create(ParamStore& store, const std::string& name, int hidden, int input, Rng& rng);
  int hidden_channels() const { return update.out_channels(); }
};

/// z = s(Wz*[h,x]), r = s(Wr*[h,x]), c = tanh(Wh*[r.h, x]), h' = (1-z).h + z.c
Tensor conv_gru(const ConvGRUCell& cell, const Tensor& h, const Tensor& x);

struct PPMBlock {
  std::vector<int> bins;
  std::vector<Conv2d> reduce;  // 1x1 per bin
  Conv2d fuse;                 // 3x3 over [x, branches...]

  static PPMBlock create(ParamStore& store, const std::string& name, int in, int branch, int out,
                         std::vector<int> bins, Rng& rng);
};

/// Each bin: adaptive average pool to b x b, 1x1 conv, bilinear resize back;
/// concatenated with x and fused by a 3x3 conv.
Tensor ppm(const PPMBlock& block, const Tensor& x);

/// Pixel-shuffle: [C*s*s,h,w] -> [C,s*h,s*w].
inline Tensor rearrange_upscale(const Tensor& x, int s) { return pixel_shuffle(x, s); }

}  // namespace ctad::nn

#endif  // CTAD_NN_HPP_
