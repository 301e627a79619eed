// SPDX-License-Identifier: Apache-2.0

#include "ctad/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ctad {

void ModelConfig::validate() const {
  if (height <= 0 || width <= 0 || height % 16 != 0 || width % 16 != 0) {
    throw std::invalid_argument("model: image size " + std::to_string(height) + "x" + std::to_string(width) +
                                " must be positive multiples of 16");
  }
  if (encoder_channels.size() != 4) throw std::invalid_argument("model: encoder needs exactly 4 stages");
  for (int c : encoder_channels) {
    if (c <= 0) throw std::invalid_argument("model: encoder channels must be positive");
  }
  for (int c : {feature_channels, context_channels, temporal_channels, qk_channels, hidden_channels, pose_head_width,
                ppm_branch_channels}) {
    if (c <= 0) throw std::invalid_argument("model: channel counts must be positive");
  }
  if (!(d_min > 0) || !(d_max > d_min)) throw std::invalid_argument("model: need 0 < d_min < d_max");
  if (usable_bins(ppm_bins, height / 16, width / 16).empty()) {
    throw std::invalid_argument("model: no pooling bin fits the deepest feature map");
  }
}

double ModelConfig::prior_scale() const { return prior_depth() / std::log(2.0); }

std::vector<int> usable_bins(const std::vector<int>& bins, int height, int width) {
  std::vector<int> out;
  for (int b : bins) {
    if (b >= 1 && b <= height && b <= width) out.push_back(b);
  }
  return out;
}

MAEParams MAEParams::create(ParamStore& store, const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  MAEParams p;
  const auto& ch = cfg.encoder_channels;
  const int cf = cfg.feature_channels;
  int in = 3;
  for (int s = 0; s < 4; ++s) {
    const std::string name = "mae.enc" + std::to_string(s + 1);
    EncoderStage st;
    st.down = nn::Conv2d::create(store, name + ".down", in, ch[s], 3, 2, rng);
    st.conv = nn::Conv2d::create(store, name + ".conv", ch[s], ch[s], 3, 1, rng);
    p.encoder.push_back(st);
    in = ch[s];
  }
  p.ppm = nn::PPMBlock::create(store, "mae.ppm", ch[3], cfg.ppm_branch_channels, cf,
                               usable_bins(cfg.ppm_bins, cfg.height / 16, cfg.width / 16), rng);
  for (int level = 4; level >= 1; --level) {
    p.cross_scale.push_back(nn::AttentionBlock::create(store, "mae.attn" + std::to_string(level), ch[level - 1], cf,
                                                       cfg.qk_channels, rng));
  }
  for (int level = 3; level >= 1; --level) {
    p.lateral.push_back(
        nn::Conv2d::create(store, "mae.lateral" + std::to_string(level), ch[level - 1], cf, 1, 1, rng));
  }
  for (int i = 0; i < 2; ++i) {
    p.upscale.push_back(nn::Conv2d::create(store, "mae.up" + std::to_string(i + 1), cf, 4 * cf, 1, 1, rng));
  }
  return p;
}

HeadParams HeadParams::create(ParamStore& store, const ModelConfig& cfg, Rng& rng) {
  const int cf = cfg.feature_channels;
  HeadParams h;
  h.depth_conv = nn::Conv2d::create(store, "head.depth.conv", cf, cf, 3, 1, rng);
  h.depth_out = nn::Conv2d::create(store, "head.depth.out", cf, 1, 3, 1, rng, nn::Init::kZero);
  h.pose_conv = nn::Conv2d::create(store, "head.pose.conv", 2 * cf, cfg.pose_head_width, 3, 2, rng);
  h.pose_out = nn::Linear::create(store, "head.pose.out", cfg.pose_head_width, 6, rng, nn::Init::kZero);
  return h;
}

Tensor ContextNet::operator()(const Tensor& x) const { return c3(relu(c2(relu(c1(x))))); }

namespace {

ContextNet make_context(ParamStore& store, const std::string& name, int in, int out, Rng& rng) {
  return {nn::Conv2d::create(store, name + ".c1", in, out, 3, 2, rng),
          nn::Conv2d::create(store, name + ".c2", out, out, 3, 2, rng),
          nn::Conv2d::create(store, name + ".c3", out, out, 3, 1, rng)};
}

}  // namespace

ContextNetParams ContextNetParams::create(ParamStore& store, const ModelConfig& cfg, Rng& rng) {
  return {make_context(store, "context.depth", 3, cfg.context_channels, rng),
          make_context(store, "context.pose", 6, cfg.context_channels, rng)};
}

Tensor normalize_image(const Tensor& image) { return add_scalar(image, Scalar(-0.5)); }

Pyramid mae_forward(const MAEParams& params, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw DimensionError("mae_forward: expected [3,H,W], got " + shape_str(image.shape()));
  }
  if (image.dim(1) % 16 != 0 || image.dim(2) % 16 != 0) {
    throw DimensionError("mae_forward: image " + shape_str(image.shape()) + " not divisible by 16");
  }
  Pyramid pyr;
  Tensor x = image;
  for (int s = 0; s < 4; ++s) {
    x = relu(params.encoder[s].conv(relu(params.encoder[s].down(x))));
    pyr.levels[s] = x;
  }
  Tensor fused = nn::ppm(params.ppm, pyr.levels[3]);
  fused = nn::cross_attention(params.cross_scale[0], pyr.levels[3], fused);
  for (int i = 0; i < 3; ++i) {
    const int level = 3 - i;  // 1-based level being fused
    if (i < 2) fused = nn::rearrange_upscale(params.upscale[i](fused), 2);
    Tensor feat = pyr.levels[level - 1];
    if (level == 1) feat = avg_pool2d(feat, 2);
    fused = add(fused, params.lateral[i](feat));
    fused = nn::cross_attention(params.cross_scale[i + 1], feat, fused);
  }
  pyr.fused = fused;
  return pyr;
}

DepthMap predict_depth(const HeadParams& heads, const ModelConfig& cfg, const Tensor& f_ref) {
  Tensor logits = heads.depth_out(relu(heads.depth_conv(f_ref)));
  logits = resize_bilinear(logits, cfg.height, cfg.width);
  Tensor d = mul_scalar(softplus(logits), Scalar(cfg.prior_scale()));
  return DepthMap::dense(clamp(d, Scalar(cfg.d_min), Scalar(cfg.d_max)));
}

Tensor predict_pose(const HeadParams& heads, const Tensor& f_ref, const Tensor& f_other) {
  return heads.pose_out(global_avg_pool(relu(heads.pose_conv(concat({f_ref, f_other})))));
}

InitialPrediction initial_predict(const HeadParams& heads, const ModelConfig& cfg, const Tensor& f_ref,
                                  const std::vector<Tensor>& f_others) {
  InitialPrediction out;
  out.depth = predict_depth(heads, cfg, f_ref);
  for (const auto& f : f_others) out.poses.push_back(predict_pose(heads, f_ref, f));
  return out;
}

ContextFeatures context_forward(const ContextNetParams& params, const Tensor& image_ref,
                                const std::vector<Tensor>& images_other) {
  ContextFeatures out;
  out.depth = params.depth(image_ref);
  for (const auto& img : images_other) out.poses.push_back(params.pose(concat({image_ref, img})));
  return out;
}

}  // namespace ctad
