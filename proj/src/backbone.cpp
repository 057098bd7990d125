#include "mcgaze/backbone.hpp"

#include <algorithm>
#include <cmath>

namespace mcgaze {

namespace {
constexpr double kPixelMean = 0.5;
constexpr double kPixelScale = 4.0;  // (x - 0.5) / 0.25
}  // namespace

Tensor frames_to_tensor(const std::vector<Image>& frames) {
  if (frames.empty()) throw std::invalid_argument("frames_to_tensor: empty clip");
  const int T = static_cast<int>(frames.size());
  const int H = frames[0].height;
  const int W = frames[0].width;
  Tensor out({T, 3, H, W});
  for (int t = 0; t < T; ++t) {
    if (frames[t].height != H || frames[t].width != W)
      throw std::invalid_argument("frames_to_tensor: frames differ in size");
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          out[((static_cast<std::size_t>(t) * 3 + c) * H + y) * W + x] =
              (frames[t].at(y, x, c) - kPixelMean) * kPixelScale;
  }
  return out;
}

int pyramid_level_for_box(const Box& box, int min_level, int max_level) {
  const double scale = std::sqrt(std::max(box.w * box.h, 1e-12));
  const int level = static_cast<int>(std::floor(4.0 + std::log2(scale)));
  return std::clamp(level, min_level, max_level);
}

Backbone::Backbone(const ModelConfig& cfg, ParamStore& params, Initializer& init)
    : variant_(cfg.variant), channels_(cfg.channels), image_size_(cfg.image_size) {
  const int stride = variant_ == BackboneVariant::kToy ? 8 : 32;
  if (image_size_ < stride || image_size_ % stride != 0) {
    throw ConfigError("backbone: image size " + std::to_string(image_size_) + " is not a multiple of " +
                      std::to_string(stride));
  }
  if (variant_ == BackboneVariant::kToy) {
    const int c = channels_;
    const int widths[5] = {3, std::max(4, c / 4), std::max(4, c / 2), c, c};
    const int strides[4] = {2, 2, 2, 1};
    for (int i = 0; i < 4; ++i) {
      toy_blocks_.push_back(make_conv(params, init, "backbone.block" + std::to_string(i), widths[i],
                                      widths[i + 1], 3, strides[i], true, false));
    }
    return;
  }

  // ResNet-50 with frozen-statistics batch norm (learnable affine only).
  stem_ = make_conv(params, init, "backbone.stem", 3, 64, 7, 2, false, true);
  const int blocks[4] = {3, 4, 6, 3};
  const int widths[4] = {64, 128, 256, 512};
  int in_ch = 64;
  for (int s = 0; s < 4; ++s) {
    std::vector<Bottleneck> stage;
    for (int b = 0; b < blocks[s]; ++b) {
      const std::string p = "backbone.res" + std::to_string(s + 2) + "." + std::to_string(b);
      const int w = widths[s];
      const int st = (b == 0 && s > 0) ? 2 : 1;
      Bottleneck blk;
      blk.reduce = make_conv(params, init, p + ".conv1", in_ch, w, 1, 1, false, true);
      blk.spatial = make_conv(params, init, p + ".conv2", w, w, 3, st, false, true);
      blk.expand = make_conv(params, init, p + ".conv3", w, 4 * w, 1, 1, false, true);
      if (b == 0) {
        blk.has_downsample = true;
        blk.downsample = make_conv(params, init, p + ".downsample", in_ch, 4 * w, 1, st, false, true);
      }
      in_ch = 4 * w;
      stage.push_back(std::move(blk));
    }
    stages_.push_back(std::move(stage));
  }
  const int level_in[4] = {256, 512, 1024, 2048};
  for (int l = 0; l < 4; ++l) {
    const std::string p = "backbone.fpn.p" + std::to_string(l + 2);
    lateral_.push_back(make_conv(params, init, p + ".lateral", level_in[l], channels_, 1, 1, true, false));
    output_.push_back(make_conv(params, init, p + ".output", channels_, channels_, 3, 1, true, false));
  }
}

Backbone::ConvUnit Backbone::make_conv(ParamStore& params, Initializer& init, const std::string& name, int ci,
                                       int co, int k, int stride, bool with_bias, bool with_affine) {
  ConvUnit u;
  u.stride = stride;
  u.padding = k / 2;
  u.weight = params.add(name + ".weight", init.kaiming_conv(co, ci, k), ParamGroup::kBackbone);
  if (with_bias) u.bias = params.add(name + ".bias", Tensor({co}), ParamGroup::kBackbone);
  if (with_affine) {
    u.scale = params.add(name + ".norm.scale", Tensor({co}, 1.0), ParamGroup::kBackbone);
    u.shift = params.add(name + ".norm.shift", Tensor({co}), ParamGroup::kBackbone);
  }
  return u;
}

ad::Var Backbone::apply(const ConvUnit& u, const ad::Var& x, bool relu) const {
  ad::Var y = ad::conv2d(x, u.weight, u.bias, {u.stride, u.padding});
  if (u.scale.defined()) y = ad::channel_affine(y, u.scale, u.shift);
  return relu ? ad::relu(y) : y;
}

FeatureMap Backbone::extract(const VideoClip& clip) const {
  return extract(ad::constant(frames_to_tensor(clip.frames)));
}

FeatureMap Backbone::extract(const ad::Var& frames) const {
  if (frames.value().rank() != 4 || frames.dim(1) != 3)
    throw std::invalid_argument("backbone: expects frames [T,3,H,W]");
  if (frames.dim(2) != image_size_ || frames.dim(3) != image_size_) {
    throw std::invalid_argument("backbone: frame size " + std::to_string(frames.dim(2)) + "x" +
                                std::to_string(frames.dim(3)) + " does not match configured " +
                                std::to_string(image_size_));
  }
  return variant_ == BackboneVariant::kToy ? extract_toy(frames) : extract_full(frames);
}

FeatureMap Backbone::extract_toy(const ad::Var& x) const {
  ad::Var h = x;
  for (const auto& blk : toy_blocks_) h = apply(blk, h, true);
  return FeatureMap{{h}, {8}, channels_};
}

FeatureMap Backbone::extract_full(const ad::Var& x) const {
  ad::Var h = apply(stem_, x, true);
  h = ad::max_pool2d(h, 3, 2, 1);
  std::vector<ad::Var> c_levels;
  for (const auto& stage : stages_) {
    for (const auto& blk : stage) {
      ad::Var y = apply(blk.reduce, h, true);
      y = apply(blk.spatial, y, true);
      y = apply(blk.expand, y, false);
      ad::Var skip = blk.has_downsample ? apply(blk.downsample, h, false) : h;
      h = ad::relu(ad::add(y, skip));
    }
    c_levels.push_back(h);
  }
  std::vector<ad::Var> p(4);
  ad::Var top = apply(lateral_[3], c_levels[3], false);
  p[3] = apply(output_[3], top, false);
  for (int l = 2; l >= 0; --l) {
    ad::Var lat = apply(lateral_[l], c_levels[l], false);
    top = ad::add(lat, ad::upsample_nearest(top, lat.dim(2), lat.dim(3)));
    p[l] = apply(output_[l], top, false);
  }
  return FeatureMap{p, {4, 8, 16, 32}, channels_};
}

}  // namespace mcgaze
