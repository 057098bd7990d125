#pragma once

#include <string>
#include <vector>

#include "mcgaze/autograd.hpp"
#include "mcgaze/config.hpp"
#include "mcgaze/datamodel.hpp"
#include "mcgaze/params.hpp"

namespace mcgaze {

/// Per-frame feature maps. The toy backbone yields one level (stride 8); the
/// full backbone yields pyramid levels P2..P5 with strides {4, 8, 16, 32}.
struct FeatureMap {
  std::vector<ad::Var> levels;  // each [T, C, H', W']
  std::vector<int> strides;
  int channels = 0;

  int frames() const { return levels.empty() ? 0 : levels.front().dim(0); }
};

/// Packs clip frames into a normalized [T,3,H,W] tensor.
Tensor frames_to_tensor(const std::vector<Image>& frames);

class Backbone {
 public:
  /// Registers parameters under "backbone."; throws ConfigError when the
  /// configured image size does not fit the variant.
  Backbone(const ModelConfig& cfg, ParamStore& params, Initializer& init);

  /// frames: [T,3,H,W]. Frames are processed independently.
  FeatureMap extract(const ad::Var& frames) const;
  FeatureMap extract(const VideoClip& clip) const;

  BackboneVariant variant() const { return variant_; }
  int channels() const { return channels_; }

 private:
  struct ConvUnit {
    ad::Var weight;
    ad::Var bias;   // toy convs and FPN convs
    ad::Var scale;  // frozen-statistics batch norm, learnable affine
    ad::Var shift;
    int stride = 1;
    int padding = 0;
  };
  struct Bottleneck {
    ConvUnit reduce, spatial, expand;
    bool has_downsample = false;
    ConvUnit downsample;
  };

  ConvUnit make_conv(ParamStore& params, Initializer& init, const std::string& name, int ci, int co, int k,
                     int stride, bool with_bias, bool with_affine);
  ad::Var apply(const ConvUnit& u, const ad::Var& x, bool relu) const;
  FeatureMap extract_toy(const ad::Var& x) const;
  FeatureMap extract_full(const ad::Var& x) const;

  BackboneVariant variant_;
  int channels_;
  int image_size_;
  std::vector<ConvUnit> toy_blocks_;
  ConvUnit stem_;
  std::vector<std::vector<Bottleneck>> stages_;
  std::vector<ConvUnit> lateral_;
  std::vector<ConvUnit> output_;
};

/// Pyramid level (2..5) for a normalized box: floor(4 + log2(sqrt(w*h))),
/// clamped to the available levels.
int pyramid_level_for_box(const Box& box, int min_level = 2, int max_level = 5);

}  // namespace mcgaze
