#pragma once

#include "repblend/csrl.hpp"
#include "repblend/optim.hpp"
#include "repblend/random.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace repblend {

/// 8-bit image in channel-major (CHW) order.
struct Image {
  Eigen::Index channels = 3;
  Eigen::Index height = 0;
  Eigen::Index width = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(Eigen::Index c, Eigen::Index h, Eigen::Index w) {
    return pixels[static_cast<std::size_t>((c * height + h) * width + w)];
  }
  std::uint8_t at(Eigen::Index c, Eigen::Index h, Eigen::Index w) const {
    return pixels[static_cast<std::size_t>((c * height + h) * width + w)];
  }

  /// channels x (height * width), scaled to [0, 1].
  Matrix to_matrix() const;
};

Matrix flip_horizontal(const Matrix& image, Eigen::Index height, Eigen::Index width);

void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);

struct ConvStage {
  Eigen::Index channels = 0;
  Eigen::Index kernel = 3;
  Eigen::Index stride = 1;
  Eigen::Index padding = 0;
  bool relu = true;
};

struct BackboneConfig {
  Eigen::Index input_channels = 3;
  Eigen::Index input_height = 64;
  Eigen::Index input_width = 64;
  std::vector<ConvStage> stages;
  // Stages with index < freeze_depth keep their weights fixed.
  int freeze_depth = 0;
  std::string pretrained_weights;

  /// Four stages, 64x64 RGB in, 64 x 7 x 7 out.
  static BackboneConfig desk();

  FeatureShape output_shape() const;
  void validate() const;
};

struct ConvCache {
  Matrix columns;
  Matrix pre_activation;
};

class ConvLayer {
 public:
  ConvLayer() = default;
  ConvLayer(Eigen::Index in_channels, Eigen::Index in_height, Eigen::Index in_width,
            const ConvStage& stage, Rng& rng, ParamInit init);

  Eigen::Index out_height() const { return out_height_; }
  Eigen::Index out_width() const { return out_width_; }

  Matrix forward(const Matrix& input, ConvCache* cache = nullptr) const;
  /// Accumulates weight gradients; returns d loss / d input when requested.
  Matrix backward(const ConvCache& cache, const Matrix& grad_output, bool need_input_grad,
                  bool accumulate_params);

  Param weight;  // out x (in * k * k)
  Param bias;    // out x 1

 private:
  Eigen::Index in_channels_ = 0, in_height_ = 0, in_width_ = 0;
  Eigen::Index kernel_ = 3, stride_ = 1, padding_ = 0;
  Eigen::Index out_height_ = 0, out_width_ = 0;
  bool relu_ = true;

  Matrix im2col(const Matrix& input) const;
  Matrix col2im(const Matrix& columns) const;
};

struct BackboneCache {
  std::vector<ConvCache> layers;
};

class Backbone {
 public:
  Backbone() = default;
  Backbone(BackboneConfig config, Rng& rng, ParamInit init = ParamInit::Random);

  const BackboneConfig& config() const { return config_; }
  FeatureShape output_shape() const { return config_.output_shape(); }

  GlobalFeatureMap extract(const Image& image) const;
  GlobalFeatureMap extract(const Matrix& image, BackboneCache* cache = nullptr) const;
  void backward(const BackboneCache& cache, const Matrix& grad_features);

  std::vector<ConvLayer>& layers() { return layers_; }
  std::vector<NamedParam> parameters();

 private:
  BackboneConfig config_;
  std::vector<ConvLayer> layers_;
};

}  // namespace repblend
