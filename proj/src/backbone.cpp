#include "repblend/backbone.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace repblend {

Matrix Image::to_matrix() const {
  Matrix out(channels, height * width);
  for (Eigen::Index c = 0; c < channels; ++c) {
    for (Eigen::Index p = 0; p < height * width; ++p) {
      out(c, p) = static_cast<Scalar>(pixels[static_cast<std::size_t>(c * height * width + p)]) /
                  255.0;
    }
  }
  return out;
}

Matrix flip_horizontal(const Matrix& image, Eigen::Index height, Eigen::Index width) {
  Matrix out(image.rows(), image.cols());
  for (Eigen::Index h = 0; h < height; ++h) {
    for (Eigen::Index w = 0; w < width; ++w) {
      out.col(h * width + w) = image.col(h * width + (width - 1 - w));
    }
  }
  return out;
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 3) throw std::invalid_argument("write_ppm: RGB images only");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  std::vector<char> interleaved(static_cast<std::size_t>(3 * image.height * image.width));
  for (Eigen::Index h = 0; h < image.height; ++h) {
    for (Eigen::Index w = 0; w < image.width; ++w) {
      for (Eigen::Index c = 0; c < 3; ++c) {
        interleaved[static_cast<std::size_t>((h * image.width + w) * 3 + c)] =
            static_cast<char>(image.at(c, h, w));
      }
    }
  }
  out.write(interleaved.data(), static_cast<std::streamsize>(interleaved.size()));
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string magic;
  int width = 0, height = 0, maxval = 0;
  in >> magic >> width >> height >> maxval;
  if (magic != "P6" || maxval != 255 || width <= 0 || height <= 0) {
    throw std::runtime_error("unsupported PPM: " + path.string());
  }
  in.get();
  Image image{3, height, width, std::vector<std::uint8_t>(static_cast<std::size_t>(3 * width * height))};
  std::vector<char> interleaved(image.pixels.size());
  if (!in.read(interleaved.data(), static_cast<std::streamsize>(interleaved.size()))) {
    throw std::runtime_error("truncated PPM: " + path.string());
  }
  for (Eigen::Index h = 0; h < height; ++h) {
    for (Eigen::Index w = 0; w < width; ++w) {
      for (Eigen::Index c = 0; c < 3; ++c) {
        image.at(c, h, w) = static_cast<std::uint8_t>(
            interleaved[static_cast<std::size_t>((h * width + w) * 3 + c)]);
      }
    }
  }
  return image;
}

BackboneConfig BackboneConfig::desk() {
  BackboneConfig config;
  config.stages = {{8, 3, 2, 0, true}, {16, 3, 2, 0, true}, {32, 3, 2, 0, true}, {64, 3, 1, 1, true}};
  return config;
}

FeatureShape BackboneConfig::output_shape() const {
  Eigen::Index channels = input_channels;
  Eigen::Index height = input_height;
  Eigen::Index width = input_width;
  for (const auto& stage : stages) {
    height = (height + 2 * stage.padding - stage.kernel) / stage.stride + 1;
    width = (width + 2 * stage.padding - stage.kernel) / stage.stride + 1;
    channels = stage.channels;
  }
  return {channels, height, width};
}

void BackboneConfig::validate() const {
  if (input_channels <= 0 || input_height <= 0 || input_width <= 0) {
    throw std::invalid_argument("backbone input size must be positive");
  }
  if (stages.empty()) throw std::invalid_argument("backbone needs at least one stage");
  Eigen::Index height = input_height;
  Eigen::Index width = input_width;
  for (const auto& stage : stages) {
    if (stage.channels <= 0 || stage.kernel <= 0 || stage.stride <= 0 || stage.padding < 0) {
      throw std::invalid_argument("invalid backbone stage");
    }
    if (height + 2 * stage.padding < stage.kernel || width + 2 * stage.padding < stage.kernel) {
      throw std::invalid_argument("backbone stage kernel exceeds its input");
    }
    height = (height + 2 * stage.padding - stage.kernel) / stage.stride + 1;
    width = (width + 2 * stage.padding - stage.kernel) / stage.stride + 1;
  }
  if (freeze_depth < 0 || freeze_depth > static_cast<int>(stages.size())) {
    throw std::invalid_argument("freeze depth outside the stage range");
  }
}

ConvLayer::ConvLayer(Eigen::Index in_channels, Eigen::Index in_height, Eigen::Index in_width,
                     const ConvStage& stage, Rng& rng, ParamInit init)
    : in_channels_(in_channels),
      in_height_(in_height),
      in_width_(in_width),
      kernel_(stage.kernel),
      stride_(stage.stride),
      padding_(stage.padding),
      relu_(stage.relu) {
  out_height_ = (in_height + 2 * padding_ - kernel_) / stride_ + 1;
  out_width_ = (in_width + 2 * padding_ - kernel_) / stride_ + 1;
  const Eigen::Index fan_in = in_channels * kernel_ * kernel_;
  Matrix w = Matrix::Zero(stage.channels, fan_in);
  if (init == ParamInit::Random) {
    const Scalar stddev = std::sqrt(2.0 / static_cast<Scalar>(fan_in));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = stddev * standard_normal(rng);
  }
  weight = Param(std::move(w));
  bias = Param(Matrix::Zero(stage.channels, 1), false);
}

Matrix ConvLayer::im2col(const Matrix& input) const {
  Matrix columns = Matrix::Zero(in_channels_ * kernel_ * kernel_, out_height_ * out_width_);
  for (Eigen::Index c = 0; c < in_channels_; ++c) {
    for (Eigen::Index ky = 0; ky < kernel_; ++ky) {
      for (Eigen::Index kx = 0; kx < kernel_; ++kx) {
        const Eigen::Index row = (c * kernel_ + ky) * kernel_ + kx;
        for (Eigen::Index oy = 0; oy < out_height_; ++oy) {
          const Eigen::Index iy = oy * stride_ + ky - padding_;
          if (iy < 0 || iy >= in_height_) continue;
          for (Eigen::Index ox = 0; ox < out_width_; ++ox) {
            const Eigen::Index ix = ox * stride_ + kx - padding_;
            if (ix < 0 || ix >= in_width_) continue;
            columns(row, oy * out_width_ + ox) = input(c, iy * in_width_ + ix);
          }
        }
      }
    }
  }
  return columns;
}

Matrix ConvLayer::col2im(const Matrix& columns) const {
  Matrix input = Matrix::Zero(in_channels_, in_height_ * in_width_);
  for (Eigen::Index c = 0; c < in_channels_; ++c) {
    for (Eigen::Index ky = 0; ky < kernel_; ++ky) {
      for (Eigen::Index kx = 0; kx < kernel_; ++kx) {
        const Eigen::Index row = (c * kernel_ + ky) * kernel_ + kx;
        for (Eigen::Index oy = 0; oy < out_height_; ++oy) {
          const Eigen::Index iy = oy * stride_ + ky - padding_;
          if (iy < 0 || iy >= in_height_) continue;
          for (Eigen::Index ox = 0; ox < out_width_; ++ox) {
            const Eigen::Index ix = ox * stride_ + kx - padding_;
            if (ix < 0 || ix >= in_width_) continue;
            input(c, iy * in_width_ + ix) += columns(row, oy * out_width_ + ox);
          }
        }
      }
    }
  }
  return input;
}

Matrix ConvLayer::forward(const Matrix& input, ConvCache* cache) const {
  if (input.rows() != in_channels_ || input.cols() != in_height_ * in_width_) {
    throw std::invalid_argument("conv layer: input shape mismatch");
  }
  Matrix columns = im2col(input);
  Matrix pre = weight.value * columns;
  pre.colwise() += bias.value.col(0);
  Matrix out = relu_ ? Matrix(pre.cwiseMax(0.0)) : pre;
  if (cache != nullptr) {
    cache->columns = std::move(columns);
    cache->pre_activation = std::move(pre);
  }
  return out;
}

Matrix ConvLayer::backward(const ConvCache& cache, const Matrix& grad_output, bool need_input_grad,
                           bool accumulate_params) {
  Matrix grad_pre = grad_output;
  if (relu_) grad_pre = (cache.pre_activation.array() > 0.0).select(grad_output, 0.0);
  if (accumulate_params) {
    weight.grad.noalias() += grad_pre * cache.columns.transpose();
    bias.grad += grad_pre.rowwise().sum();
  }
  if (!need_input_grad) return {};
  return col2im(weight.value.transpose() * grad_pre);
}

Backbone::Backbone(BackboneConfig config, Rng& rng, ParamInit init) : config_(std::move(config)) {
  config_.validate();
  Eigen::Index channels = config_.input_channels;
  Eigen::Index height = config_.input_height;
  Eigen::Index width = config_.input_width;
  for (const auto& stage : config_.stages) {
    layers_.emplace_back(channels, height, width, stage, rng, init);
    channels = stage.channels;
    height = layers_.back().out_height();
    width = layers_.back().out_width();
  }
}

GlobalFeatureMap Backbone::extract(const Image& image) const {
  if (image.channels != config_.input_channels || image.height != config_.input_height ||
      image.width != config_.input_width) {
    throw std::invalid_argument("extract: image size does not match the backbone input");
  }
  return extract(image.to_matrix());
}

GlobalFeatureMap Backbone::extract(const Matrix& image, BackboneCache* cache) const {
  if (image.rows() != config_.input_channels ||
      image.cols() != config_.input_height * config_.input_width) {
    throw std::invalid_argument("extract: image size does not match the backbone input");
  }
  if (cache != nullptr) cache->layers.assign(layers_.size(), ConvCache{});
  Matrix activation = image;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    activation = layers_[i].forward(activation, cache != nullptr ? &cache->layers[i] : nullptr);
  }
  return {output_shape(), std::move(activation)};
}

void Backbone::backward(const BackboneCache& cache, const Matrix& grad_features) {
  Matrix grad = grad_features;
  const int frozen = config_.freeze_depth;
  for (int i = static_cast<int>(layers_.size()) - 1; i >= frozen; --i) {
    const bool need_input = i > frozen;
    grad = layers_[static_cast<std::size_t>(i)].backward(cache.layers[static_cast<std::size_t>(i)],
                                                         grad, need_input, true);
  }
}

std::vector<NamedParam> Backbone::parameters() {
  std::vector<NamedParam> params;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    params.push_back({"backbone." + std::to_string(i) + ".weight", &layers_[i].weight});
    params.push_back({"backbone." + std::to_string(i) + ".bias", &layers_[i].bias});
  }
  return params;
}

}  // namespace repblend
