#pragma once

#include "repblend/backbone.hpp"
#include "repblend/blend_coefficients.hpp"
#include "repblend/csrl.hpp"
#include "repblend/heads.hpp"

#include <string>
#include <vector>

namespace repblend {

struct ModelConfig {
  BackboneConfig backbone = BackboneConfig::desk();
  Eigen::Index embedding_dim = 32;
  Eigen::Index joint_dim = 64;
  Pooling pooling = Pooling::Sum;
  int propagation_steps = 3;
  AdjacencyKind adjacency = AdjacencyKind::Uniform;
  std::string embedding_file;
  int prototype_level = 1;
  Scalar alpha_init = 0.5;
  Scalar beta_init = 0.5;
};

/// Backbone, semantic decoupling, gated head and the two blend-ratio
/// vectors, all owned together so they can be checkpointed by name.
class Model {
 public:
  Model() = default;
  Model(const ModelConfig& config, const std::vector<std::string>& category_names,
        const Matrix& adjacency, std::uint64_t seed);

  Eigen::Index categories() const { return head.categories(); }
  const ModelConfig& config() const { return config_; }

  /// Every parameter, including frozen backbone stages.
  std::vector<NamedParam> parameters();
  /// Parameters the optimiser updates.
  std::vector<NamedParam> trainable_parameters();
  void zero_grad();

  CategoryFeatureMaps feature_maps(const Matrix& image) const;
  /// Pooled clean-path vectors for one image.
  CategoryVectors category_vectors(const Matrix& image) const;
  Vector predict(const Image& image) const;
  /// Clean-path scores, one row per image, evaluated in chunks.
  Matrix predict_all(const std::vector<Image>& images, std::size_t chunk = 64) const;

  Backbone backbone;
  SemanticDecoupler decoupler;
  GatedPropagationHead head;
  BlendCoefficients alpha;
  BlendCoefficients beta;

 private:
  ModelConfig config_;
};

}  // namespace repblend
