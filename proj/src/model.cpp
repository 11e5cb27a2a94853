#include "repblend/model.hpp"

#include "repblend/serialization.hpp"

#include <cereal/archives/portable_binary.hpp>
#include <cereal/types/utility.hpp>

#include <fstream>
#include <map>
#include <stdexcept>

namespace repblend {

Model::Model(const ModelConfig& config, const std::vector<std::string>& category_names,
             const Matrix& adjacency, std::uint64_t seed)
    : config_(config) {
  const auto categories = static_cast<Eigen::Index>(category_names.size());
  if (categories < 1) throw std::invalid_argument("model needs at least one category");
  Rng rng = derive_stream(seed, "model-init");
  backbone = Backbone(config.backbone, rng);

  CategoryEmbeddings embeddings =
      config.embedding_file.empty()
          ? CategoryEmbeddings::random(categories, config.embedding_dim, seed)
          : CategoryEmbeddings::load(config.embedding_file, category_names);
  if (embeddings.categories() != categories) {
    throw std::invalid_argument("embedding count does not match the category count");
  }
  decoupler = SemanticDecoupler(backbone.output_shape(), std::move(embeddings), config.joint_dim, rng);
  head = GatedPropagationHead(categories, backbone.output_shape().channels, adjacency,
                              config.propagation_steps, rng);
  alpha = BlendCoefficients(categories, config.alpha_init);
  beta = BlendCoefficients(categories, config.beta_init);

  if (!config.backbone.pretrained_weights.empty()) {
    std::ifstream in(config.backbone.pretrained_weights, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + config.backbone.pretrained_weights);
    cereal::PortableBinaryInputArchive archive(in);
    std::vector<std::pair<std::string, Matrix>> weights;
    archive(weights);
    std::map<std::string, Param*> by_name;
    for (auto& p : backbone.parameters()) by_name[p.name] = p.param;
    for (auto& [name, value] : weights) {
      auto it = by_name.find(name);
      if (it == by_name.end()) continue;
      if (it->second->value.rows() != value.rows() || it->second->value.cols() != value.cols()) {
        throw std::invalid_argument("pretrained weight has the wrong shape: " + name);
      }
      it->second->value = value;
    }
  }
}

std::vector<NamedParam> Model::parameters() {
  std::vector<NamedParam> params = backbone.parameters();
  for (auto& p : decoupler.parameters()) params.push_back(p);
  for (auto& p : head.parameters()) params.push_back(p);
  params.push_back({"blend.alpha", &alpha.raw});
  params.push_back({"blend.beta", &beta.raw});
  return params;
}

std::vector<NamedParam> Model::trainable_parameters() {
  std::vector<NamedParam> params;
  const auto frozen = static_cast<std::size_t>(config_.backbone.freeze_depth);
  const auto backbone_params = backbone.parameters();
  // Two entries (weight, bias) per stage.
  for (std::size_t i = 2 * frozen; i < backbone_params.size(); ++i) params.push_back(backbone_params[i]);
  for (auto& p : decoupler.parameters()) params.push_back(p);
  for (auto& p : head.parameters()) params.push_back(p);
  params.push_back({"blend.alpha", &alpha.raw});
  params.push_back({"blend.beta", &beta.raw});
  return params;
}

void Model::zero_grad() {
  for (auto& p : parameters()) p.param->zero_grad();
}

CategoryFeatureMaps Model::feature_maps(const Matrix& image) const {
  return decoupler.decouple(backbone.extract(image));
}

CategoryVectors Model::category_vectors(const Matrix& image) const {
  const GlobalFeatureMap f = backbone.extract(image);
  if (config_.pooling == Pooling::Max) return pool(decoupler.decouple(f), config_.pooling);
  return pool_attended(f, decoupler.attention(f), config_.pooling);
}

Vector Model::predict(const Image& image) const {
  return head.classify(category_vectors(image.to_matrix()));
}

Matrix Model::predict_all(const std::vector<Image>& images, std::size_t chunk) const {
  Matrix scores(static_cast<Eigen::Index>(images.size()), categories());
  std::vector<CategoryVectors> vectors;
  for (std::size_t start = 0; start < images.size(); start += chunk) {
    const std::size_t end = std::min(images.size(), start + chunk);
    vectors.clear();
    for (std::size_t i = start; i < end; ++i) {
      vectors.push_back(category_vectors(images[i].to_matrix()));
    }
    scores.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) =
        head.forward(vectors);
  }
  return scores;
}

}  // namespace repblend
