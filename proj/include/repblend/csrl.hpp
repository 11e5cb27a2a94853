#pragma once

#include "repblend/labelspace.hpp"
#include "repblend/optim.hpp"
#include "repblend/random.hpp"
#include "repblend/types.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace repblend {

struct FeatureShape {
  Eigen::Index channels = 0;
  Eigen::Index height = 0;
  Eigen::Index width = 0;

  Eigen::Index positions() const { return height * width; }
  bool operator==(const FeatureShape&) const = default;
};

/// Backbone output. Column p of `data` is the channel vector at row-major
/// position p = h * width + w.
struct GlobalFeatureMap {
  FeatureShape shape;
  Matrix data;  // channels x positions
};

enum class EmbeddingSource { RandomInit, FileLoaded };

struct CategoryEmbeddings {
  Matrix vectors;  // categories x embedding dim
  EmbeddingSource source = EmbeddingSource::RandomInit;
  std::vector<std::string> names;

  Eigen::Index categories() const { return vectors.rows(); }
  Eigen::Index dim() const { return vectors.cols(); }

  static CategoryEmbeddings random(Eigen::Index categories, Eigen::Index dim, std::uint64_t seed);

  /// Whitespace-separated rows: category name followed by the vector. When
  /// `order` is non-empty the rows are rearranged to match it.
  static CategoryEmbeddings load(const std::filesystem::path& path,
                                 const std::vector<std::string>& order = {});
  static CategoryEmbeddings parse(const std::string& text,
                                  const std::vector<std::string>& order = {});
};

/// One D x positions map per category plus the attention that produced it.
struct CategoryFeatureMaps {
  FeatureShape shape;
  std::vector<Matrix> maps;
  Matrix attention;  // categories x positions, rows sum to one

  Eigen::Index categories() const { return static_cast<Eigen::Index>(maps.size()); }
};

using CategoryVectors = Matrix;  // categories x channels

enum class Pooling { Sum, Mean, Max };

/// Softmax each row of `logits` over positions and reweight `f` with it.
CategoryFeatureMaps apply_attention(const GlobalFeatureMap& f, const Matrix& logits);
Matrix softmax_rows(const Matrix& logits);
/// One map per attention row: F_c = f diag(attention_c).
CategoryFeatureMaps attend(const GlobalFeatureMap& f, const Matrix& attention);
/// pool(attend(f, attention)) without building the maps; Sum and Mean only.
CategoryVectors pool_attended(const GlobalFeatureMap& f, const Matrix& attention, Pooling pooling);

CategoryVectors pool(const CategoryFeatureMaps& maps, Pooling pooling = Pooling::Sum);

/// Gradient of `pool` with respect to each category map.
std::vector<Matrix> pool_backward(const CategoryFeatureMaps& maps, const Matrix& grad_vectors,
                                  Pooling pooling = Pooling::Sum);

struct DecoupleCache {
  Matrix projected_features;    // joint x positions
  Matrix projected_embeddings;  // joint x categories
  std::vector<Matrix> joint;    // per category, tanh activations (joint x positions)
};

enum class ParamInit { Random, Zero };

/// Embedding-guided attention: a low-rank bilinear joint transform
/// tanh((Wf f) * (We e_c)) scored by a linear layer gives per-position logits.
class SemanticDecoupler {
 public:
  SemanticDecoupler() = default;
  SemanticDecoupler(FeatureShape shape, CategoryEmbeddings embeddings, Eigen::Index joint_dim,
                    Rng& rng, ParamInit init = ParamInit::Random);

  const FeatureShape& shape() const { return shape_; }
  Eigen::Index categories() const { return embeddings_.categories(); }
  Eigen::Index joint_dim() const { return feature_proj.value.rows(); }
  const CategoryEmbeddings& embeddings() const { return embeddings_; }

  Matrix attention_logits(const GlobalFeatureMap& f, DecoupleCache* cache = nullptr) const;
  /// Softmaxed attention, categories x positions.
  Matrix attention(const GlobalFeatureMap& f, DecoupleCache* cache = nullptr) const;
  CategoryFeatureMaps decouple(const GlobalFeatureMap& f, DecoupleCache* cache = nullptr) const;

  /// Accumulates parameter gradients and returns d loss / d f.
  Matrix backward(const GlobalFeatureMap& f, const CategoryFeatureMaps& out,
                  const DecoupleCache& cache, const std::vector<Matrix>& grad_maps);
  /// Same, for vectors produced by pool_attended.
  Matrix backward_pooled(const GlobalFeatureMap& f, const Matrix& attention,
                         const DecoupleCache& cache, const Matrix& grad_vectors, Pooling pooling);

  std::vector<NamedParam> parameters();

  Param feature_proj;  // joint x channels
  Param embed_proj;    // joint x embedding dim
  Param scorer;        // joint x 1

 private:
  void backward_attention(const Matrix& attention, const DecoupleCache& cache,
                          const Matrix& grad_attention, const GlobalFeatureMap& f, Matrix& grad_f);

  FeatureShape shape_;
  CategoryEmbeddings embeddings_;
};

/// 1 - cos(u, v) for a positive pair, 1 + cos(u, v) otherwise. A zero vector
/// counts as cos = 0.
Scalar contrastive_pair_loss(const Vector& u, const Vector& v, bool both_positive,
                             Diagnostics* diag = nullptr);

struct ContrastiveOptions {
  // Restrict the "otherwise" branch to pairs where both labels are known.
  bool known_pairs_only = false;
};

/// Mean of the pair loss over ordered image pairs n != m and all categories.
/// When `grad` is given it receives d loss / d vectors for each image.
Scalar contrastive_batch_loss(std::span<const CategoryVectors> vectors, const LabelMatrix& labels,
                              const ContrastiveOptions& options = {}, Diagnostics* diag = nullptr,
                              std::vector<Matrix>* grad = nullptr);

}  // namespace repblend
