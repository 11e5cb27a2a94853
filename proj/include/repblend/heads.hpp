#pragma once

#include "repblend/csrl.hpp"
#include "repblend/labelspace.hpp"
#include "repblend/optim.hpp"
#include "repblend/random.hpp"

#include <span>
#include <vector>

namespace repblend {

enum class AdjacencyKind { Uniform, Cooccurrence, Identity };

Matrix uniform_adjacency(Eigen::Index categories);
Matrix identity_adjacency(Eigen::Index categories);
/// Row-normalised co-occurrence counts over known positive labels. The
/// diagonal counts each category's own positives, so every row with data
/// has mass; empty rows fall back to uniform.
Matrix cooccurrence_adjacency(const LabelMatrix& labels);

/// Throws unless entries are non-negative and rows sum to 1 within 1e-6.
void check_row_stochastic(const Matrix& adjacency);

struct PropagationStep {
  Matrix state;    // D x (C * batch)
  Matrix message;  // D x (C * batch)
  Matrix update_gate;
  Matrix reset_gate;
  Matrix candidate;
};

struct HeadCache {
  Eigen::Index batch = 0;
  std::vector<PropagationStep> steps;
  Matrix final_state;  // D x (C * batch)
  Matrix scores;       // batch x C
};

/// T steps of gated message passing over a category graph, then one linear
/// classifier per category and a sigmoid. T = 0 classifies the input vectors
/// directly.
class GatedPropagationHead {
 public:
  GatedPropagationHead() = default;
  GatedPropagationHead(Eigen::Index categories, Eigen::Index channels, Matrix adjacency, int steps,
                       Rng& rng, ParamInit init = ParamInit::Random);

  Eigen::Index categories() const { return adjacency_.rows(); }
  Eigen::Index channels() const { return update_w.value.rows(); }
  int steps() const { return steps_; }
  const Matrix& adjacency() const { return adjacency_; }

  Vector classify(const CategoryVectors& vectors) const;
  /// Scores for each input, one row per element of `vectors`.
  Matrix forward(std::span<const CategoryVectors> vectors, HeadCache* cache = nullptr) const;
  /// Accumulates parameter gradients from d loss / d scores and returns
  /// d loss / d vectors.
  std::vector<Matrix> backward(const HeadCache& cache, const Matrix& grad_scores);

  std::vector<NamedParam> parameters();

  Param update_w, update_u, update_b;
  Param reset_w, reset_u, reset_b;
  Param candidate_w, candidate_u, candidate_b;
  Param classifier_w;  // C x D
  Param classifier_b;  // C x 1

 private:
  Matrix adjacency_;
  int steps_ = 0;

  Matrix propagate_messages(const Matrix& state, Eigen::Index batch) const;
  Matrix propagate_messages_backward(const Matrix& grad_message, Eigen::Index batch) const;
};

inline constexpr Scalar kScoreClamp = 1e-7;

struct PartialBce {
  Scalar loss = 0.0;
  Vector grad_scores;  // d loss / d s
  Vector grad_labels;  // d loss / d y, non-zero only on soft entries
};

/// Weighted binary cross-entropy over known entries. Hard entries weigh 1;
/// a soft entry y in (0, 1) is both target and weight. Unknown entries are
/// skipped and an all-unknown row gives 0.
PartialBce partial_bce_with_grad(const Vector& labels, const Vector& scores,
                                 Diagnostics* diag = nullptr);
Scalar partial_bce(const Vector& labels, const Vector& scores, Diagnostics* diag = nullptr);

struct PathBatch {
  LabelMatrix labels;
  Matrix scores;  // rows align with labels
};

/// Sum over samples of the clean-path loss plus, when present, the
/// instance- and prototype-blend paths with equal weight.
Scalar classification_loss(const PathBatch& clean, const PathBatch* instance = nullptr,
                           const PathBatch* prototype = nullptr, Diagnostics* diag = nullptr);

struct LossConfig {
  Scalar contrastive_weight = 0.05;
  int blend_start_epoch = 5;
  int prototype_refresh_period = 5;

  void validate() const;
};

Scalar total_loss(Scalar classification, Scalar contrastive, const LossConfig& config);

}  // namespace repblend
