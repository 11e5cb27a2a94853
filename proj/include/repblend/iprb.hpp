#pragma once

#include "repblend/blend_coefficients.hpp"
#include "repblend/csrl.hpp"
#include "repblend/labelspace.hpp"

#include <span>
#include <vector>

namespace repblend {

/// Entrywise weights applied to an image (`keep`) and to its partner
/// (`partner`). Each entry is (1, 0) or (alpha_c, 1 - alpha_c).
struct BlendMaskPair {
  Matrix keep;
  Matrix partner;
};

/// Blends where the own label is unknown and the partner's is positive.
BlendMaskPair build_blend_masks(const LabelMatrix& labels, const LabelMatrix& partner_labels,
                                const Vector& alpha);

struct InstanceBlend {
  CategoryFeatureMaps maps;
  Vector labels;
  std::vector<Eigen::Index> blended_categories;
};

/// Per-category form: transfers every positive known label of `other` onto
/// the matching unknown label of `self`.
InstanceBlend blend_instance(const CategoryFeatureMaps& self, const CategoryFeatureMaps& other,
                             const Vector& self_labels, const Vector& other_labels,
                             const Vector& alpha);

/// Partner of each batch index under batch reversal (i <-> N-1-i).
std::vector<Eigen::Index> pair_batch(Eigen::Index batch, Diagnostics* diag = nullptr);

LabelMatrix flip_rows(const LabelMatrix& labels, const std::vector<Eigen::Index>& partner);

struct BatchInstanceBlend {
  std::vector<CategoryFeatureMaps> maps;
  LabelMatrix labels;
  BlendMaskPair masks;
  std::vector<Eigen::Index> partner;
};

/// Mask form over a whole batch: F^ = M * F + flip_M * flip(F).
BatchInstanceBlend blend_batch(std::span<const CategoryFeatureMaps> maps, const LabelMatrix& labels,
                               const Vector& alpha, Diagnostics* diag = nullptr);

/// Back-propagates through `blend_batch`. Gradients for the source maps are
/// added into `grad_maps`; the return value is d loss / d alpha.
Vector blend_batch_backward(std::span<const CategoryFeatureMaps> maps,
                            const BatchInstanceBlend& blend,
                            std::span<const std::vector<Matrix>> grad_blended_maps,
                            const Matrix& grad_blended_labels,
                            std::vector<std::vector<Matrix>>& grad_maps);

}  // namespace repblend
