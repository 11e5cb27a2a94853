#include "repblend/iprb.hpp"

#include <stdexcept>

namespace repblend {

BlendMaskPair build_blend_masks(const LabelMatrix& labels, const LabelMatrix& partner_labels,
                                const Vector& alpha) {
  if (labels.samples() != partner_labels.samples() ||
      labels.categories() != partner_labels.categories()) {
    throw std::invalid_argument("blend masks: label shapes differ");
  }
  if (alpha.size() != labels.categories()) {
    throw std::invalid_argument("blend masks: one alpha per category expected");
  }
  BlendMaskPair masks{Matrix::Ones(labels.samples(), labels.categories()),
                      Matrix::Zero(labels.samples(), labels.categories())};
  for (Eigen::Index n = 0; n < labels.samples(); ++n) {
    for (Eigen::Index c = 0; c < labels.categories(); ++c) {
      if (labels(n, c) == 0.0 && partner_labels(n, c) == 1.0) {
        masks.keep(n, c) = alpha(c);
        masks.partner(n, c) = 1.0 - alpha(c);
      }
    }
  }
  return masks;
}

InstanceBlend blend_instance(const CategoryFeatureMaps& self, const CategoryFeatureMaps& other,
                             const Vector& self_labels, const Vector& other_labels,
                             const Vector& alpha) {
  if (self.categories() != other.categories() || !(self.shape == other.shape) ||
      self_labels.size() != self.categories() || other_labels.size() != self.categories() ||
      alpha.size() != self.categories()) {
    throw std::invalid_argument("blend_instance: shape mismatch");
  }
  InstanceBlend out{self, self_labels, {}};
  for (Eigen::Index c = 0; c < self.categories(); ++c) {
    if (self_labels(c) == 0.0 && other_labels(c) == 1.0) {
      const auto i = static_cast<std::size_t>(c);
      out.maps.maps[i] = alpha(c) * self.maps[i] + (1.0 - alpha(c)) * other.maps[i];
      out.labels(c) = 1.0 - alpha(c);
      out.blended_categories.push_back(c);
    }
  }
  return out;
}

std::vector<Eigen::Index> pair_batch(Eigen::Index batch, Diagnostics* diag) {
  if (batch < 2 && diag != nullptr) ++diag->singleton_batches;
  std::vector<Eigen::Index> partner(static_cast<std::size_t>(std::max<Eigen::Index>(batch, 0)));
  for (Eigen::Index i = 0; i < batch; ++i) partner[static_cast<std::size_t>(i)] = batch - 1 - i;
  return partner;
}

LabelMatrix flip_rows(const LabelMatrix& labels, const std::vector<Eigen::Index>& partner) {
  return labels.select_rows(partner);
}

BatchInstanceBlend blend_batch(std::span<const CategoryFeatureMaps> maps, const LabelMatrix& labels,
                               const Vector& alpha, Diagnostics* diag) {
  const auto batch = static_cast<Eigen::Index>(maps.size());
  if (labels.samples() != batch) throw std::invalid_argument("blend_batch: label rows != batch");
  BatchInstanceBlend out;
  out.partner = pair_batch(batch, diag);
  const LabelMatrix partner_labels = flip_rows(labels, out.partner);
  out.masks = build_blend_masks(labels, partner_labels, alpha);

  Matrix blended_labels = out.masks.keep.cwiseProduct(labels.values()) +
                          out.masks.partner.cwiseProduct(partner_labels.values());
  out.labels = LabelMatrix(std::move(blended_labels));

  out.maps.reserve(maps.size());
  for (Eigen::Index n = 0; n < batch; ++n) {
    const auto& self = maps[static_cast<std::size_t>(n)];
    const auto& other = maps[static_cast<std::size_t>(out.partner[static_cast<std::size_t>(n)])];
    CategoryFeatureMaps blended;
    blended.shape = self.shape;
    blended.attention = self.attention;
    blended.maps.reserve(self.maps.size());
    for (Eigen::Index c = 0; c < self.categories(); ++c) {
      const auto i = static_cast<std::size_t>(c);
      blended.maps.push_back(out.masks.keep(n, c) * self.maps[i] +
                             out.masks.partner(n, c) * other.maps[i]);
    }
    out.maps.push_back(std::move(blended));
  }
  return out;
}

Vector blend_batch_backward(std::span<const CategoryFeatureMaps> maps,
                            const BatchInstanceBlend& blend,
                            std::span<const std::vector<Matrix>> grad_blended_maps,
                            const Matrix& grad_blended_labels,
                            std::vector<std::vector<Matrix>>& grad_maps) {
  const auto batch = static_cast<Eigen::Index>(maps.size());
  const Eigen::Index categories = blend.masks.keep.cols();
  Vector grad_alpha = Vector::Zero(categories);
  for (Eigen::Index n = 0; n < batch; ++n) {
    const auto m = blend.partner[static_cast<std::size_t>(n)];
    const auto& g = grad_blended_maps[static_cast<std::size_t>(n)];
    for (Eigen::Index c = 0; c < categories; ++c) {
      const auto i = static_cast<std::size_t>(c);
      grad_maps[static_cast<std::size_t>(n)][i] += blend.masks.keep(n, c) * g[i];
      if (blend.masks.partner(n, c) != 0.0) {
        grad_maps[static_cast<std::size_t>(m)][i] += blend.masks.partner(n, c) * g[i];
        const Matrix diff = maps[static_cast<std::size_t>(n)].maps[i] -
                            maps[static_cast<std::size_t>(m)].maps[i];
        grad_alpha(c) += (diff.array() * g[i].array()).sum() - grad_blended_labels(n, c);
      }
    }
  }
  return grad_alpha;
}

}  // namespace repblend
