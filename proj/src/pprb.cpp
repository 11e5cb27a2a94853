#include "repblend/pprb.hpp"

#include "repblend/serialization.hpp"

#include <cereal/archives/portable_binary.hpp>
#include <cereal/types/vector.hpp>

#include <fstream>
#include <stdexcept>

namespace repblend {

int assign_bin(const Matrix& map, const FeatureShape& shape, int level) {
  if (level < 0) throw std::invalid_argument("assign_bin: level must be non-negative");
  if (map.cols() != shape.positions()) throw std::invalid_argument("assign_bin: shape mismatch");
  const RowVector saliency = map.colwise().maxCoeff();
  Eigen::Index best = 0;
  for (Eigen::Index p = 1; p < saliency.size(); ++p) {
    if (saliency(p) > saliency(best)) best = p;
  }
  const Eigen::Index row = best / shape.width;
  const Eigen::Index col = best % shape.width;
  const Eigen::Index side = Eigen::Index{1} << level;
  const Eigen::Index row_bucket = row * side / shape.height;
  const Eigen::Index col_bucket = col * side / shape.width;
  return static_cast<int>(row_bucket * side + col_bucket);
}

PrototypeAccumulator::PrototypeAccumulator(Eigen::Index categories, FeatureShape shape, int level)
    : categories_(categories), shape_(shape), level_(level) {
  if (level < 0 || level > 3) throw std::invalid_argument("prototype level must be in [0, 3]");
  const auto slots = static_cast<std::size_t>(categories * bins_for_level(level));
  bin_sums_.assign(slots, Matrix::Zero(shape.channels, shape.positions()));
  bin_counts_.assign(slots, 0);
}

void PrototypeAccumulator::add(const CategoryFeatureMaps& maps, const Vector& labels) {
  if (maps.categories() != categories_ || labels.size() != categories_) {
    throw std::invalid_argument("prototype accumulator: category count mismatch");
  }
  const int bins = bins_for_level(level_);
  for (Eigen::Index c = 0; c < categories_; ++c) {
    if (labels(c) != 1.0) continue;
    const Matrix& map = maps.maps[static_cast<std::size_t>(c)];
    const int bin = assign_bin(map, shape_, level_);
    const auto slot = static_cast<std::size_t>(c * bins + bin);
    bin_sums_[slot] += map;
    ++bin_counts_[slot];
  }
}

PrototypeBank PrototypeAccumulator::finish(int epoch) const {
  PrototypeBank bank;
  bank.level = level_;
  bank.built_at_epoch = epoch;
  bank.shape = shape_;
  bank.categories = categories_;
  const int bins = bins_for_level(level_);
  const auto slots = static_cast<std::size_t>(categories_ * bins);
  bank.prototypes.assign(slots, Matrix::Zero(shape_.channels, shape_.positions()));
  bank.occupancy = bin_counts_;
  bank.usable.assign(slots, 0);
  bank.backfilled.assign(slots, 0);

  for (Eigen::Index c = 0; c < categories_; ++c) {
    Matrix total = Matrix::Zero(shape_.channels, shape_.positions());
    std::int64_t members = 0;
    for (int k = 0; k < bins; ++k) {
      total += bin_sums_[bank.index(c, k)];
      members += bin_counts_[bank.index(c, k)];
    }
    if (members == 0) continue;
    const Matrix global_mean = total / static_cast<Scalar>(members);
    for (int k = 0; k < bins; ++k) {
      const auto slot = bank.index(c, k);
      if (bin_counts_[slot] > 0) {
        bank.prototypes[slot] = bin_sums_[slot] / static_cast<Scalar>(bin_counts_[slot]);
      } else {
        bank.prototypes[slot] = global_mean;
        bank.backfilled[slot] = 1;
      }
      bank.usable[slot] = 1;
    }
  }
  return bank;
}

PrototypeBank build_prototypes(std::span<const CategoryFeatureMaps> features,
                               const LabelMatrix& labels, int level, int epoch) {
  if (static_cast<Eigen::Index>(features.size()) != labels.samples()) {
    throw std::invalid_argument("build_prototypes: one label row per feature set expected");
  }
  if (features.empty()) throw std::invalid_argument("build_prototypes: empty dataset");
  PrototypeAccumulator acc(labels.categories(), features.front().shape, level);
  for (std::size_t n = 0; n < features.size(); ++n) {
    acc.add(features[n], labels.row(static_cast<Eigen::Index>(n)));
  }
  return acc.finish(epoch);
}

void save_bank(const std::filesystem::path& path, const PrototypeBank& bank) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  cereal::PortableBinaryOutputArchive archive(out);
  archive(bank);
}

PrototypeBank load_bank(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  cereal::PortableBinaryInputArchive archive(in);
  PrototypeBank bank;
  archive(bank);
  return bank;
}

std::vector<Eigen::Index> eligible_categories(const CategoryFeatureMaps& maps,
                                              const Vector& labels, const PrototypeBank& bank) {
  if (maps.categories() != bank.categories || labels.size() != bank.categories) {
    throw std::invalid_argument("prototype blend: category count mismatch");
  }
  std::vector<Eigen::Index> eligible;
  for (Eigen::Index c = 0; c < bank.categories; ++c) {
    if (labels(c) != 0.0) continue;
    const int self_bin = assign_bin(maps.maps[static_cast<std::size_t>(c)], bank.shape, bank.level);
    for (int k = 0; k < bank.bins(); ++k) {
      if (k != self_bin && bank.is_usable(c, k)) {
        eligible.push_back(c);
        break;
      }
    }
  }
  return eligible;
}

PrototypeChoice choose_prototype(const CategoryFeatureMaps& maps, const Vector& labels,
                                 const PrototypeBank& bank, Rng& rng) {
  PrototypeChoice choice;
  const auto eligible = eligible_categories(maps, labels, bank);
  if (eligible.empty()) return choice;
  const Eigen::Index c = eligible[uniform_index(rng, eligible.size())];
  choice.category = c;
  choice.self_bin = assign_bin(maps.maps[static_cast<std::size_t>(c)], bank.shape, bank.level);
  std::vector<int> candidates;
  for (int k = 0; k < bank.bins(); ++k) {
    if (k != choice.self_bin && bank.is_usable(c, k)) candidates.push_back(k);
  }
  choice.bin = candidates[uniform_index(rng, candidates.size())];
  return choice;
}

PrototypeBlend apply_prototype_choice(const CategoryFeatureMaps& maps, const Vector& labels,
                                      const PrototypeBank& bank, const PrototypeChoice& choice,
                                      const Vector& beta) {
  PrototypeBlend out{maps, labels, choice};
  if (!choice.category) return out;
  const Eigen::Index c = *choice.category;
  const auto i = static_cast<std::size_t>(c);
  out.maps.maps[i] = beta(c) * maps.maps[i] + (1.0 - beta(c)) * bank.prototype(c, choice.bin);
  out.labels(c) = 1.0 - beta(c);
  return out;
}

PrototypeBlend blend_prototype(const CategoryFeatureMaps& maps, const Vector& labels,
                               const PrototypeBank& bank, const Vector& beta, Rng& rng) {
  return apply_prototype_choice(maps, labels, bank, choose_prototype(maps, labels, bank, rng),
                                beta);
}

PrototypeMask build_prototype_mask(const PrototypeBank& bank, const PrototypeChoice& choice,
                                   const Vector& beta) {
  PrototypeMask mask{Vector::Ones(bank.categories),
                     std::vector<Matrix>(static_cast<std::size_t>(bank.categories),
                                         Matrix::Zero(bank.shape.channels,
                                                      bank.shape.positions()))};
  if (choice.category) {
    const Eigen::Index c = *choice.category;
    mask.mask(c) = beta(c);
    mask.selected[static_cast<std::size_t>(c)] = bank.prototype(c, choice.bin);
  }
  return mask;
}

PrototypeBlend apply_prototype_mask(const CategoryFeatureMaps& maps, const Vector& labels,
                                    const PrototypeMask& mask) {
  PrototypeBlend out{maps, {}, {}};
  for (Eigen::Index c = 0; c < maps.categories(); ++c) {
    const auto i = static_cast<std::size_t>(c);
    out.maps.maps[i] = mask.mask(c) * maps.maps[i] + (1.0 - mask.mask(c)) * mask.selected[i];
  }
  out.labels = mask.mask.cwiseProduct(labels) + (Vector::Ones(labels.size()) - mask.mask);
  return out;
}

Vector prototype_blend_backward(const CategoryFeatureMaps& maps, const PrototypeBank& bank,
                                const PrototypeChoice& choice, const Vector& beta,
                                const std::vector<Matrix>& grad_blended_maps,
                                const Vector& grad_blended_labels, std::vector<Matrix>& grad_maps) {
  Vector grad_beta = Vector::Zero(bank.categories);
  for (Eigen::Index c = 0; c < maps.categories(); ++c) {
    const auto i = static_cast<std::size_t>(c);
    if (choice.category && *choice.category == c) {
      grad_maps[i] += beta(c) * grad_blended_maps[i];
      const Matrix diff = maps.maps[i] - bank.prototype(c, choice.bin);
      grad_beta(c) += (diff.array() * grad_blended_maps[i].array()).sum() - grad_blended_labels(c);
    } else {
      grad_maps[i] += grad_blended_maps[i];
    }
  }
  return grad_beta;
}

}  // namespace repblend
