#pragma once

#include "repblend/blend_coefficients.hpp"
#include "repblend/csrl.hpp"
#include "repblend/labelspace.hpp"
#include "repblend/random.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace repblend {

inline int bins_for_level(int level) { return 1 << (2 * level); }

/// Spatial bin of a category map: channel-max saliency, first row-major
/// argmax, then a 2^K x 2^K grid lookup.
int assign_bin(const Matrix& map, const FeatureShape& shape, int level);

/// Per-category, per-bin mean feature maps of positive samples.
struct PrototypeBank {
  int level = 1;  // K
  int built_at_epoch = 0;
  FeatureShape shape;
  Eigen::Index categories = 0;
  std::vector<Matrix> prototypes;  // index category * bins + bin
  std::vector<std::int64_t> occupancy;
  std::vector<std::uint8_t> usable;
  std::vector<std::uint8_t> backfilled;

  int bins() const { return bins_for_level(level); }
  std::size_t index(Eigen::Index category, int bin) const {
    return static_cast<std::size_t>(category * bins() + bin);
  }
  const Matrix& prototype(Eigen::Index category, int bin) const {
    return prototypes[index(category, bin)];
  }
  bool is_usable(Eigen::Index category, int bin) const { return usable[index(category, bin)] != 0; }

  bool operator==(const PrototypeBank&) const = default;
};

/// Streaming form of `build_prototypes` for dataset passes that cannot hold
/// every feature map at once.
class PrototypeAccumulator {
 public:
  PrototypeAccumulator(Eigen::Index categories, FeatureShape shape, int level);

  void add(const CategoryFeatureMaps& maps, const Vector& labels);
  PrototypeBank finish(int epoch) const;

 private:
  Eigen::Index categories_;
  FeatureShape shape_;
  int level_;
  std::vector<Matrix> bin_sums_;
  std::vector<std::int64_t> bin_counts_;
};

PrototypeBank build_prototypes(std::span<const CategoryFeatureMaps> features,
                               const LabelMatrix& labels, int level, int epoch = 0);

void save_bank(const std::filesystem::path& path, const PrototypeBank& bank);
PrototypeBank load_bank(const std::filesystem::path& path);

struct PrototypeChoice {
  std::optional<Eigen::Index> category;
  int bin = -1;
  int self_bin = -1;
};

/// Unknown categories that have a usable bin other than their own.
std::vector<Eigen::Index> eligible_categories(const CategoryFeatureMaps& maps,
                                              const Vector& labels, const PrototypeBank& bank);

/// Draws the category uniformly among eligible ones, then a bin uniformly
/// among usable bins other than the input's own bin.
PrototypeChoice choose_prototype(const CategoryFeatureMaps& maps, const Vector& labels,
                                 const PrototypeBank& bank, Rng& rng);

struct PrototypeBlend {
  CategoryFeatureMaps maps;
  Vector labels;
  PrototypeChoice choice;
};

/// Per-category form of the prototype blend for a given choice.
PrototypeBlend apply_prototype_choice(const CategoryFeatureMaps& maps, const Vector& labels,
                                      const PrototypeBank& bank, const PrototypeChoice& choice,
                                      const Vector& beta);

PrototypeBlend blend_prototype(const CategoryFeatureMaps& maps, const Vector& labels,
                               const PrototypeBank& bank, const Vector& beta, Rng& rng);

/// Mask form: B holds beta_c on the chosen category and 1 elsewhere;
/// F~ = B F + (1 - B) P^k and y~ = B y + (1 - B).
struct PrototypeMask {
  Vector mask;
  std::vector<Matrix> selected;
};

PrototypeMask build_prototype_mask(const PrototypeBank& bank, const PrototypeChoice& choice,
                                   const Vector& beta);
PrototypeBlend apply_prototype_mask(const CategoryFeatureMaps& maps, const Vector& labels,
                                    const PrototypeMask& mask);

/// Adds d loss / d maps into `grad_maps` and returns d loss / d beta.
Vector prototype_blend_backward(const CategoryFeatureMaps& maps, const PrototypeBank& bank,
                                const PrototypeChoice& choice, const Vector& beta,
                                const std::vector<Matrix>& grad_blended_maps,
                                const Vector& grad_blended_labels, std::vector<Matrix>& grad_maps);

}  // namespace repblend
