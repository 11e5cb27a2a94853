#pragma once

#include "repblend/types.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace repblend {

/// Per-image label vectors over C categories.
///
/// Hard entries are exactly -1 (absent), 0 (unknown) or 1 (present). Soft
/// entries in (0, 1) only come out of the blending operations; every
/// ingestion path rejects them.
class LabelMatrix {
 public:
  LabelMatrix() = default;

  /// Takes ownership of an N x C matrix; throws if any entry is outside
  /// {-1, 0, 1} U (0, 1).
  explicit LabelMatrix(Matrix values);

  /// Same as the constructor but restricted to {-1, 0, 1}.
  static LabelMatrix hard(Matrix values);
  static LabelMatrix unknown(Eigen::Index samples, Eigen::Index categories);

  Eigen::Index samples() const { return values_.rows(); }
  Eigen::Index categories() const { return values_.cols(); }

  Scalar operator()(Eigen::Index n, Eigen::Index c) const { return values_(n, c); }
  bool known(Eigen::Index n, Eigen::Index c) const { return values_(n, c) != 0.0; }
  bool positive(Eigen::Index n, Eigen::Index c) const { return values_(n, c) == 1.0; }

  Vector row(Eigen::Index n) const { return values_.row(n).transpose(); }
  const Matrix& values() const { return values_; }
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> known_mask() const;

  bool is_complete() const;
  bool is_hard() const;

  /// Rows selected in the given order.
  LabelMatrix select_rows(const std::vector<Eigen::Index>& rows) const;

  /// Binary ground truth (1 for present) for metrics; requires completeness.
  Eigen::MatrixXi binary() const;

 private:
  Matrix values_;
};

enum class RoundingPolicy { Nearest, Floor, Ceil };

struct ProportionSpec {
  double proportion = 1.0;
  std::uint64_t seed = 0;
  RoundingPolicy rounding = RoundingPolicy::Nearest;
};

/// Number of labels per image that survive dropping.
Eigen::Index known_per_image(const ProportionSpec& spec, Eigen::Index categories);

/// Masks all but a fixed per-image count of labels. One joint draw without
/// replacement per image, positives and negatives treated alike.
LabelMatrix drop_labels(const LabelMatrix& full, const ProportionSpec& spec);

struct CategoryCounts {
  Eigen::Index positives = 0;
  Eigen::Index negatives = 0;
  Eigen::Index unknown = 0;
  Eigen::Index soft = 0;
};

std::vector<CategoryCounts> known_stats(const LabelMatrix& labels);

struct LabeledSet {
  std::vector<std::string> image_ids;
  std::vector<std::string> category_names;
  LabelMatrix labels;
};

/// Reads a COCO-style document ("images", "annotations", optional
/// "categories"). Categories are indexed by ascending id; absent ones are -1.
LabeledSet load_coco_annotations(const std::filesystem::path& path);
LabeledSet parse_coco_annotations(const std::string& json_text);

/// CSV with header `image_id,<category names...>`.
void write_label_csv(const std::filesystem::path& path, const LabeledSet& set);
std::string format_label_csv(const LabeledSet& set);
LabeledSet read_label_csv(const std::filesystem::path& path);
LabeledSet parse_label_csv(const std::string& text);

}  // namespace repblend
