#pragma once

#include "repblend/backbone.hpp"
#include "repblend/labelspace.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace repblend {

enum class ShapeKind { Square, Circle, Triangle, Cross, Frame, Diamond };

struct Archetype {
  ShapeKind shape;
  std::array<std::uint8_t, 3> color;
  std::string name;
};

/// Shape x colour catalogue; category c uses entry c.
const std::vector<Archetype>& archetype_catalog();

struct SyntheticSceneSpec {
  int categories = 12;
  int image_size = 64;
  int min_objects = 1;
  int max_objects = 3;
  double clutter = 0.15;
  std::uint64_t seed = 0;
  // Categories objects are drawn from; empty means all.
  std::vector<int> category_pool;
};

struct Placement {
  int category = 0;
  int cell = 0;
  int x = 0;  // top-left corner
  int y = 0;
  int size = 0;
};

struct Dataset {
  std::vector<std::string> image_ids;
  std::vector<std::string> category_names;
  std::vector<Image> images;
  LabelMatrix labels;
  std::vector<std::vector<Placement>> placements;  // empty for datasets loaded from disk

  Eigen::Index size() const { return static_cast<Eigen::Index>(images.size()); }
  LabeledSet labeled_set() const { return {image_ids, category_names, labels}; }
};

/// Objects sit in distinct cells of a square grid, so none occludes another.
Dataset generate_synthetic(const SyntheticSceneSpec& spec, int n_images);

/// `images/<id>.ppm` per sample plus `labels.csv`.
void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);
/// Reads a directory written by `write_dataset`; `labels_file` overrides the
/// label CSV (for partial-label splits).
Dataset read_dataset(const std::filesystem::path& dir, const std::filesystem::path& labels_file = {});

}  // namespace repblend
