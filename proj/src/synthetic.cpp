#include "repblend/synthetic.hpp"

#include "repblend/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace repblend {
namespace {

bool inside(ShapeKind shape, double dx, double dy, double half) {
  // (dx, dy) relative to the object centre, half = size / 2.
  switch (shape) {
    case ShapeKind::Square: return std::abs(dx) <= half && std::abs(dy) <= half;
    case ShapeKind::Circle: return dx * dx + dy * dy <= half * half;
    case ShapeKind::Triangle: {
      const double t = (dy + half) / (2.0 * half);  // 0 at apex, 1 at base
      return t >= 0.0 && t <= 1.0 && std::abs(dx) <= t * half;
    }
    case ShapeKind::Cross:
      return (std::abs(dx) <= half / 3.0 && std::abs(dy) <= half) ||
             (std::abs(dy) <= half / 3.0 && std::abs(dx) <= half);
    case ShapeKind::Frame:
      return std::abs(dx) <= half && std::abs(dy) <= half &&
             (std::abs(dx) >= 0.55 * half || std::abs(dy) >= 0.55 * half);
    case ShapeKind::Diamond: return std::abs(dx) + std::abs(dy) <= half;
  }
  return false;
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

std::string image_id(int index) {
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "img%06d", index);
  return buffer;
}

}  // namespace

const std::vector<Archetype>& archetype_catalog() {
  static const std::vector<Archetype> catalog = [] {
    const std::array<std::pair<ShapeKind, const char*>, 6> shapes = {{{ShapeKind::Square, "square"},
                                                                      {ShapeKind::Circle, "circle"},
                                                                      {ShapeKind::Triangle, "triangle"},
                                                                      {ShapeKind::Cross, "cross"},
                                                                      {ShapeKind::Frame, "frame"},
                                                                      {ShapeKind::Diamond, "diamond"}}};
    const std::array<std::pair<std::array<std::uint8_t, 3>, const char*>, 4> colors = {
        {{{220, 40, 40}, "red"}, {{40, 200, 60}, "green"}, {{50, 80, 230}, "blue"},
         {{230, 210, 40}, "yellow"}}};
    std::vector<Archetype> out;
    for (const auto& [color, color_name] : colors) {
      for (const auto& [shape, shape_name] : shapes) {
        out.push_back({shape, color, std::string(color_name) + "_" + shape_name});
      }
    }
    return out;
  }();
  return catalog;
}

Dataset generate_synthetic(const SyntheticSceneSpec& spec, int n_images) {
  if (n_images < 1) throw std::invalid_argument("generate_synthetic: need at least one image");
  const auto& catalog = archetype_catalog();
  if (spec.categories < 1 || spec.categories > static_cast<int>(catalog.size())) {
    throw std::invalid_argument("generate_synthetic: category count exceeds the archetype catalog");
  }
  if (spec.min_objects < 0 || spec.max_objects < spec.min_objects) {
    throw std::invalid_argument("generate_synthetic: invalid objects-per-image range");
  }
  std::vector<int> pool = spec.category_pool;
  if (pool.empty()) {
    pool.resize(static_cast<std::size_t>(spec.categories));
    std::iota(pool.begin(), pool.end(), 0);
  }
  for (int c : pool) {
    if (c < 0 || c >= spec.categories) throw std::invalid_argument("category pool out of range");
  }
  if (spec.max_objects > static_cast<int>(pool.size())) {
    throw std::invalid_argument("generate_synthetic: more objects than distinct categories");
  }

  const int grid = std::max(1, static_cast<int>(std::ceil(std::sqrt(double(spec.max_objects)))));
  const int cell_size = spec.image_size / grid;
  if (cell_size < 6) throw std::invalid_argument("generate_synthetic: image too small for grid");

  Rng rng = derive_stream(spec.seed, "synthetic-scenes");
  Dataset data;
  for (int c = 0; c < spec.categories; ++c) data.category_names.push_back(catalog[c].name);
  Matrix labels = Matrix::Constant(n_images, spec.categories, -1.0);

  for (int n = 0; n < n_images; ++n) {
    Image image{3, spec.image_size, spec.image_size,
                std::vector<std::uint8_t>(static_cast<std::size_t>(3 * spec.image_size * spec.image_size))};
    for (Eigen::Index h = 0; h < image.height; ++h) {
      for (Eigen::Index w = 0; w < image.width; ++w) {
        const double base = 110.0 + 60.0 * spec.clutter * standard_normal(rng);
        for (Eigen::Index c = 0; c < 3; ++c) {
          image.at(c, h, w) = to_byte(base + 25.0 * spec.clutter * standard_normal(rng));
        }
      }
    }
    // Grey distractor strokes.
    const int strokes = static_cast<int>(std::lround(spec.clutter * 10.0));
    for (int s = 0; s < strokes; ++s) {
      const int x0 = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(spec.image_size)));
      const int y0 = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(spec.image_size)));
      const bool horizontal = uniform_index(rng, 2) == 0;
      const int length = 4 + static_cast<int>(uniform_index(rng, 8));
      const auto shade = to_byte(60.0 + 120.0 * uniform_unit(rng));
      for (int k = 0; k < length; ++k) {
        const int x = horizontal ? x0 + k : x0;
        const int y = horizontal ? y0 : y0 + k;
        if (x >= spec.image_size || y >= spec.image_size) break;
        for (Eigen::Index c = 0; c < 3; ++c) image.at(c, y, x) = shade;
      }
    }

    const int span = spec.max_objects - spec.min_objects + 1;
    const int count = spec.min_objects + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(span)));
    std::vector<int> categories = pool;
    std::vector<int> cells(static_cast<std::size_t>(grid * grid));
    std::iota(cells.begin(), cells.end(), 0);
    std::vector<Placement> placements;
    for (int k = 0; k < count; ++k) {
      const auto ci = static_cast<std::size_t>(k) +
                      uniform_index(rng, categories.size() - static_cast<std::size_t>(k));
      std::swap(categories[static_cast<std::size_t>(k)], categories[ci]);
      const auto cj = static_cast<std::size_t>(k) +
                      uniform_index(rng, cells.size() - static_cast<std::size_t>(k));
      std::swap(cells[static_cast<std::size_t>(k)], cells[cj]);

      Placement p;
      p.category = categories[static_cast<std::size_t>(k)];
      p.cell = cells[static_cast<std::size_t>(k)];
      const int min_size = std::max(4, cell_size * 11 / 20);
      const int max_size = std::max(min_size, cell_size * 17 / 20);
      p.size = min_size + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(max_size - min_size + 1)));
      const int slack = cell_size - p.size;
      p.x = (p.cell % grid) * cell_size + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(slack + 1)));
      p.y = (p.cell / grid) * cell_size + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(slack + 1)));

      const Archetype& archetype = catalog[static_cast<std::size_t>(p.category)];
      const double half = (p.size - 1) / 2.0;
      for (int y = p.y; y < p.y + p.size; ++y) {
        for (int x = p.x; x < p.x + p.size; ++x) {
          if (!inside(archetype.shape, x - p.x - half, y - p.y - half, half)) continue;
          for (Eigen::Index c = 0; c < 3; ++c) image.at(c, y, x) = archetype.color[static_cast<std::size_t>(c)];
        }
      }
      labels(n, p.category) = 1.0;
      placements.push_back(p);
    }
    data.image_ids.push_back(image_id(n));
    data.images.push_back(std::move(image));
    data.placements.push_back(std::move(placements));
  }
  data.labels = LabelMatrix::hard(std::move(labels));
  return data;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
  std::filesystem::create_directories(dir / "images");
  for (std::size_t n = 0; n < dataset.images.size(); ++n) {
    write_ppm(dir / "images" / (dataset.image_ids[n] + ".ppm"), dataset.images[n]);
  }
  write_label_csv(dir / "labels.csv", dataset.labeled_set());
}

Dataset read_dataset(const std::filesystem::path& dir, const std::filesystem::path& labels_file) {
  const auto set = read_label_csv(labels_file.empty() ? dir / "labels.csv" : labels_file);
  Dataset data;
  data.image_ids = set.image_ids;
  data.category_names = set.category_names;
  data.labels = set.labels;
  for (const auto& id : set.image_ids) data.images.push_back(read_ppm(dir / "images" / (id + ".ppm")));
  return data;
}

}  // namespace repblend
