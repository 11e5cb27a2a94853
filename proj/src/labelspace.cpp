#include "repblend/labelspace.hpp"

#include "repblend/random.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace repblend {
namespace {

bool is_hard_value(Scalar v) { return v == -1.0 || v == 0.0 || v == 1.0; }
bool is_soft_value(Scalar v) { return v > 0.0 && v < 1.0; }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream stream(line);
  while (std::getline(stream, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string format_value(Scalar v) {
  if (is_hard_value(v)) return std::to_string(static_cast<int>(v));
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

}  // namespace

LabelMatrix::LabelMatrix(Matrix values) : values_(std::move(values)) {
  for (Eigen::Index i = 0; i < values_.size(); ++i) {
    const Scalar v = values_.data()[i];
    if (!is_hard_value(v) && !is_soft_value(v)) {
      throw std::invalid_argument("LabelMatrix: entry outside {-1,0,1} U (0,1)");
    }
  }
}

LabelMatrix LabelMatrix::hard(Matrix values) {
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (!is_hard_value(values.data()[i])) {
      throw std::invalid_argument("LabelMatrix: hard labels must be -1, 0 or 1");
    }
  }
  return LabelMatrix(std::move(values));
}

LabelMatrix LabelMatrix::unknown(Eigen::Index samples, Eigen::Index categories) {
  return LabelMatrix(Matrix::Zero(samples, categories));
}

Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> LabelMatrix::known_mask() const {
  return values_.array() != 0.0;
}

bool LabelMatrix::is_complete() const {
  return (values_.array() == 1.0 || values_.array() == -1.0).all();
}

bool LabelMatrix::is_hard() const {
  for (Eigen::Index i = 0; i < values_.size(); ++i) {
    if (!is_hard_value(values_.data()[i])) return false;
  }
  return true;
}

LabelMatrix LabelMatrix::select_rows(const std::vector<Eigen::Index>& rows) const {
  Matrix out(static_cast<Eigen::Index>(rows.size()), categories());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = values_.row(rows[i]);
  }
  return LabelMatrix(std::move(out));
}

Eigen::MatrixXi LabelMatrix::binary() const {
  if (!is_complete()) throw std::invalid_argument("binary(): labels must be complete");
  return (values_.array() == 1.0).cast<int>();
}

Eigen::Index known_per_image(const ProportionSpec& spec, Eigen::Index categories) {
  if (!(spec.proportion > 0.0 && spec.proportion <= 1.0)) {
    throw std::invalid_argument("known-label proportion must lie in (0, 1]");
  }
  const double target = spec.proportion * static_cast<double>(categories);
  double kept = 0.0;
  switch (spec.rounding) {
    case RoundingPolicy::Nearest: kept = std::round(target); break;
    case RoundingPolicy::Floor: kept = std::floor(target); break;
    case RoundingPolicy::Ceil: kept = std::ceil(target); break;
  }
  return std::clamp<Eigen::Index>(static_cast<Eigen::Index>(kept), 0, categories);
}

LabelMatrix drop_labels(const LabelMatrix& full, const ProportionSpec& spec) {
  if (!full.is_complete()) {
    throw std::invalid_argument("drop_labels: input must be completely annotated");
  }
  const Eigen::Index categories = full.categories();
  const Eigen::Index keep = known_per_image(spec, categories);
  Rng rng = derive_stream(spec.seed, "label-drop");

  Matrix out = Matrix::Zero(full.samples(), categories);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(categories));
  for (Eigen::Index n = 0; n < full.samples(); ++n) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    // Partial Fisher-Yates: the first `keep` slots become a uniform subset.
    for (Eigen::Index i = 0; i < keep; ++i) {
      const auto j = i + static_cast<Eigen::Index>(
                             uniform_index(rng, static_cast<std::uint64_t>(categories - i)));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    for (Eigen::Index i = 0; i < keep; ++i) {
      const Eigen::Index c = order[static_cast<std::size_t>(i)];
      out(n, c) = full(n, c);
    }
  }
  return LabelMatrix(std::move(out));
}

std::vector<CategoryCounts> known_stats(const LabelMatrix& labels) {
  std::vector<CategoryCounts> counts(static_cast<std::size_t>(labels.categories()));
  for (Eigen::Index c = 0; c < labels.categories(); ++c) {
    auto& entry = counts[static_cast<std::size_t>(c)];
    for (Eigen::Index n = 0; n < labels.samples(); ++n) {
      const Scalar v = labels(n, c);
      if (v == 1.0) {
        ++entry.positives;
      } else if (v == -1.0) {
        ++entry.negatives;
      } else if (v == 0.0) {
        ++entry.unknown;
      } else {
        ++entry.soft;
      }
    }
  }
  return counts;
}

LabeledSet parse_coco_annotations(const std::string& json_text) {
  const auto doc = nlohmann::json::parse(json_text);
  if (!doc.contains("images") || !doc["images"].is_array()) {
    throw std::invalid_argument("COCO document lacks an `images` array");
  }

  std::map<std::int64_t, std::string> category_names;
  if (doc.contains("categories")) {
    for (const auto& cat : doc["categories"]) {
      const auto id = cat.at("id").get<std::int64_t>();
      category_names[id] = cat.value("name", std::to_string(id));
    }
  }
  if (doc.contains("annotations")) {
    for (const auto& ann : doc["annotations"]) {
      const auto id = ann.at("category_id").get<std::int64_t>();
      category_names.try_emplace(id, std::to_string(id));
    }
  }
  if (category_names.empty()) throw std::invalid_argument("COCO document has no categories");

  std::map<std::int64_t, Eigen::Index> category_index;
  LabeledSet set;
  for (const auto& [id, name] : category_names) {
    category_index[id] = static_cast<Eigen::Index>(set.category_names.size());
    set.category_names.push_back(name);
  }

  std::map<std::int64_t, Eigen::Index> image_index;
  for (const auto& image : doc["images"]) {
    const auto id = image.at("id").get<std::int64_t>();
    if (!image_index.emplace(id, static_cast<Eigen::Index>(set.image_ids.size())).second) {
      throw std::invalid_argument("COCO document repeats image id " + std::to_string(id));
    }
    set.image_ids.push_back(image.contains("file_name") ? image["file_name"].get<std::string>()
                                                        : std::to_string(id));
  }

  Matrix values = Matrix::Constant(static_cast<Eigen::Index>(set.image_ids.size()),
                                   static_cast<Eigen::Index>(set.category_names.size()), -1.0);
  if (doc.contains("annotations")) {
    for (const auto& ann : doc["annotations"]) {
      const auto image_id = ann.at("image_id").get<std::int64_t>();
      const auto it = image_index.find(image_id);
      if (it == image_index.end()) {
        throw std::invalid_argument("annotation references unknown image " +
                                    std::to_string(image_id));
      }
      values(it->second, category_index.at(ann.at("category_id").get<std::int64_t>())) = 1.0;
    }
  }
  set.labels = LabelMatrix::hard(std::move(values));
  return set;
}

LabeledSet load_coco_annotations(const std::filesystem::path& path) {
  return parse_coco_annotations(read_file(path));
}

std::string format_label_csv(const LabeledSet& set) {
  if (static_cast<Eigen::Index>(set.image_ids.size()) != set.labels.samples() ||
      static_cast<Eigen::Index>(set.category_names.size()) != set.labels.categories()) {
    throw std::invalid_argument("label CSV: id/name counts disagree with matrix shape");
  }
  std::ostringstream out;
  out << "image_id";
  for (const auto& name : set.category_names) out << ',' << name;
  out << '\n';
  for (Eigen::Index n = 0; n < set.labels.samples(); ++n) {
    out << set.image_ids[static_cast<std::size_t>(n)];
    for (Eigen::Index c = 0; c < set.labels.categories(); ++c) {
      out << ',' << format_value(set.labels(n, c));
    }
    out << '\n';
  }
  return out.str();
}

void write_label_csv(const std::filesystem::path& path, const LabeledSet& set) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << format_label_csv(set);
}

LabeledSet parse_label_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("label CSV is empty");
  auto header = split_csv_line(line);
  if (header.empty() || header.front() != "image_id") {
    throw std::invalid_argument("label CSV header must start with image_id");
  }
  LabeledSet set;
  set.category_names.assign(header.begin() + 1, header.end());
  const auto categories = static_cast<Eigen::Index>(set.category_names.size());

  std::vector<std::vector<Scalar>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (static_cast<Eigen::Index>(cells.size()) != categories + 1) {
      throw std::invalid_argument("label CSV row has wrong column count: " + line);
    }
    set.image_ids.push_back(cells.front());
    std::vector<Scalar> row;
    for (std::size_t i = 1; i < cells.size(); ++i) row.push_back(std::stod(cells[i]));
    rows.push_back(std::move(row));
  }
  Matrix values(static_cast<Eigen::Index>(rows.size()), categories);
  for (std::size_t n = 0; n < rows.size(); ++n) {
    for (Eigen::Index c = 0; c < categories; ++c) {
      values(static_cast<Eigen::Index>(n), c) = rows[n][static_cast<std::size_t>(c)];
    }
  }
  set.labels = LabelMatrix::hard(std::move(values));
  return set;
}

LabeledSet read_label_csv(const std::filesystem::path& path) {
  return parse_label_csv(read_file(path));
}

}  // namespace repblend
