#include "repblend/harness.hpp"
#include "repblend/iprb.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace repblend;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

// (N, C, D, H, W) array <-> per-image category maps.
std::vector<CategoryFeatureMaps> maps_from_array(const Array& a) {
  if (a.ndim() != 5) throw std::invalid_argument("maps must have shape (N, C, D, H, W)");
  const auto n = a.shape(0), c = a.shape(1), d = a.shape(2), h = a.shape(3), w = a.shape(4);
  const FeatureShape shape{d, h, w};
  auto view = a.unchecked<5>();
  std::vector<CategoryFeatureMaps> out(static_cast<std::size_t>(n));
  for (py::ssize_t i = 0; i < n; ++i) {
    auto& maps = out[static_cast<std::size_t>(i)];
    maps.shape = shape;
    maps.attention = Matrix::Constant(c, h * w, 1.0 / static_cast<double>(h * w));
    for (py::ssize_t k = 0; k < c; ++k) {
      Matrix m(d, h * w);
      for (py::ssize_t ch = 0; ch < d; ++ch) {
        for (py::ssize_t y = 0; y < h; ++y) {
          for (py::ssize_t x = 0; x < w; ++x) m(ch, y * w + x) = view(i, k, ch, y, x);
        }
      }
      maps.maps.push_back(std::move(m));
    }
  }
  return out;
}

Array maps_to_array(const std::vector<CategoryFeatureMaps>& maps) {
  const auto n = static_cast<py::ssize_t>(maps.size());
  const auto c = static_cast<py::ssize_t>(maps.front().maps.size());
  const auto& s = maps.front().shape;
  Array out({n, c, static_cast<py::ssize_t>(s.channels), static_cast<py::ssize_t>(s.height),
             static_cast<py::ssize_t>(s.width)});
  auto view = out.mutable_unchecked<5>();
  for (py::ssize_t i = 0; i < n; ++i) {
    for (py::ssize_t k = 0; k < c; ++k) {
      const Matrix& m = maps[static_cast<std::size_t>(i)].maps[static_cast<std::size_t>(k)];
      for (py::ssize_t ch = 0; ch < s.channels; ++ch) {
        for (py::ssize_t y = 0; y < s.height; ++y) {
          for (py::ssize_t x = 0; x < s.width; ++x) view(i, k, ch, y, x) = m(ch, y * s.width + x);
        }
      }
    }
  }
  return out;
}

py::dict f1_dict(const F1Measures& m) {
  py::dict d;
  d["OP"] = m.overall_precision;
  d["OR"] = m.overall_recall;
  d["OF1"] = m.overall_f1;
  d["CP"] = m.class_precision;
  d["CR"] = m.class_recall;
  d["CF1"] = m.class_f1;
  return d;
}

ExperimentConfig config_from_json(const std::string& text) {
  auto config = nlohmann::json::parse(text).get<ExperimentConfig>();
  config.validate();
  return config;
}

}  // namespace

PYBIND11_MODULE(_repblend, m) {
  m.doc() = "Dual-perspective representation blending for partial-label multi-label recognition";

  m.def("drop_labels",
        [](const Matrix& full, double proportion, std::uint64_t seed) {
          return drop_labels(LabelMatrix::hard(full), {proportion, seed, RoundingPolicy::Nearest}).values();
        },
        py::arg("full"), py::arg("proportion"), py::arg("seed") = 0,
        "Mask a complete {-1, 1} label matrix down to `proportion` known labels per image.");

  m.def("partial_bce", [](const Vector& y, const Vector& s) { return partial_bce(y, s); },
        py::arg("labels"), py::arg("scores"));

  m.def("average_precision",
        [](const std::vector<double>& scores, const std::vector<int>& gt) {
          return average_precision(scores, gt);
        },
        py::arg("scores"), py::arg("gt"), "None when gt has no positives.");

  m.def("f1_measures",
        [](const Matrix& scores, const Eigen::MatrixXi& gt, double threshold) {
          return f1_dict(f1_measures(scores, gt, threshold));
        },
        py::arg("scores"), py::arg("gt"), py::arg("threshold") = 0.5);

  m.def("evaluate_scores",
        [](const Matrix& scores, const Eigen::MatrixXi& gt, double threshold) {
          const auto r = evaluate_scores(scores, gt, 1.0, threshold);
          py::dict d = f1_dict(r.f1);
          d["mAP"] = r.mean_ap;
          d["per_category_AP"] = r.per_category_ap;
          return d;
        },
        py::arg("scores"), py::arg("gt"), py::arg("threshold") = 0.5);

  m.def("blend_batch",
        [](const Array& maps, const Matrix& labels, const Vector& alpha) {
          const auto in = maps_from_array(maps);
          const auto out = blend_batch(in, LabelMatrix(labels), alpha);
          return py::make_tuple(maps_to_array(out.maps), out.labels.values());
        },
        py::arg("maps"), py::arg("labels"), py::arg("alpha"),
        "Instance-perspective blend of a (N, C, D, H, W) batch paired by reversal.");

  m.def("assign_bin",
        [](const Array& map, int level) {
          if (map.ndim() != 3) throw std::invalid_argument("map must have shape (D, H, W)");
          const FeatureShape shape{map.shape(0), map.shape(1), map.shape(2)};
          Matrix mat(shape.channels, shape.positions());
          auto view = map.unchecked<3>();
          for (py::ssize_t d = 0; d < map.shape(0); ++d) {
            for (py::ssize_t p = 0; p < shape.positions(); ++p) mat(d, p) = view(d, p / shape.width, p % shape.width);
          }
          return assign_bin(mat, shape, level);
        },
        py::arg("map"), py::arg("level"));

  m.def("build_prototypes",
        [](const Array& maps, const Matrix& labels, int level) {
          const auto in = maps_from_array(maps);
          const auto bank = build_prototypes(in, LabelMatrix(labels), level);
          std::vector<CategoryFeatureMaps> grouped;
          for (Eigen::Index c = 0; c < bank.categories; ++c) {
            CategoryFeatureMaps bins{bank.shape, {}, {}};
            for (int k = 0; k < bank.bins(); ++k) bins.maps.push_back(bank.prototype(c, k));
            grouped.push_back(std::move(bins));
          }
          std::vector<bool> usable(bank.usable.begin(), bank.usable.end());
          return py::make_tuple(maps_to_array(grouped), usable);
        },
        py::arg("maps"), py::arg("labels"), py::arg("level") = 1,
        "Returns (C, bins, D, H, W) prototypes and the flat usable flags.");

  m.def("default_config", [] { return nlohmann::json(ExperimentConfig::desk()).dump(); },
        "Desk-scale experiment config as a JSON string.");

  m.def("sweep",
        [](const std::string& config_json) {
          const auto config = config_from_json(config_json);
          SweepResult result;
          {
            py::gil_scoped_release release;
            result = sweep(config, load_experiment_data(config));
          }
          return format_report_json(result.reports);
        },
        py::arg("config_json"), "Train and evaluate each proportion; returns the report JSON.");
}
