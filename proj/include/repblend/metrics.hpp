#pragma once

#include "repblend/types.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace repblend {

/// Non-interpolated AP: mean of precision@r over the ranks r of positives,
/// scores sorted descending with ties kept in index order. Empty when `gt`
/// has no positives.
std::optional<Scalar> average_precision(std::span<const Scalar> scores, std::span<const int> gt,
                                        Diagnostics* diag = nullptr);

struct F1Measures {
  Scalar overall_precision = 0.0;
  Scalar overall_recall = 0.0;
  Scalar overall_f1 = 0.0;
  Scalar class_precision = 0.0;
  Scalar class_recall = 0.0;
  Scalar class_f1 = 0.0;
};

/// Thresholded (score >= threshold) overall and per-class F1.
F1Measures f1_measures(const Matrix& scores, const Eigen::MatrixXi& gt, Scalar threshold = 0.5,
                       Diagnostics* diag = nullptr);

struct EvalReport {
  double proportion = 1.0;
  std::vector<std::optional<Scalar>> per_category_ap;
  Scalar mean_ap = 0.0;
  F1Measures f1;
  std::string loss_trace;  // path of the training trace, if any

  Scalar overall_f1() const { return f1.overall_f1; }
  Scalar class_f1() const { return f1.class_f1; }
};

/// mAP over categories with at least one positive, plus F1 measures.
EvalReport evaluate_scores(const Matrix& scores, const Eigen::MatrixXi& gt, double proportion,
                           Scalar threshold = 0.5, Diagnostics* diag = nullptr);

struct ProportionAverages {
  Scalar mean_ap = 0.0;
  Scalar overall_f1 = 0.0;
  Scalar class_f1 = 0.0;
};

ProportionAverages aggregate_proportions(std::span<const EvalReport> reports);

/// One line per proportion (proportion, mAP, OF1, CF1 as percentages) plus
/// an `average` line.
std::string format_report_csv(std::span<const EvalReport> reports);
/// JSON mirror of the CSV with per-category APs and precision/recall terms.
std::string format_report_json(std::span<const EvalReport> reports);
std::vector<EvalReport> parse_report_json(const std::string& text);

struct SweepRow {
  std::string method;
  std::vector<EvalReport> reports;
};

/// Wide layout: method, one mAP column per proportion, then the averages.
std::string format_sweep_table(std::span<const SweepRow> rows);

}  // namespace repblend
