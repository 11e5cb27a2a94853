#include "repblend/metrics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace repblend {
namespace {

std::string percent(Scalar value) {
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "%.4f", 100.0 * value);
  return buffer;
}

std::string proportion_label(double p) {
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "%.2f", p);
  return buffer;
}

}  // namespace

std::optional<Scalar> average_precision(std::span<const Scalar> scores, std::span<const int> gt,
                                        Diagnostics* diag) {
  if (scores.size() != gt.size()) throw std::invalid_argument("average_precision: size mismatch");
  const auto positives = std::count(gt.begin(), gt.end(), 1);
  if (positives == 0) {
    if (diag != nullptr) ++diag->categories_without_positives;
    return std::nullopt;
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  Scalar sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (gt[order[rank]] == 1) {
      ++hits;
      sum += static_cast<Scalar>(hits) / static_cast<Scalar>(rank + 1);
    }
  }
  return sum / static_cast<Scalar>(positives);
}

F1Measures f1_measures(const Matrix& scores, const Eigen::MatrixXi& gt, Scalar threshold,
                       Diagnostics* diag) {
  if (scores.rows() != gt.rows() || scores.cols() != gt.cols()) {
    throw std::invalid_argument("f1_measures: shape mismatch");
  }
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw std::invalid_argument("f1_measures: threshold must lie in (0, 1)");
  }
  const Eigen::Index categories = scores.cols();
  Scalar correct_total = 0.0;
  Scalar predicted_total = 0.0;
  Scalar truth_total = 0.0;
  Scalar precision_sum = 0.0;
  Scalar recall_sum = 0.0;
  for (Eigen::Index i = 0; i < categories; ++i) {
    Scalar correct = 0.0;
    Scalar predicted = 0.0;
    Scalar truth = 0.0;
    for (Eigen::Index n = 0; n < scores.rows(); ++n) {
      const bool pred = scores(n, i) >= threshold;
      const bool actual = gt(n, i) == 1;
      predicted += pred ? 1.0 : 0.0;
      truth += actual ? 1.0 : 0.0;
      correct += (pred && actual) ? 1.0 : 0.0;
    }
    correct_total += correct;
    predicted_total += predicted;
    truth_total += truth;
    if (predicted > 0.0) {
      precision_sum += correct / predicted;
    } else if (diag != nullptr) {
      ++diag->degenerate_f1_terms;
    }
    if (truth > 0.0) {
      recall_sum += correct / truth;
    } else if (diag != nullptr) {
      ++diag->degenerate_f1_terms;
    }
  }
  auto harmonic = [](Scalar p, Scalar r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; };
  F1Measures out;
  out.overall_precision = predicted_total > 0.0 ? correct_total / predicted_total : 0.0;
  out.overall_recall = truth_total > 0.0 ? correct_total / truth_total : 0.0;
  out.overall_f1 = harmonic(out.overall_precision, out.overall_recall);
  out.class_precision = precision_sum / static_cast<Scalar>(categories);
  out.class_recall = recall_sum / static_cast<Scalar>(categories);
  out.class_f1 = harmonic(out.class_precision, out.class_recall);
  return out;
}

EvalReport evaluate_scores(const Matrix& scores, const Eigen::MatrixXi& gt, double proportion,
                           Scalar threshold, Diagnostics* diag) {
  if (scores.rows() != gt.rows() || scores.cols() != gt.cols()) {
    throw std::invalid_argument("evaluate_scores: shape mismatch");
  }
  EvalReport report;
  report.proportion = proportion;
  Scalar ap_sum = 0.0;
  int counted = 0;
  for (Eigen::Index c = 0; c < scores.cols(); ++c) {
    const Vector column = scores.col(c);
    const Eigen::VectorXi truth = gt.col(c);
    auto ap = average_precision(std::span<const Scalar>(column.data(), column.size()),
                                std::span<const int>(truth.data(), truth.size()), diag);
    if (ap) {
      ap_sum += *ap;
      ++counted;
    }
    report.per_category_ap.push_back(ap);
  }
  report.mean_ap = counted > 0 ? ap_sum / counted : 0.0;
  report.f1 = f1_measures(scores, gt, threshold, diag);
  return report;
}

ProportionAverages aggregate_proportions(std::span<const EvalReport> reports) {
  if (reports.empty()) throw std::invalid_argument("aggregate_proportions: no reports");
  ProportionAverages avg;
  for (const auto& r : reports) {
    if (r.per_category_ap.size() != reports.front().per_category_ap.size()) {
      throw std::invalid_argument("aggregate_proportions: reports disagree on category count");
    }
    avg.mean_ap += r.mean_ap;
    avg.overall_f1 += r.overall_f1();
    avg.class_f1 += r.class_f1();
  }
  const auto count = static_cast<Scalar>(reports.size());
  avg.mean_ap /= count;
  avg.overall_f1 /= count;
  avg.class_f1 /= count;
  return avg;
}

std::string format_report_csv(std::span<const EvalReport> reports) {
  std::ostringstream out;
  out << "proportion,mAP,OF1,CF1\n";
  for (const auto& r : reports) {
    out << proportion_label(r.proportion) << ',' << percent(r.mean_ap) << ','
        << percent(r.overall_f1()) << ',' << percent(r.class_f1()) << '\n';
  }
  const auto avg = aggregate_proportions(reports);
  out << "average," << percent(avg.mean_ap) << ',' << percent(avg.overall_f1) << ','
      << percent(avg.class_f1) << '\n';
  return out.str();
}

std::string format_report_json(std::span<const EvalReport> reports) {
  nlohmann::ordered_json doc;
  doc["reports"] = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    nlohmann::ordered_json entry;
    entry["proportion"] = r.proportion;
    entry["mAP"] = 100.0 * r.mean_ap;
    entry["OF1"] = 100.0 * r.overall_f1();
    entry["CF1"] = 100.0 * r.class_f1();
    entry["OP"] = 100.0 * r.f1.overall_precision;
    entry["OR"] = 100.0 * r.f1.overall_recall;
    entry["CP"] = 100.0 * r.f1.class_precision;
    entry["CR"] = 100.0 * r.f1.class_recall;
    auto aps = nlohmann::ordered_json::array();
    for (const auto& ap : r.per_category_ap) {
      if (ap) {
        aps.push_back(100.0 * *ap);
      } else {
        aps.push_back(nullptr);
      }
    }
    entry["per_category_AP"] = std::move(aps);
    if (!r.loss_trace.empty()) entry["loss_trace"] = r.loss_trace;
    doc["reports"].push_back(std::move(entry));
  }
  const auto avg = aggregate_proportions(reports);
  doc["average"] = {{"mAP", 100.0 * avg.mean_ap},
                    {"OF1", 100.0 * avg.overall_f1},
                    {"CF1", 100.0 * avg.class_f1}};
  return doc.dump(2) + "\n";
}

std::vector<EvalReport> parse_report_json(const std::string& text) {
  const auto doc = nlohmann::json::parse(text);
  std::vector<EvalReport> reports;
  for (const auto& entry : doc.at("reports")) {
    EvalReport r;
    r.proportion = entry.at("proportion").get<double>();
    r.mean_ap = entry.at("mAP").get<Scalar>() / 100.0;
    r.f1.overall_f1 = entry.at("OF1").get<Scalar>() / 100.0;
    r.f1.class_f1 = entry.at("CF1").get<Scalar>() / 100.0;
    r.f1.overall_precision = entry.value("OP", 0.0) / 100.0;
    r.f1.overall_recall = entry.value("OR", 0.0) / 100.0;
    r.f1.class_precision = entry.value("CP", 0.0) / 100.0;
    r.f1.class_recall = entry.value("CR", 0.0) / 100.0;
    for (const auto& ap : entry.at("per_category_AP")) {
      if (ap.is_null()) {
        r.per_category_ap.emplace_back(std::nullopt);
      } else {
        r.per_category_ap.emplace_back(ap.get<Scalar>() / 100.0);
      }
    }
    r.loss_trace = entry.value("loss_trace", std::string{});
    reports.push_back(std::move(r));
  }
  return reports;
}

std::string format_sweep_table(std::span<const SweepRow> rows) {
  if (rows.empty()) throw std::invalid_argument("format_sweep_table: no rows");
  std::ostringstream out;
  out << "method";
  for (const auto& r : rows.front().reports) {
    out << ",mAP@" << proportion_label(r.proportion);
  }
  out << ",avg_mAP,avg_OF1,avg_CF1\n";
  for (const auto& row : rows) {
    if (row.reports.size() != rows.front().reports.size()) {
      throw std::invalid_argument("format_sweep_table: rows cover different proportions");
    }
    out << row.method;
    for (const auto& r : row.reports) out << ',' << percent(r.mean_ap);
    const auto avg = aggregate_proportions(row.reports);
    out << ',' << percent(avg.mean_ap) << ',' << percent(avg.overall_f1) << ','
        << percent(avg.class_f1) << '\n';
  }
  return out.str();
}

}  // namespace repblend
