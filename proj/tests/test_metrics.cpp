#include "doctest.h"

#include "oracles.hpp"
#include "repblend/metrics.hpp"

#include <algorithm>
#include <sstream>

using namespace repblend;

namespace {

std::optional<Scalar> ap_of(std::vector<Scalar> scores, std::vector<int> gt) {
  return average_precision(scores, gt);
}

EvalReport report_with(double proportion, Scalar map, Scalar of1, Scalar cf1) {
  EvalReport r;
  r.proportion = proportion;
  r.mean_ap = map;
  r.f1.overall_f1 = of1;
  r.f1.class_f1 = cf1;
  r.per_category_ap = {map, std::nullopt};
  return r;
}

std::size_t count_fields(const std::string& line) {
  return static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
}

}  // namespace

TEST_CASE("average precision hand cases") {
  CHECK(*ap_of({0.9, 0.1, 0.5}, {1, -1, 1}) == 1.0);
  CHECK(*ap_of({0.9, 0.1}, {-1, 1}) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(*ap_of({0.9, 0.8, 0.7}, {1, -1, 1}) == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
  Diagnostics diag;
  std::vector<Scalar> s{0.3, 0.2};
  std::vector<int> g{-1, -1};
  CHECK_FALSE(average_precision(s, g, &diag).has_value());
  CHECK(diag.categories_without_positives == 1);
}

TEST_CASE("ties keep index order") {
  CHECK(*ap_of({0.5, 0.5}, {1, -1}) == 1.0);
  CHECK(*ap_of({0.5, 0.5}, {-1, 1}) == doctest::Approx(0.5));
}

TEST_CASE("F1 hand cases") {
  Matrix s(2, 2);
  s << 0.9, 0.8, 0.2, 0.7;
  Eigen::MatrixXi g(2, 2);
  g << 1, -1, 1, 1;
  const auto m = f1_measures(s, g);
  CHECK(m.overall_precision == doctest::Approx(2.0 / 3.0));
  CHECK(m.overall_recall == doctest::Approx(2.0 / 3.0));
  CHECK(m.overall_f1 == doctest::Approx(2.0 / 3.0));
  CHECK(m.class_precision == doctest::Approx(0.75));
  CHECK(m.class_recall == doctest::Approx(0.75));
  CHECK(m.class_f1 == doctest::Approx(0.75));

  SUBCASE("perfect") {
    Matrix p(2, 2);
    p << 0.9, 0.1, 0.8, 0.7;
    const auto perfect = f1_measures(p, g);
    CHECK(perfect.overall_f1 == 1.0);
    CHECK(perfect.class_f1 == 1.0);
  }
  SUBCASE("nothing predicted") {
    Diagnostics diag;
    const auto none = f1_measures(Matrix::Constant(2, 2, 0.1), g, 0.5, &diag);
    CHECK(none.overall_f1 == 0.0);
    CHECK(none.class_f1 == 0.0);
    CHECK(diag.degenerate_f1_terms == 2);
  }
  CHECK_THROWS(f1_measures(s, g, 1.0));
  CHECK_THROWS(f1_measures(s, Eigen::MatrixXi::Ones(3, 2)));
}

TEST_CASE("metrics agree with the oracle on random cases") {
  Rng rng = derive_stream(11, "t");
  for (int trial = 0; trial < 300; ++trial) {
    const auto n = static_cast<Eigen::Index>(1 + uniform_index(rng, 16));
    const auto c = static_cast<Eigen::Index>(1 + uniform_index(rng, 8));
    Matrix s(n, c);
    Eigen::MatrixXi g(n, c);
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      // coarse scores so ties occur
      s.data()[i] = static_cast<Scalar>(uniform_index(rng, 6)) / 5.0;
      g.data()[i] = uniform_index(rng, 2) == 0 ? -1 : 1;
    }
    const auto report = evaluate_scores(s, g, 0.5);
    Scalar sum = 0.0;
    int counted = 0;
    for (Eigen::Index k = 0; k < c; ++k) {
      std::vector<Scalar> col(s.col(k).data(), s.col(k).data() + n);
      std::vector<int> truth(g.col(k).data(), g.col(k).data() + n);
      const Scalar want = oracle::average_precision(col, truth);
      if (want < 0.0) {
        CHECK_FALSE(report.per_category_ap[k].has_value());
      } else {
        REQUIRE(report.per_category_ap[k].has_value());
        CHECK(std::abs(*report.per_category_ap[k] - want) < 1e-9);
        sum += want;
        ++counted;
      }
    }
    CHECK(std::abs(report.mean_ap - (counted > 0 ? sum / counted : 0.0)) < 1e-9);
    const auto want = oracle::f1(s, g, 0.5);
    CHECK(std::abs(report.f1.overall_precision - want.op) < 1e-9);
    CHECK(std::abs(report.f1.overall_recall - want.orec) < 1e-9);
    CHECK(std::abs(report.f1.overall_f1 - want.of1) < 1e-9);
    CHECK(std::abs(report.f1.class_precision - want.cp) < 1e-9);
    CHECK(std::abs(report.f1.class_recall - want.cr) < 1e-9);
    CHECK(std::abs(report.f1.class_f1 - want.cf1) < 1e-9);
  }
}

TEST_CASE("aggregate over proportions") {
  std::vector<EvalReport> one{report_with(0.1, 0.4, 0.3, 0.2)};
  CHECK(aggregate_proportions(one).mean_ap == 0.4);
  std::vector<EvalReport> two{report_with(0.1, 0.4, 0.3, 0.2), report_with(0.2, 0.6, 0.5, 0.4)};
  const auto avg = aggregate_proportions(two);
  CHECK(avg.mean_ap == doctest::Approx(0.5));
  CHECK(avg.overall_f1 == doctest::Approx(0.4));
  CHECK(avg.class_f1 == doctest::Approx(0.3));
  CHECK_THROWS(aggregate_proportions(std::span<const EvalReport>{}));
}

TEST_CASE("report CSV and JSON") {
  std::vector<EvalReport> reports{report_with(0.1, 0.4, 0.3, 0.2), report_with(0.2, 0.6, 0.5, 0.4)};
  const auto csv = format_report_csv(reports);
  CHECK(csv ==
        "proportion,mAP,OF1,CF1\n"
        "0.10,40.0000,30.0000,20.0000\n"
        "0.20,60.0000,50.0000,40.0000\n"
        "average,50.0000,40.0000,30.0000\n");
  reports[0].loss_trace = "p0.10/trace.csv";
  const auto json = format_report_json(reports);
  const auto back = parse_report_json(json);
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].proportion == reports[i].proportion);
    CHECK(back[i].mean_ap == doctest::Approx(reports[i].mean_ap).epsilon(1e-14));
    CHECK(back[i].class_f1() == doctest::Approx(reports[i].class_f1()).epsilon(1e-14));
    CHECK(back[i].per_category_ap.size() == 2);
    CHECK_FALSE(back[i].per_category_ap[1].has_value());
  }
  CHECK(back[0].loss_trace == "p0.10/trace.csv");
  CHECK(format_report_json(back) == json);
}

TEST_CASE("sweep table layout") {
  std::vector<EvalReport> reports;
  for (int step = 1; step <= 9; ++step) reports.push_back(report_with(step / 10.0, 0.5, 0.5, 0.5));
  std::vector<SweepRow> rows{{"baseline", reports}, {"full", reports}};
  std::istringstream table(format_sweep_table(rows));
  std::string line;
  int lines = 0;
  while (std::getline(table, line)) {
    CHECK(count_fields(line) == 13);
    ++lines;
  }
  CHECK(lines == 3);
  rows[1].reports.pop_back();
  CHECK_THROWS(format_sweep_table(rows));
}
