#include "doctest.h"

#include "fixtures.hpp"
#include "oracles.hpp"
#include "repblend/heads.hpp"

#include <cmath>

using namespace repblend;

namespace {

Scalar sig(Scalar x) { return 1.0 / (1.0 + std::exp(-x)); }

Vector scores_of(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

}  // namespace

TEST_CASE("zero head scores one half") {
  Rng rng = derive_stream(1, "t");
  GatedPropagationHead head(4, 3, uniform_adjacency(4), 0, rng, ParamInit::Zero);
  const Vector s = head.classify(Matrix::Random(4, 3));
  CHECK((s.array() - 0.5).abs().maxCoeff() == 0.0);
}

TEST_CASE("closed update gates reduce to the unpropagated head") {
  Rng rng = derive_stream(2, "t");
  GatedPropagationHead deep(3, 4, identity_adjacency(3), 3, rng);
  deep.update_b.value.setConstant(-80.0);
  GatedPropagationHead flat(3, 4, identity_adjacency(3), 0, rng);
  flat.classifier_w = deep.classifier_w;
  flat.classifier_b = deep.classifier_b;
  const Matrix v = Matrix::Random(3, 4);
  CHECK((deep.classify(v) - flat.classify(v)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("one propagation step by hand") {
  Rng rng = derive_stream(3, "t");
  GatedPropagationHead head(3, 1, uniform_adjacency(3), 1, rng, ParamInit::Zero);
  head.update_w.value(0, 0) = 0.5;
  head.update_u.value(0, 0) = -0.5;
  head.update_b.value(0, 0) = 0.1;
  head.reset_w.value(0, 0) = 1.0;
  head.candidate_w.value(0, 0) = 1.0;
  head.candidate_u.value(0, 0) = 0.5;
  head.classifier_w.value << 1.0, 2.0, -1.0;
  head.classifier_b.value << 0.0, 0.0, 0.5;
  Matrix v(3, 1);
  v << 1.0, 2.0, 3.0;

  const double h[] = {1.0, 2.0, 3.0};
  const double w[] = {1.0, 2.0, -1.0};
  const double b[] = {0.0, 0.0, 0.5};
  const double message = (1.0 + 2.0 + 3.0) / 3.0;
  const Vector s = head.classify(v);
  for (int c = 0; c < 3; ++c) {
    const double z = sig(0.5 * message - 0.5 * h[c] + 0.1);
    const double r = sig(message);
    const double candidate = std::tanh(message + 0.5 * r * h[c]);
    const double next = (1.0 - z) * h[c] + z * candidate;
    CHECK(s(c) == doctest::Approx(sig(w[c] * next + b[c])).epsilon(1e-12));
  }
}

TEST_CASE("adjacency validation") {
  Rng rng = derive_stream(4, "t");
  Matrix bad = Matrix::Constant(2, 2, 0.6);
  CHECK_THROWS_AS(GatedPropagationHead(2, 3, bad, 1, rng), std::invalid_argument);
  Matrix y(3, 3);
  y << 1, 1, 0, 1, -1, 0, 0, 0, 0;
  const Matrix a = cooccurrence_adjacency(LabelMatrix(y));
  CHECK_NOTHROW(check_row_stochastic(a));
  CHECK(a(0, 1) == doctest::Approx(1.0 / 3.0));
  CHECK(a(1, 0) == doctest::Approx(0.5));
  CHECK(a(2, 2) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("head gradients match finite differences") {
  Rng rng = derive_stream(5, "t");
  GatedPropagationHead head(3, 4, uniform_adjacency(3), 2, rng);
  head.update_b.value.setRandom();
  head.classifier_b.value.setRandom();
  std::vector<Matrix> v{Matrix::Random(3, 4), Matrix::Random(3, 4)};
  const Matrix weights = Matrix::Random(2, 3);
  auto objective = [&] { return (head.forward(v).array() * weights.array()).sum(); };
  HeadCache cache;
  head.forward(v, &cache);
  for (auto& p : head.parameters()) p.param->zero_grad();
  const auto grad_v = head.backward(cache, weights);
  for (auto& p : head.parameters()) {
    CAPTURE(p.name);
    for (Eigen::Index i = 0; i < p.param->value.size(); ++i) {
      const Scalar numeric = fixtures::central_difference(p.param->value.data()[i], objective);
      CHECK(fixtures::relative_error(p.param->grad.data()[i], numeric) < 1e-6);
    }
  }
  for (std::size_t n = 0; n < v.size(); ++n) {
    for (Eigen::Index i = 0; i < v[n].size(); ++i) {
      const Scalar numeric = fixtures::central_difference(v[n].data()[i], objective);
      CHECK(fixtures::relative_error(grad_v[n].data()[i], numeric) < 1e-6);
    }
  }
}

TEST_CASE("partial BCE hand cases") {
  CHECK(partial_bce(scores_of({1, -1, 0}), scores_of({0.8, 0.3, 0.9})) ==
        doctest::Approx(0.2899).epsilon(1e-4 / 0.2899));
  CHECK(partial_bce(scores_of({1, -1, 0}), scores_of({0.8, 0.3, 0.9})) ==
        doctest::Approx(-(std::log(0.8) + std::log(0.7)) / 2.0).epsilon(1e-14));
  const double eps = 1e-6;
  CHECK(partial_bce(scores_of({1, -1}), scores_of({1 - eps, eps})) < 2e-6);
  Diagnostics diag;
  CHECK(partial_bce(scores_of({0, 0, 0}), scores_of({0.2, 0.5, 0.9}), &diag) == 0.0);
  CHECK(diag.all_unknown_rows == 1);
}

TEST_CASE("partial BCE matches the per-entry formula") {
  Rng rng = derive_stream(6, "t");
  for (int trial = 0; trial < 500; ++trial) {
    const auto c = static_cast<Eigen::Index>(1 + uniform_index(rng, 12));
    Vector y(c), s(c);
    for (Eigen::Index i = 0; i < c; ++i) {
      const auto kind = uniform_index(rng, 4);
      y(i) = kind == 3 ? oracle::uniform(rng, 0.01, 0.99) : static_cast<double>(kind) - 1.0;
      s(i) = oracle::uniform(rng, 0.0, 1.0);
    }
    CHECK(std::abs(partial_bce(y, s) - oracle::partial_bce(y, s)) < 1e-12);
  }
}

TEST_CASE("partial BCE gradients match finite differences") {
  Vector y = scores_of({1, -1, 0, 0.3, 0.75});
  Vector s = scores_of({0.6, 0.2, 0.5, 0.4, 0.9});
  const auto result = partial_bce_with_grad(y, s);
  for (Eigen::Index c = 0; c < 5; ++c) {
    const Scalar ds = fixtures::central_difference(s(c), [&] { return partial_bce(y, s); });
    CHECK(fixtures::relative_error(result.grad_scores(c), ds) < 1e-6);
  }
  for (Eigen::Index c : {3, 4}) {
    const Scalar dy = fixtures::central_difference(y(c), [&] { return partial_bce(y, s); });
    CHECK(fixtures::relative_error(result.grad_labels(c), dy) < 1e-6);
  }
  CHECK(result.grad_labels(0) == 0.0);
}

TEST_CASE("classification and total loss") {
  Matrix y(2, 2);
  y << 1, -1, 0, 1;
  Matrix s(2, 2);
  s << 0.9, 0.2, 0.5, 0.6;
  const PathBatch clean{LabelMatrix(y), s};
  const Scalar by_hand = -(std::log(0.9) + std::log(0.8)) / 2.0 - std::log(0.6);
  CHECK(classification_loss(clean) == doctest::Approx(by_hand).epsilon(1e-14));
  CHECK(classification_loss(clean, &clean, &clean) == doctest::Approx(3.0 * by_hand).epsilon(1e-14));

  LossConfig config;
  CHECK(total_loss(1.0, 2.0, config) == doctest::Approx(1.1));
  config.contrastive_weight = 0.0;
  CHECK(total_loss(1.0, 2.0, config) == 1.0);
  config.blend_start_epoch = 0;
  CHECK_THROWS(config.validate());
}
