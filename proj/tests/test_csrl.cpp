#include "doctest.h"

#include "fixtures.hpp"
#include "oracles.hpp"
#include "repblend/csrl.hpp"

#include <cmath>

using namespace repblend;

namespace {

GlobalFeatureMap random_features(Rng& rng, FeatureShape shape) {
  GlobalFeatureMap f{shape, Matrix(shape.channels, shape.positions())};
  for (Eigen::Index i = 0; i < f.data.size(); ++i) f.data.data()[i] = oracle::uniform(rng, -1, 1);
  return f;
}

SemanticDecoupler trained_looking_decoupler(FeatureShape shape, Eigen::Index categories, Rng& rng) {
  SemanticDecoupler dec(shape, CategoryEmbeddings::random(categories, 5, 4), 6, rng);
  for (Eigen::Index i = 0; i < dec.scorer.value.size(); ++i) {
    dec.scorer.value.data()[i] = oracle::uniform(rng, -1, 1);
  }
  return dec;
}

}  // namespace

TEST_CASE("zero-initialised decoupler attends uniformly") {
  Rng rng = derive_stream(1, "t");
  const FeatureShape shape{3, 2, 3};
  SemanticDecoupler dec(shape, CategoryEmbeddings::random(4, 5, 1), 8, rng, ParamInit::Zero);
  const auto f = random_features(rng, shape);
  const auto maps = dec.decouple(f);
  REQUIRE(maps.categories() == 4);
  for (const auto& m : maps.maps) CHECK((m - f.data / 6.0).cwiseAbs().maxCoeff() < 1e-15);
  const CategoryVectors v = pool(maps);
  for (Eigen::Index c = 0; c < 4; ++c) {
    CHECK((v.row(c).transpose() - f.data.rowwise().mean()).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("random-initialised decoupler also starts uniform") {
  Rng rng = derive_stream(2, "t");
  const FeatureShape shape{4, 3, 3};
  SemanticDecoupler dec(shape, CategoryEmbeddings::random(3, 5, 1), 8, rng);
  const auto att = dec.attention(random_features(rng, shape));
  CHECK((att.array() - 1.0 / 9.0).abs().maxCoeff() < 1e-15);
}

TEST_CASE("peaked attention selects one cell") {
  const FeatureShape shape{2, 2, 2};
  GlobalFeatureMap f{shape, Matrix(2, 4)};
  f.data << 1, 2, 3, 4, 5, 6, 7, 8;
  Matrix logits = Matrix::Zero(1, 4);
  logits(0, 2) = 60.0;
  const auto maps = apply_attention(f, logits);
  CHECK(maps.maps[0](0, 2) == doctest::Approx(3.0));
  CHECK(maps.maps[0](1, 2) == doctest::Approx(7.0));
  CHECK(std::abs(maps.maps[0](1, 0)) < 1e-20);
}

TEST_CASE("hand-set logits on a 2x2 map") {
  const FeatureShape shape{1, 2, 2};
  GlobalFeatureMap f{shape, Matrix(1, 4)};
  f.data << 1, 2, 3, 4;
  Matrix logits(2, 4);
  logits << 0, std::log(2.0), std::log(3.0), std::log(4.0), 0, 0, 0, 0;
  const auto maps = apply_attention(f, logits);
  // Softmax weights are (1, 2, 3, 4) / 10 and 1/4 everywhere.
  const double first[] = {0.1, 0.4, 0.9, 1.6};
  const double second[] = {0.25, 0.5, 0.75, 1.0};
  for (int p = 0; p < 4; ++p) {
    CHECK(maps.maps[0](0, p) == doctest::Approx(first[p]).epsilon(1e-12));
    CHECK(maps.maps[1](0, p) == doctest::Approx(second[p]).epsilon(1e-12));
  }
  const auto v = pool(maps);
  CHECK(v(0, 0) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(v(1, 0) == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(pool(maps, Pooling::Max)(0, 0) == doctest::Approx(1.6));
  CHECK(pool(maps, Pooling::Mean)(1, 0) == doctest::Approx(0.625));
}

TEST_CASE("pooling a zero map gives zero") {
  CategoryFeatureMaps maps{{3, 2, 2}, {Matrix::Zero(3, 4)}, Matrix::Constant(1, 4, 0.25)};
  CHECK(pool(maps).isZero(0.0));
}

TEST_CASE("decouple rejects a mismatched feature map") {
  Rng rng = derive_stream(3, "t");
  SemanticDecoupler dec({3, 2, 2}, CategoryEmbeddings::random(2, 4, 1), 4, rng);
  GlobalFeatureMap wrong{{3, 3, 3}, Matrix::Zero(3, 9)};
  CHECK_THROWS_AS(dec.decouple(wrong), std::invalid_argument);
}

TEST_CASE("pooled shortcut equals pooling the maps") {
  Rng rng = derive_stream(4, "t");
  const FeatureShape shape{4, 3, 2};
  auto dec = trained_looking_decoupler(shape, 3, rng);
  const auto f = random_features(rng, shape);
  const auto maps = dec.decouple(f);
  for (Pooling pooling : {Pooling::Sum, Pooling::Mean}) {
    CHECK((pool_attended(f, maps.attention, pooling) - pool(maps, pooling)).cwiseAbs().maxCoeff() <
          1e-13);
  }
  CHECK_THROWS(pool_attended(f, maps.attention, Pooling::Max));
}

TEST_CASE("decoupler gradients match finite differences") {
  Rng rng = derive_stream(5, "t");
  const FeatureShape shape{3, 2, 2};
  auto dec = trained_looking_decoupler(shape, 3, rng);
  auto f = random_features(rng, shape);
  std::vector<Matrix> weights;
  for (int c = 0; c < 3; ++c) weights.push_back(random_features(rng, shape).data);
  const Matrix vector_weights = Matrix::Random(3, 3);

  for (Pooling pooling : {Pooling::Sum, Pooling::Mean, Pooling::Max}) {
    CAPTURE(static_cast<int>(pooling));
    auto objective = [&] {
      const auto maps = dec.decouple(f);
      Scalar total = (pool(maps, pooling).array() * vector_weights.array()).sum();
      for (int c = 0; c < 3; ++c) total += (maps.maps[c].array() * weights[c].array()).sum();
      return total;
    };
    for (auto& p : dec.parameters()) p.param->zero_grad();
    DecoupleCache cache;
    const auto maps = dec.decouple(f, &cache);
    auto grad_maps = pool_backward(maps, vector_weights, pooling);
    for (int c = 0; c < 3; ++c) grad_maps[c] += weights[c];
    const Matrix grad_f = dec.backward(f, maps, cache, grad_maps);

    for (Eigen::Index i = 0; i < f.data.size(); ++i) {
      const Scalar numeric = fixtures::central_difference(f.data.data()[i], objective);
      CHECK(fixtures::relative_error(grad_f.data()[i], numeric) < 1e-5);
    }
    for (auto& p : dec.parameters()) {
      for (Eigen::Index i = 0; i < p.param->value.size(); ++i) {
        const Scalar numeric = fixtures::central_difference(p.param->value.data()[i], objective);
        CHECK(fixtures::relative_error(p.param->grad.data()[i], numeric) < 1e-5);
      }
    }
  }
}

TEST_CASE("pooled backward equals map backward") {
  Rng rng = derive_stream(6, "t");
  const FeatureShape shape{3, 2, 3};
  auto dec = trained_looking_decoupler(shape, 4, rng);
  const auto f = random_features(rng, shape);
  const Matrix g = Matrix::Random(4, 3);
  for (Pooling pooling : {Pooling::Sum, Pooling::Mean}) {
    DecoupleCache cache;
    const auto maps = dec.decouple(f, &cache);
    for (auto& p : dec.parameters()) p.param->zero_grad();
    const Matrix a = dec.backward(f, maps, cache, pool_backward(maps, g, pooling));
    const Matrix scorer_a = dec.scorer.grad;
    for (auto& p : dec.parameters()) p.param->zero_grad();
    const Matrix b = dec.backward_pooled(f, maps.attention, cache, g, pooling);
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((scorer_a - dec.scorer.grad).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("category embeddings") {
  const auto a = CategoryEmbeddings::random(3, 4, 9);
  const auto b = CategoryEmbeddings::random(3, 4, 9);
  CHECK(a.vectors == b.vectors);
  CHECK(a.source == EmbeddingSource::RandomInit);
  const auto loaded = CategoryEmbeddings::parse("cat 1 2\ndog 3 4\n", {"dog", "cat"});
  CHECK(loaded.source == EmbeddingSource::FileLoaded);
  CHECK(loaded.vectors(0, 0) == 3.0);
  CHECK(loaded.vectors(1, 1) == 2.0);
  CHECK_THROWS(CategoryEmbeddings::parse("cat 1 2\ndog 3\n"));
  CHECK_THROWS(CategoryEmbeddings::parse("cat 1 2\n", {"cow"}));
}

TEST_CASE("contrastive pair loss") {
  Vector u(2), v(2);
  u << 1, 0;
  v << 0, 1;
  CHECK(contrastive_pair_loss(u, u, true) == doctest::Approx(0.0));
  CHECK(contrastive_pair_loss(u, u, false) == doctest::Approx(2.0));
  CHECK(contrastive_pair_loss(u, v, true) == doctest::Approx(1.0));
  Diagnostics diag;
  CHECK(contrastive_pair_loss(Vector::Zero(2), v, true, &diag) == 1.0);
  CHECK(diag.zero_norm_vectors == 1);
}

TEST_CASE("contrastive batch loss hand cases") {
  const Matrix same = Matrix::Random(3, 4);
  const std::vector<Matrix> twins{same, same};
  CHECK(contrastive_batch_loss(twins, LabelMatrix(Matrix::Ones(2, 3))) == doctest::Approx(0.0));
  CHECK(contrastive_batch_loss(twins, LabelMatrix(-Matrix::Ones(2, 3))) == doctest::Approx(2.0));

  Diagnostics diag;
  const std::vector<Matrix> single{same};
  CHECK(contrastive_batch_loss(single, LabelMatrix(Matrix::Ones(1, 3)), {}, &diag) == 0.0);
  CHECK(diag.singleton_batches == 1);
}

TEST_CASE("contrastive batch of three orthogonal vectors") {
  // One category, unit vectors e0, e1, e2: every cosine is 0, so each of the
  // six ordered pairs contributes 1 whatever the labels.
  std::vector<Matrix> v(3, Matrix::Zero(1, 3));
  for (int i = 0; i < 3; ++i) v[i](0, i) = 1.0;
  Matrix y(3, 1);
  y << 1, 1, -1;
  CHECK(contrastive_batch_loss(v, LabelMatrix(y)) == doctest::Approx(1.0));
  // Rotating the third vector onto the first gives pairs (0,2),(2,0) cos 1
  // in the "otherwise" branch: (4 * 1 + 2 * 2) / 6.
  v[2] = v[0];
  CHECK(contrastive_batch_loss(v, LabelMatrix(y)) == doctest::Approx(8.0 / 6.0));
}

TEST_CASE("contrastive batch loss matches pair enumeration") {
  Rng rng = derive_stream(7, "t");
  for (int trial = 0; trial < 50; ++trial) {
    const auto batch = static_cast<Eigen::Index>(2 + uniform_index(rng, 5));
    const auto categories = static_cast<Eigen::Index>(1 + uniform_index(rng, 5));
    std::vector<Matrix> v;
    for (Eigen::Index n = 0; n < batch; ++n) v.push_back(Matrix::Random(categories, 3));
    const auto y = oracle::random_labels(rng, batch, categories);
    for (bool known_only : {false, true}) {
      ContrastiveOptions opts{known_only};
      CHECK(contrastive_batch_loss(v, y, opts) ==
            doctest::Approx(oracle::contrastive(v, y, known_only)).epsilon(1e-12));
    }
  }
}

TEST_CASE("contrastive gradient matches finite differences") {
  Rng rng = derive_stream(8, "t");
  std::vector<Matrix> v;
  for (int n = 0; n < 3; ++n) v.push_back(Matrix::Random(2, 4));
  const auto y = oracle::random_labels(rng, 3, 2);
  std::vector<Matrix> grad;
  contrastive_batch_loss(v, y, {}, nullptr, &grad);
  for (std::size_t n = 0; n < v.size(); ++n) {
    for (Eigen::Index i = 0; i < v[n].size(); ++i) {
      const Scalar numeric = fixtures::central_difference(
          v[n].data()[i], [&] { return contrastive_batch_loss(v, y); });
      CHECK(fixtures::relative_error(grad[n].data()[i], numeric) < 1e-6);
    }
  }
}
