#include "repblend/csrl.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace repblend {
namespace {

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, Scalar stddev, Rng& rng) {
  Matrix out(rows, cols);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = stddev * standard_normal(rng);
  return out;
}

}  // namespace

CategoryEmbeddings CategoryEmbeddings::random(Eigen::Index categories, Eigen::Index dim,
                                              std::uint64_t seed) {
  Rng rng = derive_stream(seed, "category-embeddings");
  CategoryEmbeddings out;
  out.vectors = gaussian(categories, dim, 1.0, rng);
  out.source = EmbeddingSource::RandomInit;
  for (Eigen::Index c = 0; c < categories; ++c) out.names.push_back(std::to_string(c));
  return out;
}

CategoryEmbeddings CategoryEmbeddings::parse(const std::string& text,
                                             const std::vector<std::string>& order) {
  std::vector<std::string> names;
  std::vector<std::vector<Scalar>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::string name;
    if (!(fields >> name)) continue;
    std::vector<Scalar> row;
    Scalar value = 0;
    while (fields >> value) row.push_back(value);
    if (row.empty()) throw std::invalid_argument("embedding row without values: " + name);
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw std::invalid_argument("embedding rows differ in dimension");
    }
    names.push_back(name);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::invalid_argument("embedding file is empty");

  std::vector<std::size_t> pick(rows.size());
  for (std::size_t i = 0; i < pick.size(); ++i) pick[i] = i;
  if (!order.empty()) {
    std::map<std::string, std::size_t> by_name;
    for (std::size_t i = 0; i < names.size(); ++i) by_name[names[i]] = i;
    pick.clear();
    for (const auto& want : order) {
      const auto it = by_name.find(want);
      if (it == by_name.end()) throw std::invalid_argument("no embedding for category " + want);
      pick.push_back(it->second);
    }
  }

  CategoryEmbeddings out;
  out.source = EmbeddingSource::FileLoaded;
  out.vectors.resize(static_cast<Eigen::Index>(pick.size()),
                     static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < pick.size(); ++r) {
    out.names.push_back(names[pick[r]]);
    for (std::size_t k = 0; k < rows[pick[r]].size(); ++k) {
      const Scalar v = rows[pick[r]][k];
      if (!std::isfinite(v)) throw std::invalid_argument("non-finite embedding value");
      out.vectors(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = v;
    }
  }
  return out;
}

CategoryEmbeddings CategoryEmbeddings::load(const std::filesystem::path& path,
                                            const std::vector<std::string>& order) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse(text.str(), order);
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.rows(); ++c) {
    const Scalar peak = logits.row(c).maxCoeff();
    out.row(c) = (logits.row(c).array() - peak).exp().matrix();
    out.row(c) /= out.row(c).sum();
  }
  return out;
}

CategoryFeatureMaps attend(const GlobalFeatureMap& f, const Matrix& attention) {
  if (attention.cols() != f.shape.positions() || f.data.cols() != f.shape.positions()) {
    throw std::invalid_argument("attend: attention/positions mismatch");
  }
  CategoryFeatureMaps out;
  out.shape = f.shape;
  out.attention = attention;
  out.maps.reserve(static_cast<std::size_t>(attention.rows()));
  for (Eigen::Index c = 0; c < attention.rows(); ++c) {
    out.maps.push_back(f.data * attention.row(c).asDiagonal());
  }
  return out;
}

CategoryFeatureMaps apply_attention(const GlobalFeatureMap& f, const Matrix& logits) {
  if (logits.cols() != f.shape.positions() || f.data.cols() != f.shape.positions()) {
    throw std::invalid_argument("apply_attention: logits/positions mismatch");
  }
  return attend(f, softmax_rows(logits));
}

CategoryVectors pool_attended(const GlobalFeatureMap& f, const Matrix& attention, Pooling pooling) {
  if (pooling == Pooling::Max) throw std::invalid_argument("pool_attended: max pooling needs maps");
  CategoryVectors out = attention * f.data.transpose();
  if (pooling == Pooling::Mean) out /= static_cast<Scalar>(f.shape.positions());
  return out;
}

CategoryVectors pool(const CategoryFeatureMaps& maps, Pooling pooling) {
  const Eigen::Index channels = maps.shape.channels;
  CategoryVectors out(maps.categories(), channels);
  for (Eigen::Index c = 0; c < maps.categories(); ++c) {
    const Matrix& m = maps.maps[static_cast<std::size_t>(c)];
    switch (pooling) {
      case Pooling::Sum: out.row(c) = m.rowwise().sum().transpose(); break;
      case Pooling::Mean: out.row(c) = m.rowwise().mean().transpose(); break;
      case Pooling::Max: out.row(c) = m.rowwise().maxCoeff().transpose(); break;
    }
  }
  return out;
}

std::vector<Matrix> pool_backward(const CategoryFeatureMaps& maps, const Matrix& grad_vectors,
                                  Pooling pooling) {
  const Eigen::Index positions = maps.shape.positions();
  std::vector<Matrix> grads;
  grads.reserve(maps.maps.size());
  for (Eigen::Index c = 0; c < maps.categories(); ++c) {
    const Vector g = grad_vectors.row(c).transpose();
    switch (pooling) {
      case Pooling::Sum: grads.push_back(g.replicate(1, positions)); break;
      case Pooling::Mean:
        grads.push_back(g.replicate(1, positions) / static_cast<Scalar>(positions));
        break;
      case Pooling::Max: {
        const Matrix& m = maps.maps[static_cast<std::size_t>(c)];
        Matrix routed = Matrix::Zero(m.rows(), m.cols());
        for (Eigen::Index d = 0; d < m.rows(); ++d) {
          Eigen::Index arg = 0;
          m.row(d).maxCoeff(&arg);
          routed(d, arg) = g(d);
        }
        grads.push_back(std::move(routed));
        break;
      }
    }
  }
  return grads;
}

SemanticDecoupler::SemanticDecoupler(FeatureShape shape, CategoryEmbeddings embeddings,
                                     Eigen::Index joint_dim, Rng& rng, ParamInit init)
    : shape_(shape), embeddings_(std::move(embeddings)) {
  if (joint_dim <= 0) throw std::invalid_argument("joint dimension must be positive");
  if (!embeddings_.vectors.allFinite()) throw std::invalid_argument("non-finite embeddings");
  const Eigen::Index channels = shape_.channels;
  const Eigen::Index dim = embeddings_.dim();
  if (init == ParamInit::Random) {
    feature_proj = Param(gaussian(joint_dim, channels, 1.0 / std::sqrt(Scalar(channels)), rng));
    embed_proj = Param(gaussian(joint_dim, dim, 1.0 / std::sqrt(Scalar(dim)), rng));
  } else {
    feature_proj = Param(Matrix::Zero(joint_dim, channels));
    embed_proj = Param(Matrix::Zero(joint_dim, dim));
  }
  // A zero scorer starts every category from uniform attention.
  scorer = Param(Matrix::Zero(joint_dim, 1));
}

Matrix SemanticDecoupler::attention_logits(const GlobalFeatureMap& f, DecoupleCache* cache) const {
  if (!(f.shape == shape_) || f.data.rows() != shape_.channels ||
      f.data.cols() != shape_.positions()) {
    throw std::invalid_argument("decouple: feature map shape does not match configuration");
  }
  const Matrix projected = feature_proj.value * f.data;
  const Matrix keys = embed_proj.value * embeddings_.vectors.transpose();
  const auto categories = embeddings_.categories();
  Matrix logits(categories, shape_.positions());
  if (cache != nullptr) {
    cache->projected_features = projected;
    cache->projected_embeddings = keys;
    cache->joint.clear();
  }
  for (Eigen::Index c = 0; c < categories; ++c) {
    Matrix joint = tanh_of((projected.array().colwise() * keys.col(c).array()).matrix());
    logits.row(c) = scorer.value.transpose() * joint;
    if (cache != nullptr) cache->joint.push_back(std::move(joint));
  }
  return logits;
}

Matrix SemanticDecoupler::attention(const GlobalFeatureMap& f, DecoupleCache* cache) const {
  return softmax_rows(attention_logits(f, cache));
}

CategoryFeatureMaps SemanticDecoupler::decouple(const GlobalFeatureMap& f,
                                                DecoupleCache* cache) const {
  return apply_attention(f, attention_logits(f, cache));
}

Matrix SemanticDecoupler::backward(const GlobalFeatureMap& f, const CategoryFeatureMaps& out,
                                   const DecoupleCache& cache,
                                   const std::vector<Matrix>& grad_maps) {
  const auto categories = embeddings_.categories();
  if (static_cast<Eigen::Index>(grad_maps.size()) != categories) {
    throw std::invalid_argument("decouple backward: one gradient map per category expected");
  }
  Matrix grad_f = Matrix::Zero(f.data.rows(), f.data.cols());
  Matrix grad_att(categories, f.data.cols());
  for (Eigen::Index c = 0; c < categories; ++c) {
    const Matrix& g = grad_maps[static_cast<std::size_t>(c)];
    grad_f += g * out.attention.row(c).asDiagonal();
    grad_att.row(c) = (g.array() * f.data.array()).colwise().sum().matrix();
  }
  backward_attention(out.attention, cache, grad_att, f, grad_f);
  return grad_f;
}

Matrix SemanticDecoupler::backward_pooled(const GlobalFeatureMap& f, const Matrix& attention,
                                          const DecoupleCache& cache, const Matrix& grad_vectors,
                                          Pooling pooling) {
  if (pooling == Pooling::Max) throw std::invalid_argument("backward_pooled: max pooling needs maps");
  const Scalar scale =
      pooling == Pooling::Mean ? 1.0 / static_cast<Scalar>(f.shape.positions()) : 1.0;
  Matrix grad_f = scale * (grad_vectors.transpose() * attention);
  const Matrix grad_att = scale * (grad_vectors * f.data);
  backward_attention(attention, cache, grad_att, f, grad_f);
  return grad_f;
}

void SemanticDecoupler::backward_attention(const Matrix& attention, const DecoupleCache& cache,
                                           const Matrix& grad_attention, const GlobalFeatureMap& f,
                                           Matrix& grad_f) {
  Matrix grad_projected = Matrix::Zero(cache.projected_features.rows(),
                                       cache.projected_features.cols());
  for (Eigen::Index c = 0; c < attention.rows(); ++c) {
    const RowVector att = attention.row(c);
    const Scalar inner = grad_attention.row(c).dot(att);
    const RowVector grad_logit = (att.array() * (grad_attention.row(c).array() - inner)).matrix();

    const Matrix& joint = cache.joint[static_cast<std::size_t>(c)];
    scorer.grad += joint * grad_logit.transpose();
    const Matrix grad_pre =
        ((scorer.value * grad_logit).array() * (1.0 - joint.array().square())).matrix();
    const Vector key = cache.projected_embeddings.col(c);
    grad_projected += (grad_pre.array().colwise() * key.array()).matrix();
    const Vector grad_key =
        (grad_pre.array() * cache.projected_features.array()).rowwise().sum().matrix();
    embed_proj.grad += grad_key * embeddings_.vectors.row(c);
  }
  feature_proj.grad += grad_projected * f.data.transpose();
  grad_f += feature_proj.value.transpose() * grad_projected;
}

std::vector<NamedParam> SemanticDecoupler::parameters() {
  return {{"decoupler.feature_proj", &feature_proj},
          {"decoupler.embed_proj", &embed_proj},
          {"decoupler.scorer", &scorer}};
}

Scalar contrastive_pair_loss(const Vector& u, const Vector& v, bool both_positive,
                             Diagnostics* diag) {
  const Scalar nu = u.norm();
  const Scalar nv = v.norm();
  Scalar cosine = 0.0;
  if (nu == 0.0 || nv == 0.0) {
    if (diag != nullptr) ++diag->zero_norm_vectors;
  } else {
    cosine = u.dot(v) / (nu * nv);
  }
  return both_positive ? 1.0 - cosine : 1.0 + cosine;
}

Scalar contrastive_batch_loss(std::span<const CategoryVectors> vectors, const LabelMatrix& labels,
                              const ContrastiveOptions& options, Diagnostics* diag,
                              std::vector<Matrix>* grad) {
  const auto batch = static_cast<Eigen::Index>(vectors.size());
  if (labels.samples() != batch) {
    throw std::invalid_argument("contrastive loss: labels/batch size mismatch");
  }
  if (grad != nullptr) {
    grad->clear();
    for (const auto& v : vectors) grad->push_back(Matrix::Zero(v.rows(), v.cols()));
  }
  if (batch < 2) {
    if (diag != nullptr) ++diag->singleton_batches;
    return 0.0;
  }
  const Eigen::Index categories = labels.categories();

  // Per-image norms are reused across all pairs.
  std::vector<Vector> norms;
  for (const auto& v : vectors) norms.push_back(v.rowwise().norm());

  Scalar total = 0.0;
  std::int64_t terms = 0;
  for (Eigen::Index n = 0; n < batch; ++n) {
    for (Eigen::Index m = 0; m < batch; ++m) {
      if (n == m) continue;
      for (Eigen::Index c = 0; c < categories; ++c) {
        const bool both_positive = labels(n, c) == 1.0 && labels(m, c) == 1.0;
        if (!both_positive && options.known_pairs_only &&
            !(labels.known(n, c) && labels.known(m, c))) {
          continue;
        }
        const Scalar nu = norms[static_cast<std::size_t>(n)](c);
        const Scalar nv = norms[static_cast<std::size_t>(m)](c);
        ++terms;
        if (nu == 0.0 || nv == 0.0) {
          if (diag != nullptr) ++diag->zero_norm_vectors;
          total += 1.0;
          continue;
        }
        const auto u = vectors[static_cast<std::size_t>(n)].row(c);
        const auto v = vectors[static_cast<std::size_t>(m)].row(c);
        const Scalar cosine = u.dot(v) / (nu * nv);
        total += both_positive ? 1.0 - cosine : 1.0 + cosine;
        if (grad != nullptr) {
          const Scalar sign = both_positive ? -1.0 : 1.0;
          (*grad)[static_cast<std::size_t>(n)].row(c) +=
              sign * (v / (nu * nv) - cosine * u / (nu * nu));
          (*grad)[static_cast<std::size_t>(m)].row(c) +=
              sign * (u / (nu * nv) - cosine * v / (nv * nv));
        }
      }
    }
  }
  if (terms == 0) return 0.0;
  if (grad != nullptr) {
    for (auto& g : *grad) g /= static_cast<Scalar>(terms);
  }
  return total / static_cast<Scalar>(terms);
}

}  // namespace repblend
