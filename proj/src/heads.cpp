#include "repblend/heads.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace repblend {
namespace {

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, Scalar stddev, Rng& rng) {
  Matrix out(rows, cols);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = stddev * standard_normal(rng);
  return out;
}

Matrix sigmoid(const Matrix& x) { return logistic_of(x); }

}  // namespace

Matrix uniform_adjacency(Eigen::Index categories) {
  return Matrix::Constant(categories, categories, 1.0 / static_cast<Scalar>(categories));
}

Matrix identity_adjacency(Eigen::Index categories) {
  return Matrix::Identity(categories, categories);
}

Matrix cooccurrence_adjacency(const LabelMatrix& labels) {
  const Matrix positive = (labels.values().array() == 1.0).cast<Scalar>().matrix();
  Matrix counts = positive.transpose() * positive;
  const Eigen::Index categories = labels.categories();
  for (Eigen::Index i = 0; i < categories; ++i) {
    const Scalar total = counts.row(i).sum();
    if (total > 0.0) {
      counts.row(i) /= total;
    } else {
      counts.row(i).setConstant(1.0 / static_cast<Scalar>(categories));
    }
  }
  return counts;
}

void check_row_stochastic(const Matrix& adjacency) {
  if (adjacency.rows() != adjacency.cols() || adjacency.rows() == 0) {
    throw std::invalid_argument("adjacency must be a non-empty square matrix");
  }
  if ((adjacency.array() < 0.0).any()) throw std::invalid_argument("adjacency has negative entries");
  for (Eigen::Index i = 0; i < adjacency.rows(); ++i) {
    if (std::abs(adjacency.row(i).sum() - 1.0) > 1e-6) {
      throw std::invalid_argument("adjacency rows must sum to 1");
    }
  }
}

GatedPropagationHead::GatedPropagationHead(Eigen::Index categories, Eigen::Index channels,
                                           Matrix adjacency, int steps, Rng& rng, ParamInit init)
    : adjacency_(std::move(adjacency)), steps_(steps) {
  if (steps < 0) throw std::invalid_argument("propagation steps must be non-negative");
  check_row_stochastic(adjacency_);
  if (adjacency_.rows() != categories) throw std::invalid_argument("adjacency size != categories");

  const Scalar scale = 1.0 / std::sqrt(static_cast<Scalar>(channels));
  auto square = [&]() {
    return init == ParamInit::Random ? gaussian(channels, channels, scale, rng)
                                     : Matrix(Matrix::Zero(channels, channels));
  };
  update_w = Param(square());
  update_u = Param(square());
  update_b = Param(Matrix::Zero(channels, 1), false);
  reset_w = Param(square());
  reset_u = Param(square());
  reset_b = Param(Matrix::Zero(channels, 1), false);
  candidate_w = Param(square());
  candidate_u = Param(square());
  candidate_b = Param(Matrix::Zero(channels, 1), false);
  classifier_w = Param(init == ParamInit::Random ? gaussian(categories, channels, scale, rng)
                                                 : Matrix(Matrix::Zero(categories, channels)));
  classifier_b = Param(Matrix::Zero(categories, 1), false);
}

Matrix GatedPropagationHead::propagate_messages(const Matrix& state, Eigen::Index batch) const {
  const Eigen::Index categories = adjacency_.rows();
  Matrix message(state.rows(), state.cols());
  for (Eigen::Index b = 0; b < batch; ++b) {
    message.middleCols(b * categories, categories).noalias() =
        state.middleCols(b * categories, categories) * adjacency_.transpose();
  }
  return message;
}

Matrix GatedPropagationHead::propagate_messages_backward(const Matrix& grad_message,
                                                         Eigen::Index batch) const {
  const Eigen::Index categories = adjacency_.rows();
  Matrix grad_state(grad_message.rows(), grad_message.cols());
  for (Eigen::Index b = 0; b < batch; ++b) {
    grad_state.middleCols(b * categories, categories).noalias() =
        grad_message.middleCols(b * categories, categories) * adjacency_;
  }
  return grad_state;
}

Vector GatedPropagationHead::classify(const CategoryVectors& vectors) const {
  const CategoryVectors* one = &vectors;
  return forward(std::span<const CategoryVectors>(one, 1)).row(0).transpose();
}

Matrix GatedPropagationHead::forward(std::span<const CategoryVectors> vectors,
                                     HeadCache* cache) const {
  const Eigen::Index categories = adjacency_.rows();
  const Eigen::Index channels = update_w.value.rows();
  const auto batch = static_cast<Eigen::Index>(vectors.size());

  Matrix state(channels, categories * batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const auto& v = vectors[static_cast<std::size_t>(b)];
    if (v.rows() != categories || v.cols() != channels) {
      throw std::invalid_argument("classify: category vectors have the wrong shape");
    }
    state.middleCols(b * categories, categories) = v.transpose();
  }
  if (cache != nullptr) {
    cache->batch = batch;
    cache->steps.clear();
  }

  for (int t = 0; t < steps_; ++t) {
    PropagationStep step;
    step.message = propagate_messages(state, batch);
    step.update_gate = sigmoid((update_w.value * step.message + update_u.value * state).colwise() +
                               update_b.value.col(0));
    step.reset_gate = sigmoid((reset_w.value * step.message + reset_u.value * state).colwise() +
                              reset_b.value.col(0));
    const Matrix gated = step.reset_gate.cwiseProduct(state);
    step.candidate = tanh_of((candidate_w.value * step.message + candidate_u.value * gated).colwise() +
                             candidate_b.value.col(0));
    Matrix next = state + step.update_gate.cwiseProduct(step.candidate - state);
    step.state = std::move(state);
    state = std::move(next);
    if (cache != nullptr) cache->steps.push_back(std::move(step));
  }

  Matrix scores(batch, categories);
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (Eigen::Index c = 0; c < categories; ++c) {
      const Scalar logit =
          classifier_w.value.row(c).dot(state.col(b * categories + c)) + classifier_b.value(c, 0);
      scores(b, c) = logistic(logit);
    }
  }
  if (cache != nullptr) {
    cache->final_state = std::move(state);
    cache->scores = scores;
  }
  return scores;
}

std::vector<Matrix> GatedPropagationHead::backward(const HeadCache& cache,
                                                   const Matrix& grad_scores) {
  const Eigen::Index categories = adjacency_.rows();
  const Eigen::Index batch = cache.batch;
  const Matrix grad_logits =
      grad_scores.cwiseProduct(cache.scores.cwiseProduct((1.0 - cache.scores.array()).matrix()));

  Matrix grad_state = Matrix::Zero(cache.final_state.rows(), cache.final_state.cols());
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (Eigen::Index c = 0; c < categories; ++c) {
      const Scalar g = grad_logits(b, c);
      const Eigen::Index col = b * categories + c;
      classifier_w.grad.row(c) += g * cache.final_state.col(col).transpose();
      classifier_b.grad(c, 0) += g;
      grad_state.col(col) = g * classifier_w.value.row(c).transpose();
    }
  }

  for (auto it = cache.steps.rbegin(); it != cache.steps.rend(); ++it) {
    const PropagationStep& s = *it;
    const Matrix grad_update = grad_state.cwiseProduct(s.candidate - s.state);
    const Matrix grad_candidate = grad_state.cwiseProduct(s.update_gate);
    Matrix grad_prev = grad_state.cwiseProduct((1.0 - s.update_gate.array()).matrix());

    const Matrix gated = s.reset_gate.cwiseProduct(s.state);
    const Matrix pre_candidate =
        grad_candidate.cwiseProduct((1.0 - s.candidate.array().square()).matrix());
    candidate_w.grad.noalias() += pre_candidate * s.message.transpose();
    candidate_u.grad.noalias() += pre_candidate * gated.transpose();
    candidate_b.grad += pre_candidate.rowwise().sum();
    Matrix grad_message = candidate_w.value.transpose() * pre_candidate;
    const Matrix grad_gated = candidate_u.value.transpose() * pre_candidate;
    const Matrix grad_reset = grad_gated.cwiseProduct(s.state);
    grad_prev += grad_gated.cwiseProduct(s.reset_gate);

    const Matrix pre_update = grad_update.cwiseProduct(
        s.update_gate.cwiseProduct((1.0 - s.update_gate.array()).matrix()));
    update_w.grad.noalias() += pre_update * s.message.transpose();
    update_u.grad.noalias() += pre_update * s.state.transpose();
    update_b.grad += pre_update.rowwise().sum();
    grad_message.noalias() += update_w.value.transpose() * pre_update;
    grad_prev.noalias() += update_u.value.transpose() * pre_update;

    const Matrix pre_reset = grad_reset.cwiseProduct(
        s.reset_gate.cwiseProduct((1.0 - s.reset_gate.array()).matrix()));
    reset_w.grad.noalias() += pre_reset * s.message.transpose();
    reset_u.grad.noalias() += pre_reset * s.state.transpose();
    reset_b.grad += pre_reset.rowwise().sum();
    grad_message.noalias() += reset_w.value.transpose() * pre_reset;
    grad_prev.noalias() += reset_u.value.transpose() * pre_reset;

    grad_prev += propagate_messages_backward(grad_message, batch);
    grad_state = std::move(grad_prev);
  }

  std::vector<Matrix> grads;
  grads.reserve(static_cast<std::size_t>(batch));
  for (Eigen::Index b = 0; b < batch; ++b) {
    grads.push_back(grad_state.middleCols(b * categories, categories).transpose());
  }
  return grads;
}

std::vector<NamedParam> GatedPropagationHead::parameters() {
  return {{"head.update_w", &update_w},       {"head.update_u", &update_u},
          {"head.update_b", &update_b},       {"head.reset_w", &reset_w},
          {"head.reset_u", &reset_u},         {"head.reset_b", &reset_b},
          {"head.candidate_w", &candidate_w}, {"head.candidate_u", &candidate_u},
          {"head.candidate_b", &candidate_b}, {"head.classifier_w", &classifier_w},
          {"head.classifier_b", &classifier_b}};
}

PartialBce partial_bce_with_grad(const Vector& labels, const Vector& scores, Diagnostics* diag) {
  if (labels.size() != scores.size()) throw std::invalid_argument("partial_bce: size mismatch");
  PartialBce out{0.0, Vector::Zero(scores.size()), Vector::Zero(labels.size())};

  Scalar weight_total = 0.0;
  Scalar weighted_ll = 0.0;  // sum_c w_c * [t log s + (1 - t) log(1 - s)]
  Vector log_s(scores.size());
  Vector log_1s(scores.size());
  for (Eigen::Index c = 0; c < labels.size(); ++c) {
    const Scalar y = labels(c);
    if (y == 0.0) continue;
    const Scalar s = std::clamp(scores(c), kScoreClamp, 1.0 - kScoreClamp);
    log_s(c) = std::log(s);
    log_1s(c) = std::log(1.0 - s);
    const Scalar target = y == -1.0 ? 0.0 : y;
    const Scalar weight = y == -1.0 ? 1.0 : y;
    weight_total += weight;
    weighted_ll += weight * (target * log_s(c) + (1.0 - target) * log_1s(c));
  }
  if (weight_total == 0.0) {
    if (diag != nullptr) ++diag->all_unknown_rows;
    return out;
  }
  out.loss = -weighted_ll / weight_total;

  for (Eigen::Index c = 0; c < labels.size(); ++c) {
    const Scalar y = labels(c);
    if (y == 0.0) continue;
    const Scalar target = y == -1.0 ? 0.0 : y;
    const Scalar weight = y == -1.0 ? 1.0 : y;
    const Scalar s = scores(c);
    if (s > kScoreClamp && s < 1.0 - kScoreClamp) {
      out.grad_scores(c) = -weight * (target / s - (1.0 - target) / (1.0 - s)) / weight_total;
    }
    if (y > 0.0 && y < 1.0) {
      // Soft entry: y drives both the target and the weight.
      const Scalar d_ll = target * log_s(c) + (1.0 - target) * log_1s(c) +
                          y * (log_s(c) - log_1s(c));
      out.grad_labels(c) = (-d_ll - out.loss) / weight_total;
    }
  }
  return out;
}

Scalar partial_bce(const Vector& labels, const Vector& scores, Diagnostics* diag) {
  return partial_bce_with_grad(labels, scores, diag).loss;
}

Scalar classification_loss(const PathBatch& clean, const PathBatch* instance,
                           const PathBatch* prototype, Diagnostics* diag) {
  auto path_sum = [diag](const PathBatch& path) {
    if (path.labels.samples() != path.scores.rows() ||
        path.labels.categories() != path.scores.cols()) {
      throw std::invalid_argument("classification_loss: labels and scores disagree in shape");
    }
    Scalar sum = 0.0;
    for (Eigen::Index n = 0; n < path.scores.rows(); ++n) {
      sum += partial_bce(path.labels.row(n), path.scores.row(n).transpose(), diag);
    }
    return sum;
  };
  Scalar total = path_sum(clean);
  if (instance != nullptr) total += path_sum(*instance);
  if (prototype != nullptr) total += path_sum(*prototype);
  return total;
}

void LossConfig::validate() const {
  if (contrastive_weight < 0.0) throw std::invalid_argument("contrastive weight must be >= 0");
  if (blend_start_epoch < 1) throw std::invalid_argument("blend start epoch must be >= 1");
  if (prototype_refresh_period < 1) throw std::invalid_argument("refresh period must be >= 1");
}

Scalar total_loss(Scalar classification, Scalar contrastive, const LossConfig& config) {
  return classification + config.contrastive_weight * contrastive;
}

}  // namespace repblend
