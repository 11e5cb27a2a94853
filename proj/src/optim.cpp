#include "repblend/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace repblend {

Adam::Adam(const std::vector<NamedParam>& params, AdamConfig config) : config_(config) {
  for (const auto& p : params) {
    m_.push_back(Matrix::Zero(p.param->value.rows(), p.param->value.cols()));
    v_.push_back(Matrix::Zero(p.param->value.rows(), p.param->value.cols()));
  }
}

void Adam::step(const std::vector<NamedParam>& params, Scalar learning_rate) {
  if (params.size() != m_.size()) throw std::logic_error("Adam: parameter list changed");
  ++steps_;
  const Scalar correction1 = 1.0 - std::pow(config_.beta1, static_cast<Scalar>(steps_));
  const Scalar correction2 = 1.0 - std::pow(config_.beta2, static_cast<Scalar>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = *params[i].param;
    Matrix g = p.grad;
    if (p.decay && config_.weight_decay > 0.0) g += config_.weight_decay * p.value;
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g.cwiseAbs2();
    const Matrix m_hat = m_[i] / correction1;
    const Matrix v_hat = v_[i] / correction2;
    p.value.array() -= learning_rate * m_hat.array() / (v_hat.array().sqrt() + config_.epsilon);
  }
}

void Adam::restore(std::int64_t steps, std::vector<Matrix> m, std::vector<Matrix> v) {
  if (m.size() != m_.size() || v.size() != v_.size()) {
    throw std::invalid_argument("Adam::restore: moment count mismatch");
  }
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace repblend
