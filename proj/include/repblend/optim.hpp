#pragma once

#include "repblend/types.hpp"

#include <string>
#include <vector>

namespace repblend {

/// A trainable tensor and its accumulated gradient.
struct Param {
  Matrix value;
  Matrix grad;
  bool decay = true;  // subject to L2 weight decay

  Param() = default;
  explicit Param(Matrix init, bool apply_decay = true)
      : value(std::move(init)), grad(Matrix::Zero(value.rows(), value.cols())), decay(apply_decay) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

struct NamedParam {
  std::string name;
  Param* param;
};

struct AdamConfig {
  Scalar learning_rate = 1e-3;
  Scalar beta1 = 0.9;
  Scalar beta2 = 0.999;
  Scalar epsilon = 1e-8;
  Scalar weight_decay = 5e-4;
};

/// Adam with coupled L2 decay; moments are kept in parameter order.
class Adam {
 public:
  Adam() = default;
  Adam(const std::vector<NamedParam>& params, AdamConfig config);

  void step(const std::vector<NamedParam>& params, Scalar learning_rate);

  std::int64_t steps() const { return steps_; }
  const std::vector<Matrix>& first_moments() const { return m_; }
  const std::vector<Matrix>& second_moments() const { return v_; }
  void restore(std::int64_t steps, std::vector<Matrix> m, std::vector<Matrix> v);
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::int64_t steps_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

}  // namespace repblend
