#ifndef FBSEG_ADAM_HPP
#define FBSEG_ADAM_HPP

#include <cmath>

#include "fbseg/unet.hpp"

namespace fbseg {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction.
template <typename Scalar>
class Adam {
 public:
  Adam(const BasicModelState<Scalar>& model, AdamConfig cfg) : cfg_(cfg), m_(zero_gradients(model)), v_(zero_gradients(model)) {}

  void step(BasicModelState<Scalar>& model, const Gradients<Scalar>& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const auto b1 = static_cast<Scalar>(cfg_.beta1), b2 = static_cast<Scalar>(cfg_.beta2);
    const auto lr = static_cast<Scalar>(cfg_.learning_rate / c1);
    const auto inv_c2 = static_cast<Scalar>(1.0 / c2);
    const auto eps = static_cast<Scalar>(cfg_.epsilon);
    for (std::size_t i = 0; i < model.params.size(); ++i) {
      m_[i] = b1 * m_[i] + (Scalar(1) - b1) * grads[i];
      v_[i] = b2 * v_[i] + (Scalar(1) - b2) * grads[i].square();
      model.params[i].value -= lr * m_[i] / ((v_[i] * inv_c2).sqrt() + eps);
    }
  }

  long steps() const { return t_; }

 private:
  AdamConfig cfg_;
  Gradients<Scalar> m_, v_;
  long t_ = 0;
};

}  // namespace fbseg

#endif  // FBSEG_ADAM_HPP
