#ifndef FBSEG_LOSSES_HPP
#define FBSEG_LOSSES_HPP

// Segmentation and reconstruction losses over probability arrays.
//
// Every loss takes Eigen array expressions of equal shape and averages over
// all N elements. Gradients are returned with respect to the first argument
// (probabilities, or the reconstruction for MSE). Probabilities are clamped
// to [c, 1 - c] before taking logs; the gradient is evaluated at the clamped
// value and passed straight through the clamp so saturated pixels still
// receive a learning signal.

#include <cmath>
#include <string>

#include "fbseg/image.hpp"

namespace fbseg {

enum class LossMode { BceDice, FocalDice };

const char* loss_mode_name(LossMode m);
LossMode parse_loss_mode(const std::string& s);

struct LossConfig {
  LossMode mode = LossMode::BceDice;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double dice_epsilon = 1e-6;
  /// Adds epsilon to the Dice numerator as well, so an all-background
  /// prediction on an all-background target scores 0 instead of 1.
  bool dice_smooth_numerator = true;
  double probability_clamp = 1e-7;

  void validate() const;
};

namespace detail {

template <typename P, typename G>
void check_pair(const Eigen::ArrayBase<P>& p, const Eigen::ArrayBase<G>& g, const char* what) {
  require_same_shape(p, g, what);
  if (p.size() == 0) throw ValidationError(std::string(what) + ": empty input");
}

inline double clamp_probability(double p, double c) { return p < c ? c : (p > 1.0 - c ? 1.0 - c : p); }

}  // namespace detail

/// -(1/N) sum [g log p + (1 - g) log(1 - p)]
template <typename P, typename G>
double bce_loss(const Eigen::ArrayBase<P>& p, const Eigen::ArrayBase<G>& g, double clamp = 1e-7) {
  detail::check_pair(p, g, "bce_loss");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double pi = detail::clamp_probability(static_cast<double>(p.derived().coeff(i)), clamp);
    const double gi = static_cast<double>(g.derived().coeff(i));
    acc += gi * std::log(pi) + (1.0 - gi) * std::log(1.0 - pi);
  }
  return -acc / static_cast<double>(p.size());
}

template <typename P, typename G>
typename P::PlainObject bce_gradient(const Eigen::ArrayBase<P>& p, const Eigen::ArrayBase<G>& g, double clamp = 1e-7) {
  detail::check_pair(p, g, "bce_gradient");
  using Scalar = typename P::Scalar;
  typename P::PlainObject out(p.rows(), p.cols());
  const double inv_n = 1.0 / static_cast<double>(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double pi = detail::clamp_probability(static_cast<double>(p.derived().coeff(i)), clamp);
    const double gi = static_cast<double>(g.derived().coeff(i));
    out.coeffRef(i) = static_cast<Scalar>(-inv_n * (gi / pi - (1.0 - gi) / (1.0 - pi)));
  }
  return out;
}

/// -(1/N) sum alpha_t (1 - p_t)^gamma log p_t, with p_t = p (g = 1) or
/// 1 - p (g = 0) and alpha_t = alpha (g = 1) or 1 - alpha (g = 0).
template <typename P, typename G>
double focal_loss(const Eigen::ArrayBase<P>& p, const Eigen::ArrayBase<G>& g, double alpha, double gamma,
                  double clamp = 1e-7) {
  detail::check_pair(p, g, "focal_loss");
  if (gamma < 0) throw ValidationError("focal_loss: gamma must be >= 0");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double pi = detail::clamp_probability(static_cast<double>(p.derived().coeff(i)), clamp);
    const bool pos = static_cast<double>(g.derived().coeff(i)) >= 0.5;
    const double pt = pos ? pi : 1.0 - pi;
    const double at = pos ? alpha : 1.0 - alpha;
    acc += at * std::pow(1.0 - pt, gamma) * std::log(pt);
  }
  return -acc / static_cast<double>(p.size());
}

template <typename P, typename G>
typename P::PlainObject focal_gradient(const Eigen::ArrayBase<P>& p, const Eigen::ArrayBase<G>& g, double alpha,
                                       double gamma, double clamp = 1e-7) {
  detail::check_pair(p, g, "focal_gradient");
  if (gamma < 0) throw ValidationError("focal_gradient: gamma must be >= 0");
  using Scalar = typename P::Scalar;
  typename P::PlainObject out(p.rows(), p.cols());
  const double inv_n = 1.0 / static_cast<double>(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double pi = detail::clamp_probability(static_cast<double>(p.derived().coeff(i)), clamp);
    const bool pos = static_cast<double>(g.derived().coeff(i)) >= 0.5;
    const double pt = pos ? pi : 1.0 - pi;
    const double at = pos ? alpha : 1.0 - alpha;
    const double q = 1.0 - pt;
    // d/dp_t of -a q^gamma log p_t
    const double dq = gamma == 0.0 ? 0.0 : gamma * std::pow(q, gamma - 1.0) * std::log(pt);
    const double d_pt = -at * (-dq + std::pow(q, gamma) / pt);
    out.coeffRef(i) = static_cast<Scalar>(inv_n * (pos ? d_pt : -d_pt));
  }
  return out;
}

/// 1 - (2 sum pg [+ eps]) / (sum p + sum g + eps)
template <typename P, typename G>
double dice_loss(const Eigen::ArrayBase<P>& p, const Eigen::ArrayBase<G>& g, double epsilon, bool smooth_numerator) {
  detail::check_pair(p, g, "dice_loss");
  if (!(epsilon > 0)) throw ValidationError("dice_loss: epsilon must be > 0");
  const auto pd = p.template cast<double>();
  const auto gd = g.template cast<double>();
  const double inter = (pd * gd).sum();
  const double denom = pd.sum() + gd.sum() + epsilon;
  return 1.0 - (2.0 * inter + (smooth_numerator ? epsilon : 0.0)) / denom;
}

template <typename P, typename G>
typename P::PlainObject dice_gradient(const Eigen::ArrayBase<P>& p, const Eigen::ArrayBase<G>& g, double epsilon,
                                      bool smooth_numerator) {
  detail::check_pair(p, g, "dice_gradient");
  using Scalar = typename P::Scalar;
  const auto pd = p.template cast<double>();
  const auto gd = g.template cast<double>();
  const double num = 2.0 * (pd * gd).sum() + (smooth_numerator ? epsilon : 0.0);
  const double denom = pd.sum() + gd.sum() + epsilon;
  return ((num - 2.0 * gd * denom) / (denom * denom)).template cast<Scalar>();
}

/// (1/N) sum (x - x_hat)^2
template <typename X, typename Y>
double mse_loss(const Eigen::ArrayBase<X>& x, const Eigen::ArrayBase<Y>& x_hat) {
  detail::check_pair(x, x_hat, "mse_loss");
  return (x.template cast<double>() - x_hat.template cast<double>()).square().sum() / static_cast<double>(x.size());
}

/// Gradient of mse_loss with respect to the reconstruction x_hat.
template <typename X, typename Y>
typename Y::PlainObject mse_gradient(const Eigen::ArrayBase<X>& x, const Eigen::ArrayBase<Y>& x_hat) {
  detail::check_pair(x, x_hat, "mse_gradient");
  using Scalar = typename Y::Scalar;
  const double scale = 2.0 / static_cast<double>(x.size());
  return (scale * (x_hat.template cast<double>() - x.template cast<double>())).template cast<Scalar>();
}

/// BCE + Dice or Focal + Dice with unit weights.
template <typename P, typename G>
double total_loss(const LossConfig& cfg, const Eigen::ArrayBase<P>& p, const Eigen::ArrayBase<G>& g) {
  const double dice = dice_loss(p, g, cfg.dice_epsilon, cfg.dice_smooth_numerator);
  switch (cfg.mode) {
    case LossMode::BceDice: return bce_loss(p, g, cfg.probability_clamp) + dice;
    case LossMode::FocalDice: return focal_loss(p, g, cfg.focal_alpha, cfg.focal_gamma, cfg.probability_clamp) + dice;
  }
  throw ValidationError("total_loss: unknown loss mode");
}

template <typename P, typename G>
typename P::PlainObject total_gradient(const LossConfig& cfg, const Eigen::ArrayBase<P>& p,
                                       const Eigen::ArrayBase<G>& g) {
  typename P::PlainObject grad = dice_gradient(p, g, cfg.dice_epsilon, cfg.dice_smooth_numerator);
  switch (cfg.mode) {
    case LossMode::BceDice: grad += bce_gradient(p, g, cfg.probability_clamp); return grad;
    case LossMode::FocalDice:
      grad += focal_gradient(p, g, cfg.focal_alpha, cfg.focal_gamma, cfg.probability_clamp);
      return grad;
  }
  throw ValidationError("total_gradient: unknown loss mode");
}

}  // namespace fbseg

#endif  // FBSEG_LOSSES_HPP
