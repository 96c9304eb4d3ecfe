#include "phlie/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace phlie {

std::string optimizer_name(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "ranger-like"; }

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "ranger-like" || s == "ranger") return OptimizerKind::ranger;
  throw std::invalid_argument("unknown optimizer '" + s + "'");
}

std::unique_ptr<Optimizer> Optimizer::make(OptimizerKind kind, std::size_t n) {
  if (kind == OptimizerKind::adam) return std::make_unique<Adam>(n);
  return std::make_unique<Ranger>(n);
}

Adam::Adam(std::size_t n, double beta1, double beta2, double eps)
    : b1_(beta1), b2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

void Adam::step(std::vector<double>& theta, const std::vector<double>& grad, double lr) {
  if (theta.size() != m_.size() || grad.size() != m_.size()) throw std::invalid_argument("adam: size mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    m_[i] = b1_ * m_[i] + (1.0 - b1_) * grad[i];
    v_[i] = b2_ * v_[i] + (1.0 - b2_) * grad[i] * grad[i];
    theta[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

Ranger::Ranger(std::size_t n, std::size_t k, double alpha, double beta1, double beta2, double eps)
    : k_(k), alpha_(alpha), b1_(beta1), b2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0), slow_(n, 0.0) {}

void Ranger::step(std::vector<double>& theta, const std::vector<double>& grad, double lr) {
  if (theta.size() != m_.size() || grad.size() != m_.size()) throw std::invalid_argument("ranger: size mismatch");
  if (!slow_init_) {
    slow_ = theta;
    slow_init_ = true;
  }
  ++t_;
  const double t = static_cast<double>(t_);
  const double b2t = std::pow(b2_, t);
  const double c1 = 1.0 - std::pow(b1_, t);
  const double rho_inf = 2.0 / (1.0 - b2_) - 1.0;
  const double rho = rho_inf - 2.0 * t * b2t / (1.0 - b2t);
  double rect = 0.0;
  const bool adaptive = rho > 5.0;
  if (adaptive) {
    rect = std::sqrt((rho - 4.0) * (rho - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho));
  }
  for (std::size_t i = 0; i < theta.size(); ++i) {
    m_[i] = b1_ * m_[i] + (1.0 - b1_) * grad[i];
    v_[i] = b2_ * v_[i] + (1.0 - b2_) * grad[i] * grad[i];
    const double mh = m_[i] / c1;
    if (adaptive) {
      const double vh = std::sqrt(v_[i] / (1.0 - b2t));
      theta[i] -= lr * rect * mh / (vh + eps_);
    } else {
      theta[i] -= lr * mh;
    }
  }
  if (t_ % k_ == 0) {
    for (std::size_t i = 0; i < theta.size(); ++i) {
      slow_[i] += alpha_ * (theta[i] - slow_[i]);
      theta[i] = slow_[i];
    }
  }
}

}  // namespace phlie
