#include "numcore/optim.hpp"

#include <cmath>

#include "numcore/rng.hpp"

namespace kglp::num {

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    if (!p.defined() || !p.requires_grad()) {
      throw ContractError("adam: every parameter must carry a gradient buffer");
    }
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double corr1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double corr2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    auto w = p.mutable_data();
    auto g = p.mutable_grad();
    if (g.size() != w.size()) throw ContractError("adam: parameter " + std::to_string(k) + " has no gradient");
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double m_hat = m[i] / corr1;
      const double v_hat = v[i] / corr2;
      w[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
      g[i] = 0.0;
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double xavier_bound(const Shape& shape) {
  if (shape.empty()) throw ContractError("xavier_init: shape needs at least one dimension");
  double fan_in, fan_out;
  if (shape.size() == 1) {
    fan_in = fan_out = static_cast<double>(shape[0]);
  } else {
    double field = 1.0;
    for (std::size_t i = 2; i < shape.size(); ++i) field *= static_cast<double>(shape[i]);
    fan_out = static_cast<double>(shape[0]) * field;
    fan_in = static_cast<double>(shape[1]) * field;
  }
  return std::sqrt(6.0 / (fan_in + fan_out));
}

Tensor xavier_init(const Shape& shape, std::uint64_t seed, bool requires_grad) {
  const double bound = xavier_bound(shape);
  Rng rng(seed);
  Tensor t = Tensor::zeros(shape, requires_grad);
  for (auto& v : t.mutable_data()) v = (2.0 * uniform01(rng) - 1.0) * bound;
  return t;
}

}  // namespace kglp::num
