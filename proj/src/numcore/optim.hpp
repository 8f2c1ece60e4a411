#pragma once

#include <cstdint>
#include <vector>

#include "numcore/tensor.hpp"

namespace kglp::num {

/// Adam with bias correction. Owns one pair of moment buffers per parameter.
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, double lr = 0.003, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

  /// Applies one update from the accumulated gradients, then zeroes them.
  void step();
  void zero_grad();

  std::int64_t steps() const { return t_; }
  double learning_rate() const { return lr_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

/// Uniform(-b, b) with b = sqrt(6 / (fan_in + fan_out)). For rank >= 2 the
/// leading axis is fan-out, the second fan-in, trailing axes a receptive field.
Tensor xavier_init(const Shape& shape, std::uint64_t seed, bool requires_grad = true);
double xavier_bound(const Shape& shape);

}  // namespace kglp::num
