#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "numcore/rng.hpp"
#include "numcore/tensor.hpp"

// Differentiable primitives. Every op validates shapes, computes eagerly and,
// when an input requires a gradient, tapes its local gradient rule on the
// active Graph.
namespace kglp::num {

/// a [m, k] x b [k, n] -> [m, n]; with transpose_b, b is [n, k].
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);

/// Gathers rows of table [V, d] -> [ids.size(), d]; gradient scatter-adds back.
Tensor embedding_lookup(const Tensor& table, std::span<const std::int64_t> ids);

// Element-wise binary ops. `b` may equal a's shape or broadcast as a scalar,
// a row ([c] or [1, c] against [r, c]) or a column ([r, 1] against [r, c]).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

/// Concatenation along `axis`; all other dimensions must agree.
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor reshape(const Tensor& x, Shape shape);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor abs(const Tensor& x);

/// Softmax along `axis`. For rank-2 input along axis 1, `masked[row]` (when
/// non-negative) names a column whose logit is treated as -inf: its
/// probability is exactly 0 and the rest renormalize.
Tensor softmax(const Tensor& x, std::size_t axis, std::span<const std::int64_t> masked = {});

/// Inverted dropout; identity when !train or rate == 0.
Tensor dropout(const Tensor& x, double rate, bool train, Rng& rng);

/// x [n, c_in, h, w] * w [c_out, c_in, kh, kw] (+ bias [c_out]), stride 1, no padding.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

/// Running statistics for batch_standardize; not trained by the optimizer.
struct BatchStats {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  static BatchStats make(std::size_t channels);
};

/// Per-channel standardization of x [n, c, ...] over the batch and trailing
/// axes, followed by the learnable affine map gamma * x + beta. In training
/// mode batch statistics are used and the running estimates updated; in eval
/// mode the running estimates are used.
Tensor batch_standardize(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         BatchStats& stats, bool train);

/// Sum over `axis` (dropping it); axis == std::nullopt sums everything to [1].
Tensor sum(const Tensor& x, std::optional<std::size_t> axis = std::nullopt);

/// Mean binary cross entropy over every cell, computed from logits.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);

/// Mean negative log-likelihood of integer targets under softmax(logits [n, K]).
Tensor cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets);

}  // namespace kglp::num
