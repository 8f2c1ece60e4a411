#include "numcore/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace kglp::num {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

[[noreturn]] void shape_error(const std::string& op, const std::string& what) {
  throw ContractError(op + ": " + what);
}

ConstMapMat view(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMapMat(t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MapMat grad_view(const Tensor& t, std::size_t rows, std::size_t cols) {
  return MapMat(t.mutable_grad().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

bool has_grad(const Tensor& t) { return t.defined() && t.requires_grad(); }

enum class Broadcast { same, scalar, row, column };

Broadcast broadcast_mode(const std::string& op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::same;
  if (b.numel() == 1) return Broadcast::scalar;
  const std::size_t cols = a.shape().back();
  const bool row_shaped = b.rank() == 1 || (b.rank() == 2 && b.dim(0) == 1);
  if (row_shaped && b.numel() == cols) return Broadcast::row;
  if (a.rank() == 2 && b.rank() == 2 && b.dim(1) == 1 && b.dim(0) == a.dim(0)) return Broadcast::column;
  shape_error(op, "cannot broadcast " + shape_str(b.shape()) + " against " + shape_str(a.shape()));
}

std::size_t broadcast_index(Broadcast mode, std::size_t i, std::size_t cols) {
  switch (mode) {
    case Broadcast::same: return i;
    case Broadcast::scalar: return 0;
    case Broadcast::row: return i % cols;
    case Broadcast::column: return i / cols;
  }
  return i;
}

enum class Arith { add, sub, mul };

Tensor binary(const char* name, Arith kind, const Tensor& a, const Tensor& b) {
  const Broadcast mode = broadcast_mode(name, a, b);
  const std::size_t cols = a.shape().back();
  const bool grad = needs_grad({&a, &b});
  Tensor out = Tensor::zeros(a.shape(), grad);
  auto od = out.mutable_data();
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < od.size(); ++i) {
    const double x = ad[i];
    const double y = bd[broadcast_index(mode, i, cols)];
    od[i] = kind == Arith::add ? x + y : kind == Arith::sub ? x - y : x * y;
  }
  if (!grad) return out;
  Graph::active().record({a, b}, out, [a, b, out, mode, cols, kind]() mutable {
    const auto g = out.grad();
    if (has_grad(a)) {
      auto ga = a.mutable_grad();
      if (kind == Arith::mul) {
        const auto bd = b.data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bd[broadcast_index(mode, i, cols)];
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
    }
    if (has_grad(b)) {
      auto gb = b.mutable_grad();
      const auto ad = a.data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const std::size_t j = broadcast_index(mode, i, cols);
        switch (kind) {
          case Arith::add: gb[j] += g[i]; break;
          case Arith::sub: gb[j] -= g[i]; break;
          case Arith::mul: gb[j] += g[i] * ad[i]; break;
        }
      }
    }
  });
  return out;
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  const bool grad = needs_grad({&x});
  Tensor out = Tensor::zeros(x.shape(), grad);
  auto od = out.mutable_data();
  const auto xd = x.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = fwd(xd[i]);
  if (!grad) return out;
  Graph::active().record({x}, out, [x, out, deriv]() mutable {
    const auto g = out.grad();
    const auto xd = x.data();
    const auto yd = out.data();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xd[i], yd[i]);
  });
  return out;
}

double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  if (a.rank() != 2 || b.rank() != 2) {
    shape_error("matmul", "expects rank-2 operands, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1);
  const std::size_t bk = transpose_b ? b.dim(1) : b.dim(0);
  const std::size_t n = transpose_b ? b.dim(0) : b.dim(1);
  if (k != bk) {
    shape_error("matmul", "inner dimensions differ: " + shape_str(a.shape()) + " x " +
                              shape_str(b.shape()) + (transpose_b ? "^T" : ""));
  }
  const bool grad = needs_grad({&a, &b});
  Tensor out = Tensor::zeros({m, n}, grad);
  MapMat c(out.mutable_data().data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  if (transpose_b) {
    c.noalias() = view(a, m, k) * view(b, n, k).transpose();
  } else {
    c.noalias() = view(a, m, k) * view(b, k, n);
  }
  if (!grad) return out;
  Graph::active().record({a, b}, out, [a, b, out, m, k, n, transpose_b]() mutable {
    const ConstMapMat g(out.grad().data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    if (has_grad(a)) {
      if (transpose_b) {
        grad_view(a, m, k).noalias() += g * view(b, n, k);
      } else {
        grad_view(a, m, k).noalias() += g * view(b, k, n).transpose();
      }
    }
    if (has_grad(b)) {
      if (transpose_b) {
        grad_view(b, n, k).noalias() += g.transpose() * view(a, m, k);
      } else {
        grad_view(b, k, n).noalias() += view(a, m, k).transpose() * g;
      }
    }
  });
  return out;
}

Tensor embedding_lookup(const Tensor& table, std::span<const std::int64_t> ids) {
  if (table.rank() != 2) shape_error("embedding_lookup", "table must be rank 2, got " + shape_str(table.shape()));
  if (ids.empty()) shape_error("embedding_lookup", "empty id list");
  const std::size_t rows = table.dim(0), d = table.dim(1);
  for (auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= rows) {
      throw ContractError("embedding_lookup: id " + std::to_string(id) + " outside table of " +
                          std::to_string(rows) + " rows");
    }
  }
  const bool grad = needs_grad({&table});
  Tensor out = Tensor::zeros({ids.size(), d}, grad);
  auto od = out.mutable_data();
  const auto td = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(td.begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d, od.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  if (!grad) return out;
  std::vector<std::int64_t> saved(ids.begin(), ids.end());
  Graph::active().record({table}, out, [table, out, saved = std::move(saved), d]() mutable {
    const auto g = out.grad();
    auto gt = table.mutable_grad();
    for (std::size_t i = 0; i < saved.size(); ++i) {
      const std::size_t base = static_cast<std::size_t>(saved[i]) * d;
      for (std::size_t j = 0; j < d; ++j) gt[base + j] += g[i * d + j];
    }
  });
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary("add", Arith::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary("sub", Arith::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary("mul", Arith::mul, a, b); }

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) shape_error("concat", "no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) shape_error("concat", "axis " + std::to_string(axis) + " out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) shape_error("concat", "incompatible shapes " + shape_str(first) + " and " + shape_str(s));
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];

  bool grad = false;
  for (const auto& p : parts) grad = grad || needs_grad({&p});
  Tensor out = Tensor::zeros(out_shape, grad);
  auto od = out.mutable_data();
  const std::size_t out_stride = out_shape[axis] * inner;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t chunk = p.dim(axis) * inner;
    const auto pd = p.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pd.begin() + static_cast<std::ptrdiff_t>(o * chunk), chunk,
                  od.begin() + static_cast<std::ptrdiff_t>(o * out_stride + offset));
    }
    offset += chunk;
  }
  if (!grad) return out;
  Graph::active().record(parts, out, [parts, out, outer, inner, axis, out_stride]() mutable {
    const auto g = out.grad();
    std::size_t offset = 0;
    for (auto& p : parts) {
      const std::size_t chunk = p.dim(axis) * inner;
      if (has_grad(p)) {
        auto gp = p.mutable_grad();
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t j = 0; j < chunk; ++j) gp[o * chunk + j] += g[o * out_stride + offset + j];
        }
      }
      offset += chunk;
    }
  });
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    shape_error("reshape", "cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  const bool grad = needs_grad({&x});
  Tensor out = Tensor::from(std::move(shape), Buffer(x.data().begin(), x.data().end()), grad);
  if (!grad) return out;
  Graph::active().record({x}, out, [x, out]() mutable {
    const auto g = out.grad();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
  return out;
}

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0 ? v : 0.0; },
               [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor abs(const Tensor& x) {
  return unary(x, [](double v) { return std::fabs(v); },
               [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor softmax(const Tensor& x, std::size_t axis, std::span<const std::int64_t> masked) {
  if (axis >= x.rank()) shape_error("softmax", "axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
  if (!masked.empty() && (x.rank() != 2 || axis != 1 || masked.size() != x.dim(0))) {
    shape_error("softmax", "mask needs rank-2 input along axis 1 with one entry per row");
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t len = x.dim(axis);
  for (auto m : masked) {
    if (m >= static_cast<std::int64_t>(len)) {
      throw ContractError("softmax: masked index " + std::to_string(m) + " outside axis of length " + std::to_string(len));
    }
    if (m >= 0 && len == 1) throw ContractError("softmax: masking the only entry leaves an empty distribution");
  }

  const bool grad = needs_grad({&x});
  Tensor out = Tensor::zeros(x.shape(), grad);
  auto od = out.mutable_data();
  const auto xd = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    const std::int64_t skip = masked.empty() ? -1 : masked[o];
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < len; ++k) {
        if (static_cast<std::int64_t>(k) != skip) mx = std::max(mx, xd[base + k * inner]);
      }
      double total = 0.0;
      for (std::size_t k = 0; k < len; ++k) {
        const double e = static_cast<std::int64_t>(k) == skip ? 0.0 : std::exp(xd[base + k * inner] - mx);
        od[base + k * inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < len; ++k) od[base + k * inner] /= total;
    }
  }
  if (!grad) return out;
  Graph::active().record({x}, out, [x, out, outer, inner, len]() mutable {
    const auto g = out.grad();
    const auto y = out.data();
    auto gx = x.mutable_grad();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < len; ++k) dot += g[base + k * inner] * y[base + k * inner];
        for (std::size_t k = 0; k < len; ++k) {
          const std::size_t i = base + k * inner;
          gx[i] += y[i] * (g[i] - dot);
        }
      }
    }
  });
  return out;
}

Tensor dropout(const Tensor& x, double rate, bool train, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  if (!train || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  // Each 64-bit draw decides two elements, one per 32-bit half.
  const auto threshold = static_cast<std::uint64_t>(std::ldexp(rate, 32));
  std::vector<double> mask(x.numel());
  for (std::size_t i = 0; i < mask.size(); i += 2) {
    const std::uint64_t bits = rng();
    mask[i] = (bits & 0xffffffffu) < threshold ? 0.0 : keep_scale;
    if (i + 1 < mask.size()) mask[i + 1] = (bits >> 32) < threshold ? 0.0 : keep_scale;
  }
  const auto xd = x.data();
  Buffer values(mask.size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = xd[i] * mask[i];
  const bool grad = needs_grad({&x});
  Tensor out = Tensor::from(x.shape(), std::move(values), grad);
  if (!grad) return out;
  Graph::active().record({x}, out, [x, out, mask = std::move(mask)]() mutable {
    const auto g = out.grad();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
  });
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 4 || weight.rank() != 4) {
    shape_error("conv2d", "expects input [n, c, h, w] and filters [o, c, kh, kw], got " + shape_str(x.shape()) +
                              " and " + shape_str(weight.shape()));
  }
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != cin) shape_error("conv2d", "channel mismatch " + shape_str(x.shape()) + " vs " + shape_str(weight.shape()));
  if (kh > h || kw > w) shape_error("conv2d", "kernel " + shape_str(weight.shape()) + " larger than input " + shape_str(x.shape()));
  if (bias.defined() && (bias.numel() != cout)) shape_error("conv2d", "bias " + shape_str(bias.shape()) + " does not match " + std::to_string(cout) + " filters");
  const std::size_t oh = h - kh + 1, ow = w - kw + 1;
  const std::size_t patch = cin * kh * kw, positions = oh * ow;

  // im2col: one [patch, positions] block per example.
  Buffer cols(n * patch * positions);
  const auto xd = x.data();
  for (std::size_t b = 0; b < n; ++b) {
    double* cb = cols.data() + b * patch * positions;
    for (std::size_t c = 0; c < cin; ++c) {
      for (std::size_t i = 0; i < kh; ++i) {
        for (std::size_t j = 0; j < kw; ++j) {
          const std::size_t row = (c * kh + i) * kw + j;
          for (std::size_t y = 0; y < oh; ++y) {
            const double* src = xd.data() + ((b * cin + c) * h + y + i) * w + j;
            std::copy_n(src, ow, cb + row * positions + y * ow);
          }
        }
      }
    }
  }

  const bool grad = needs_grad({&x, &weight, &bias});
  Tensor out = Tensor::zeros({n, cout, oh, ow}, grad);
  const auto wmat = view(weight, cout, patch);
  for (std::size_t b = 0; b < n; ++b) {
    MapMat ob(out.mutable_data().data() + b * cout * positions, static_cast<Eigen::Index>(cout),
              static_cast<Eigen::Index>(positions));
    ob.noalias() = wmat * ConstMapMat(cols.data() + b * patch * positions, static_cast<Eigen::Index>(patch),
                                      static_cast<Eigen::Index>(positions));
    if (bias.defined()) {
      for (std::size_t o = 0; o < cout; ++o) ob.row(static_cast<Eigen::Index>(o)).array() += bias.data()[o];
    }
  }
  if (!grad) return out;
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  Graph::active().record(std::move(inputs), out,
                         [x, weight, bias, out, cols = std::move(cols), n, cin, h, w, cout, kh, kw, oh, ow, patch,
                          positions]() mutable {
    const auto g = out.grad();
    Buffer dcols(patch * positions);
    for (std::size_t b = 0; b < n; ++b) {
      ConstMapMat gb(g.data() + b * cout * positions, static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(positions));
      ConstMapMat cb(cols.data() + b * patch * positions, static_cast<Eigen::Index>(patch),
                     static_cast<Eigen::Index>(positions));
      if (has_grad(weight)) grad_view(weight, cout, patch).noalias() += gb * cb.transpose();
      if (has_grad(bias)) {
        auto gbias = bias.mutable_grad();
        for (std::size_t o = 0; o < cout; ++o) gbias[o] += gb.row(static_cast<Eigen::Index>(o)).sum();
      }
      if (has_grad(x)) {
        MapMat dc(dcols.data(), static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(positions));
        dc.noalias() = view(weight, cout, patch).transpose() * gb;
        auto gx = x.mutable_grad();
        for (std::size_t c = 0; c < cin; ++c) {
          for (std::size_t i = 0; i < kh; ++i) {
            for (std::size_t j = 0; j < kw; ++j) {
              const std::size_t row = (c * kh + i) * kw + j;
              for (std::size_t y = 0; y < oh; ++y) {
                double* dst = gx.data() + ((b * cin + c) * h + y + i) * w + j;
                const double* src = dcols.data() + row * positions + y * ow;
                for (std::size_t q = 0; q < ow; ++q) dst[q] += src[q];
              }
            }
          }
        }
      }
    }
  });
  return out;
}

BatchStats BatchStats::make(std::size_t channels) {
  return BatchStats{Tensor::zeros({channels}), Tensor::full({channels}, 1.0), 0.1, 1e-5};
}

Tensor batch_standardize(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchStats& stats, bool train) {
  if (x.rank() < 2) shape_error("batch_standardize", "expects [n, c, ...], got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1);
  const std::size_t inner = x.numel() / (n * c);
  if (gamma.numel() != c || beta.numel() != c || stats.running_mean.numel() != c || stats.running_var.numel() != c) {
    shape_error("batch_standardize", "parameters do not match " + std::to_string(c) + " channels of " + shape_str(x.shape()));
  }
  const std::size_t count = n * inner;
  const auto xd = x.data();
  std::vector<double> mean(c, 0.0), inv_std(c, 0.0);
  if (train) {
    auto rm = stats.running_mean.mutable_data();
    auto rv = stats.running_var.mutable_data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* p = xd.data() + (b * c + ch) * inner;
        for (std::size_t i = 0; i < inner; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* p = xd.data() + (b * c + ch) * inner;
        for (std::size_t i = 0; i < inner; ++i) ss += (p[i] - mu) * (p[i] - mu);
      }
      const double var = ss / static_cast<double>(count);
      const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
      mean[ch] = mu;
      inv_std[ch] = 1.0 / std::sqrt(var + stats.eps);
      rm[ch] = (1.0 - stats.momentum) * rm[ch] + stats.momentum * mu;
      rv[ch] = (1.0 - stats.momentum) * rv[ch] + stats.momentum * unbiased;
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = stats.running_mean.data()[ch];
      inv_std[ch] = 1.0 / std::sqrt(stats.running_var.data()[ch] + stats.eps);
    }
  }

  const bool grad = needs_grad({&x, &gamma, &beta});
  Tensor out = Tensor::zeros(x.shape(), grad);
  std::vector<double> xhat(x.numel());
  auto od = out.mutable_data();
  const auto gd = gamma.data();
  const auto bd = beta.data();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (b * c + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        xhat[base + i] = (xd[base + i] - mean[ch]) * inv_std[ch];
        od[base + i] = gd[ch] * xhat[base + i] + bd[ch];
      }
    }
  }
  if (!grad) return out;
  Graph::active().record({x, gamma, beta}, out,
                         [x, gamma, beta, out, xhat = std::move(xhat), inv_std = std::move(inv_std), n, c, inner,
                          count, train]() mutable {
    const auto g = out.grad();
    const auto gd = gamma.data();
    std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t base = (b * c + ch) * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          sum_g[ch] += g[base + i];
          sum_gx[ch] += g[base + i] * xhat[base + i];
        }
      }
    }
    if (has_grad(gamma)) {
      auto gg = gamma.mutable_grad();
      for (std::size_t ch = 0; ch < c; ++ch) gg[ch] += sum_gx[ch];
    }
    if (has_grad(beta)) {
      auto gb = beta.mutable_grad();
      for (std::size_t ch = 0; ch < c; ++ch) gb[ch] += sum_g[ch];
    }
    if (!has_grad(x)) return;
    auto gx = x.mutable_grad();
    const double m = static_cast<double>(count);
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t base = (b * c + ch) * inner;
        const double scale = gd[ch] * inv_std[ch];
        for (std::size_t i = 0; i < inner; ++i) {
          if (train) {
            gx[base + i] += scale * (g[base + i] - sum_g[ch] / m - xhat[base + i] * sum_gx[ch] / m);
          } else {
            gx[base + i] += scale * g[base + i];
          }
        }
      }
    }
  });
  return out;
}

Tensor sum(const Tensor& x, std::optional<std::size_t> axis) {
  const bool grad = needs_grad({&x});
  if (!axis) {
    double total = 0.0;
    for (double v : x.data()) total += v;
    Tensor out = Tensor::full({1}, total, grad);
    if (!grad) return out;
    Graph::active().record({x}, out, [x, out]() mutable {
      const double g = out.grad()[0];
      for (auto& v : x.mutable_grad()) v += g;
    });
    return out;
  }
  const std::size_t ax = *axis;
  if (ax >= x.rank()) shape_error("sum", "axis " + std::to_string(ax) + " out of range for " + shape_str(x.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= x.dim(i);
  for (std::size_t i = ax + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t len = x.dim(ax);
  Shape out_shape;
  for (std::size_t i = 0; i < x.rank(); ++i) {
    if (i != ax) out_shape.push_back(x.dim(i));
  }
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor out = Tensor::zeros(out_shape, grad);
  auto od = out.mutable_data();
  const auto xd = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < len; ++k) {
      for (std::size_t in = 0; in < inner; ++in) od[o * inner + in] += xd[(o * len + k) * inner + in];
    }
  }
  if (!grad) return out;
  Graph::active().record({x}, out, [x, out, outer, inner, len]() mutable {
    const auto g = out.grad();
    auto gx = x.mutable_grad();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t k = 0; k < len; ++k) {
        for (std::size_t in = 0; in < inner; ++in) gx[(o * len + k) * inner + in] += g[o * inner + in];
      }
    }
  });
  return out;
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  if (logits.shape() != targets.shape()) {
    shape_error("bce_with_logits", "logits " + shape_str(logits.shape()) + " vs targets " + shape_str(targets.shape()));
  }
  const auto s = logits.data();
  const auto t = targets.data();
  const double count = static_cast<double>(s.size());
  double total = 0.0;
  // -[t log sig(s) + (1 - t) log(1 - sig(s))] = max(s, 0) - s t + log(1 + exp(-|s|))
  for (std::size_t i = 0; i < s.size(); ++i) {
    total += std::max(s[i], 0.0) - s[i] * t[i] + std::log1p(std::exp(-std::fabs(s[i])));
  }
  const bool grad = needs_grad({&logits, &targets});
  Tensor out = Tensor::full({1}, total / count, grad);
  if (!grad) return out;
  Graph::active().record({logits, targets}, out, [logits, targets, out, count]() mutable {
    const double g = out.grad()[0];
    const auto s = logits.data();
    const auto t = targets.data();
    if (has_grad(logits)) {
      auto gs = logits.mutable_grad();
      for (std::size_t i = 0; i < s.size(); ++i) gs[i] += g * (stable_sigmoid(s[i]) - t[i]) / count;
    }
    if (has_grad(targets)) {
      auto gt = targets.mutable_grad();
      for (std::size_t i = 0; i < s.size(); ++i) gt[i] -= g * s[i] / count;
    }
  });
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets) {
  if (logits.rank() != 2) shape_error("cross_entropy", "expects logits [n, K], got " + shape_str(logits.shape()));
  if (targets.empty()) shape_error("cross_entropy", "empty target list");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (targets.size() != n) {
    shape_error("cross_entropy", std::to_string(targets.size()) + " targets for " + std::to_string(n) + " rows");
  }
  for (auto t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= k) {
      throw ContractError("cross_entropy: target " + std::to_string(t) + " outside " + std::to_string(k) + " classes");
    }
  }
  const auto s = logits.data();
  std::vector<double> probs(n * k);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = s.data() + r * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < k; ++j) probs[r * k + j] = std::exp(row[j] - lse);
    total += lse - row[targets[r]];
  }
  const bool grad = needs_grad({&logits});
  Tensor out = Tensor::full({1}, total / static_cast<double>(n), grad);
  if (!grad) return out;
  std::vector<std::int64_t> saved(targets.begin(), targets.end());
  Graph::active().record({logits}, out, [logits, out, probs = std::move(probs), saved = std::move(saved), n, k]() mutable {
    const double g = out.grad()[0] / static_cast<double>(n);
    auto gl = logits.mutable_grad();
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < k; ++j) gl[r * k + j] += g * probs[r * k + j];
      gl[r * k + static_cast<std::size_t>(saved[r])] -= g;
    }
  });
  return out;
}

}  // namespace kglp::num
