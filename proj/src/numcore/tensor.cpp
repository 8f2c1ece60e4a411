#include "numcore/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace kglp::num {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

namespace {

#if defined(__GLIBC__)
// Training allocates and frees the same multi-megabyte buffers every batch.
// Served by mmap, each one costs fresh page faults; keep them on the heap.
const bool kHeapTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return true;
}();
#endif

void check_shape(const Shape& shape) {
  if (shape.empty()) throw ContractError("tensor: shape must have at least one dimension");
  for (auto d : shape) {
    if (d == 0) throw ContractError("tensor: zero-sized dimension in shape " + shape_str(shape));
  }
}

}  // namespace

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  check_shape(shape);
  auto impl = std::make_shared<Impl>();
  const auto n = shape_numel(shape);
  impl->shape = std::move(shape);
  impl->data.assign(n, value);
  impl->requires_grad = requires_grad;
  if (requires_grad) impl->grad.assign(n, 0.0);
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::from(Shape shape, Buffer values, bool requires_grad) {
  check_shape(shape);
  if (shape_numel(shape) != values.size()) {
    throw ContractError("tensor: shape " + shape_str(shape) + " does not hold " +
                        std::to_string(values.size()) + " values");
  }
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  if (requires_grad) impl->grad.assign(impl->data.size(), 0.0);
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, const std::vector<double>& values, bool requires_grad) {
  return from(std::move(shape), Buffer(values.begin(), values.end()), requires_grad);
}

Tensor Tensor::from(Shape shape, std::initializer_list<double> values, bool requires_grad) {
  return from(std::move(shape), Buffer(values), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return full({1}, value, requires_grad);
}

void Tensor::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return impl_->data[0];
}

Graph& Graph::active() {
  thread_local Graph graph;
  return graph;
}

bool needs_grad(std::initializer_list<const Tensor*> inputs) {
  if (!Graph::active().recording()) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t && t->defined() && t->requires_grad(); });
}

void Graph::record(std::vector<Tensor> inputs, Tensor output, std::function<void()> backward) {
  nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(backward)});
}

void Graph::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) {
    nodes_.clear();
    throw ContractError("backward: loss does not depend on any parameter");
  }
  // The loss must be the output of a taped op (or a leaf parameter itself).
  Tensor seed = loss;
  seed.mutable_grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
  nodes_.clear();
}

void backward(const Tensor& loss) { Graph::active().backward(loss); }

}  // namespace kglp::num
