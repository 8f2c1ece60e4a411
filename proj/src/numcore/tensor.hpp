#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "common/error.hpp"

namespace kglp::num {

using Shape = std::vector<std::size_t>;

/// Cache-line aligned allocator. Vectorized reductions peel a pointer-dependent
/// head, so a fixed alignment keeps results independent of heap layout.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const {
    return true;
  }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major f64 tensor with an optional gradient accumulator.
///
/// Tensor is a shared handle: copies alias the same storage, the way a
/// parameter table is shared between the scorer and the relation memory.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, Buffer values, bool requires_grad = false);
  static Tensor from(Shape shape, const std::vector<double>& values, bool requires_grad = false);
  static Tensor from(Shape shape, std::initializer_list<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  // Writable access is reserved for initializers, optimizers and loaders.
  std::span<double> mutable_data() { return impl_->data; }

  bool requires_grad() const { return impl_->requires_grad; }
  std::span<const double> grad() const { return impl_->grad; }
  // Gradient buffers are written through shared handles during backward.
  std::span<double> mutable_grad() const { return impl_->grad; }
  void zero_grad();

  double item() const;
  double at(std::size_t flat) const { return impl_->data.at(flat); }
  // Row-major element of a rank-2 tensor.
  double at(std::size_t row, std::size_t col) const { return impl_->data.at(row * impl_->shape.back() + col); }

  // Identity of the underlying storage.
  const void* id() const { return impl_.get(); }
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    Buffer data;
    Buffer grad;
    bool requires_grad = false;
  };
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

  std::shared_ptr<Impl> impl_;
};

/// Tape of executed primitives for one worker thread.
class Graph {
 public:
  struct Node {
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> backward;
  };

  static Graph& active();

  bool recording() const { return recording_; }
  void set_recording(bool on) { recording_ = on; }

  void record(std::vector<Tensor> inputs, Tensor output, std::function<void()> backward);
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  /// Accumulates d(loss)/d(leaf) into every requires_grad leaf, then clears the tape.
  void backward(const Tensor& loss);

 private:
  std::vector<Node> nodes_;
  bool recording_ = true;
};

void backward(const Tensor& loss);

// Whether an op producing from `inputs` must be taped.
bool needs_grad(std::initializer_list<const Tensor*> inputs);

/// Disables taping for its lifetime (evaluation paths).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(Graph::active().recording()) { Graph::active().set_recording(false); }
  ~NoGradGuard() { Graph::active().set_recording(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

}  // namespace kglp::num
