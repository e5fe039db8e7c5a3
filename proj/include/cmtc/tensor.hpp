#pragma once

#include <functional>
#include <memory>
#include <span>
#include <unordered_set>
#include <utility>

#include "cmtc/common.hpp"

namespace cmtc {

template <typename T>
class Tape;

namespace detail {

inline std::uint64_t next_tape_uid() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;         // empty until backward touches it
  bool requires_grad = false;
  std::uint64_t tape_uid = 0;  // tape that produced this tensor, 0 for leaves
  std::int64_t tape_id = -1;   // node index within that tape

  std::int64_t numel() const { return static_cast<std::int64_t>(values.size()); }

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(values.size(), T(0));
    return grad;
  }
};

template <typename T>
Tape<T>*& active_tape_slot() {
  thread_local Tape<T>* t = nullptr;
  return t;
}

}  // namespace detail

/// Dense n-dimensional array handle. Values are immutable after creation;
/// the gradient slot is filled in by Tape::backward. Copying a Tensor copies
/// the handle, not the storage.
template <typename T>
class Tensor {
 public:
  Tensor() : impl_(std::make_shared<detail::TensorImpl<T>>()) {}

  static Tensor from(Shape shape, std::vector<T> values) {
    validate_shape(shape);
    if (cmtc::numel(shape) != static_cast<std::int64_t>(values.size())) {
      throw ShapeError("Tensor::from: shape " + shape_str(shape) + " wants " +
                       std::to_string(cmtc::numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    Tensor t;
    t.impl_->shape = std::move(shape);
    t.impl_->values = std::move(values);
    return t;
  }

  static Tensor full(Shape shape, T value) {
    validate_shape(shape);
    Tensor t;
    t.impl_->values.assign(static_cast<std::size_t>(cmtc::numel(shape)), value);
    t.impl_->shape = std::move(shape);
    return t;
  }

  static Tensor zeros(Shape shape) { return full(std::move(shape), T(0)); }
  static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }
  static Tensor scalar(T value) { return full({1}, value); }

  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, double mean = 0.0) {
    validate_shape(shape);
    Tensor t;
    const auto n = static_cast<std::size_t>(cmtc::numel(shape));
    t.impl_->values.resize(n);
    for (auto& v : t.impl_->values) v = static_cast<T>(mean + stddev * rng.normal());
    t.impl_->shape = std::move(shape);
    return t;
  }

  static Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi) {
    validate_shape(shape);
    Tensor t;
    const auto n = static_cast<std::size_t>(cmtc::numel(shape));
    t.impl_->values.resize(n);
    for (auto& v : t.impl_->values) v = static_cast<T>(rng.uniform(lo, hi));
    t.impl_->shape = std::move(shape);
    return t;
  }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::int64_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::int64_t numel() const { return impl_->numel(); }

  std::span<const T> values() const { return impl_->values; }
  std::span<const T> grad() const { return impl_->grad; }
  bool has_grad() const { return !impl_->grad.empty(); }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
  }

  void zero_grad() { impl_->grad.clear(); }

  /// Scalar access; throws unless numel() == 1.
  T item() const {
    if (impl_->numel() != 1) {
      throw ShapeError("Tensor::item: tensor has shape " + shape_str(impl_->shape));
    }
    return impl_->values[0];
  }

  /// Copy of the values with no graph history.
  Tensor detach() const {
    Tensor t;
    t.impl_->shape = impl_->shape;
    t.impl_->values = impl_->values;
    return t;
  }

  detail::TensorImpl<T>* impl() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl<T>>& impl_ptr() const { return impl_; }

 private:
  static void validate_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeError("Tensor: empty shape");
    for (auto d : shape) {
      if (d <= 0) throw ShapeError("Tensor: non-positive dimension in " + shape_str(shape));
    }
  }

  std::shared_ptr<detail::TensorImpl<T>> impl_;
};

/// Reverse-mode tape. Ops record one node per output while a GradScope is
/// active; backward() replays the nodes in reverse creation order, which is
/// a valid topological order by construction.
template <typename T>
class Tape {
 public:
  Tape() : uid_(detail::next_tape_uid()) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return nodes_.size(); }
  std::uint64_t uid() const { return uid_; }

  /// Drops all recorded nodes and invalidates tensors produced so far.
  void clear() {
    nodes_.clear();
    leaves_.clear();
    uid_ = detail::next_tape_uid();
  }

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape once in reverse order.
  /// Repeated calls without zero_grad accumulate. Leaves that were recorded
  /// as inputs but never reached by the loss end up with zero grads.
  void backward(const Tensor<T>& loss) {
    auto* li = loss.impl();
    if (li->numel() != 1) {
      throw ValueError("backward: loss must be scalar, got shape " + shape_str(li->shape));
    }
    if (li->tape_uid != uid_) {
      throw ValueError("backward: loss is not connected to this tape");
    }
    // Intermediate grads are per-sweep scratch; only leaf grads accumulate
    // across repeated backward calls.
    for (auto& node : nodes_) node.out->grad.clear();
    li->grad_buffer()[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (!it->out->grad.empty()) it->backward();
    }
    for (const auto& leaf : leaves_) leaf->grad_buffer();
  }

  /// Recording interface used by op implementations.
  void record(const std::vector<std::shared_ptr<detail::TensorImpl<T>>>& inputs,
              const std::shared_ptr<detail::TensorImpl<T>>& out,
              std::function<void()> backward_fn) {
    for (const auto& in : inputs) {
      if (in->requires_grad && in->tape_uid != uid_) leaves_.insert(in);
    }
    out->requires_grad = true;
    out->tape_uid = uid_;
    out->tape_id = static_cast<std::int64_t>(nodes_.size());
    nodes_.push_back(Node{out, std::move(backward_fn)});
  }

 private:
  struct Node {
    std::shared_ptr<detail::TensorImpl<T>> out;
    std::function<void()> backward;
  };

  std::uint64_t uid_;
  std::vector<Node> nodes_;
  std::unordered_set<std::shared_ptr<detail::TensorImpl<T>>> leaves_;
};

template <typename T>
Tape<T>* active_tape() {
  return detail::active_tape_slot<T>();
}

/// RAII guard making a tape the recording target for ops on this thread.
template <typename T>
class GradScope {
 public:
  explicit GradScope(Tape<T>& tape) : prev_(detail::active_tape_slot<T>()) {
    detail::active_tape_slot<T>() = &tape;
  }
  GradScope(const GradScope&) = delete;
  GradScope& operator=(const GradScope&) = delete;
  ~GradScope() { detail::active_tape_slot<T>() = prev_; }

 private:
  Tape<T>* prev_;
};

/// RAII guard suppressing recording (inference mode).
template <typename T>
class NoGradScope {
 public:
  NoGradScope() : prev_(detail::active_tape_slot<T>()) {
    detail::active_tape_slot<T>() = nullptr;
  }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;
  ~NoGradScope() { detail::active_tape_slot<T>() = prev_; }

 private:
  Tape<T>* prev_;
};

}  // namespace cmtc
