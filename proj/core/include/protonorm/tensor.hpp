// Copyright (c) 2026, The ProtoNorm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense double-precision tensors and a tape for reverse-mode differentiation.
//
// A Tensor is a cheap shared handle. Operations in ops.hpp record a node on
// the active Tape whenever one is installed (see Tape::Scope) and at least one
// input requires a gradient. Without an active tape, operations are plain
// forward computations with no bookkeeping.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace protonorm {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  // Identity of the tape record that produced this tensor; 0 for leaves.
  std::uint64_t tape_uid = 0;
  std::uint64_t tape_generation = 0;

  void accumulate_grad(std::size_t i, double g) {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    grad[i] += g;
  }
  std::span<double> grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }
  // Negative axes count from the end.
  std::size_t dim(int axis) const;

  std::span<const double> data() const { return impl_->data; }
  // Mutating data of a tensor that is part of a live graph invalidates it;
  // reserved for parameter updates and test perturbations.
  std::span<double> mutable_data() { return impl_->data; }
  double item() const;
  double operator[](std::size_t flat_index) const { return impl_->data[flat_index]; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool value) { impl_->requires_grad = value; }

  bool has_grad() const { return !impl_->grad.empty(); }
  // All-zero view when no gradient has been accumulated yet.
  std::span<const double> grad() const;
  void zero_grad() { impl_->grad.clear(); }

  // New leaf holding a copy of the data and no gradient history.
  Tensor detach() const;
  Tensor clone(bool requires_grad) const;

  detail::TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& shared_impl() const { return impl_; }

  bool same_as(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// A parameter (or buffer) together with its qualified name. Frozen entries
// are stored and checkpointed but not handed to the optimizer.
struct NamedTensor {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

// Ordered record of executed primitives. Nodes are appended in execution
// order and traversed once in reverse by backward().
class Tape {
 public:
  using BackwardFn = std::function<void(std::span<const double> output_grad)>;

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Installs a tape as the recording target for the current thread.
  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  static Tape* active();

  // Seeds d(loss)/d(loss) = 1 and runs every recorded backward function in
  // reverse order. Rejects non-scalar losses, losses not produced by the
  // current generation of this tape, and a second call before reset().
  void backward(const Tensor& loss);

  // Drops all nodes; tensors recorded before the reset become stale.
  void reset();

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  // Used by ops: registers `output` as produced by `fn`.
  void record(const Tensor& output, BackwardFn fn);

 private:
  struct Node {
    std::shared_ptr<detail::TensorImpl> output;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::uint64_t uid_;
  std::uint64_t generation_ = 1;
  bool consumed_ = false;
};

// True when an op over these inputs must be recorded.
bool should_record(std::initializer_list<const Tensor*> inputs);
bool should_record(std::span<const Tensor> inputs);

}  // namespace protonorm
