#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "emochat/common.hpp"

namespace emochat {

struct Node;

// Dense row-major tensor with reverse-mode autodiff. Value semantics: copies
// share storage and the creator node. A tape is built implicitly by the ops
// in ops.hpp whenever gradients are enabled and some input needs them; a
// forward/backward pass and its tensors are confined to one thread.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, Real value,
                     bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, std::vector<Real> data,
                          bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);

  bool defined() const { return storage_ != nullptr; }
  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return int(shape_.size()); }
  int dim(int i) const { return shape_[size_t(i)]; }
  std::size_t numel() const;

  Real* data();
  const Real* data() const;
  std::vector<Real>& values();
  const std::vector<Real>& values() const;
  Real item() const;

  bool requires_grad() const;
  // True if this tensor participates in the current tape (leaf parameter or
  // op output recorded on it).
  bool on_tape() const;

  std::vector<Real>& grad();  // lazily allocated, zero-initialized
  bool has_grad() const;
  void zero_grad();
  void accumulate_grad(const Real* g, std::size_t n);

  // Shares storage but drops the autodiff node and the grad requirement.
  Tensor detached() const;

  // Reverse-mode backprop from a scalar. Seeds d(self)/d(self) = 1 and
  // accumulates into the grads of every reachable tensor.
  void backward() const;

  void set_node(std::shared_ptr<Node> node) { node_ = std::move(node); }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  struct Storage {
    std::vector<Real> data;
    std::vector<Real> grad;  // empty until first accumulation
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> storage_;
  std::vector<int> shape_;
  std::shared_ptr<Node> node_;
  bool detached_ = false;  // view-level: hides requires_grad from the tape
};

// One recorded op. `out` is a detached view of the output (the node must not
// own the output tensor itself or the graph would be cyclic).
struct Node {
  std::vector<Tensor> parents;
  Tensor out;
  std::function<void()> backprop;  // reads out's grad, accumulates parents'
};

// Scoped gradient disable for inference paths.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

// Named trainable tensor. Names are unique within a model and double as
// checkpoint slots.
struct Parameter {
  std::string name;
  Tensor tensor;
};

using ParamRefs = std::vector<std::pair<std::string, Tensor*>>;

}  // namespace emochat
