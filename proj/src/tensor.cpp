#include "emochat/tensor.hpp"

#include <algorithm>
#include <unordered_set>

namespace emochat {

namespace {
thread_local bool t_grad_enabled = true;

std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) fail_arg("tensor: negative extent in shape " + shape_str(shape));
    n *= std::size_t(d);
  }
  return n;
}
}  // namespace

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  Tensor t;
  t.storage_ = std::make_shared<Storage>();
  t.storage_->data.assign(shape_numel(shape), Real(0));
  t.storage_->requires_grad = requires_grad;
  t.shape_ = std::move(shape);
  return t;
}

Tensor Tensor::full(std::vector<int> shape, Real value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.storage_->data.begin(), t.storage_->data.end(), value);
  return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<Real> data,
                         bool requires_grad) {
  if (shape_numel(shape) != data.size())
    fail_arg("tensor: shape " + shape_str(shape) + " wants " +
             std::to_string(shape_numel(shape)) + " values, got " +
             std::to_string(data.size()));
  Tensor t;
  t.storage_ = std::make_shared<Storage>();
  t.storage_->data = std::move(data);
  t.storage_->requires_grad = requires_grad;
  t.shape_ = std::move(shape);
  return t;
}

Tensor Tensor::scalar(Real value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

std::size_t Tensor::numel() const { return storage_ ? storage_->data.size() : 0; }

Real* Tensor::data() { return storage_->data.data(); }
const Real* Tensor::data() const { return storage_->data.data(); }
std::vector<Real>& Tensor::values() { return storage_->data; }
const std::vector<Real>& Tensor::values() const { return storage_->data; }

Real Tensor::item() const {
  if (numel() != 1) fail("item(): tensor has " + std::to_string(numel()) + " elements");
  return storage_->data[0];
}

bool Tensor::requires_grad() const {
  return storage_ && storage_->requires_grad && !detached_;
}

bool Tensor::on_tape() const {
  return requires_grad() || node_ != nullptr;
}

std::vector<Real>& Tensor::grad() {
  if (storage_->grad.size() != storage_->data.size())
    storage_->grad.assign(storage_->data.size(), Real(0));
  return storage_->grad;
}

bool Tensor::has_grad() const {
  return storage_ && storage_->grad.size() == storage_->data.size();
}

void Tensor::zero_grad() {
  if (storage_ && !storage_->grad.empty())
    std::fill(storage_->grad.begin(), storage_->grad.end(), Real(0));
}

void Tensor::accumulate_grad(const Real* g, std::size_t n) {
  auto& gr = grad();
  if (n != gr.size()) fail("accumulate_grad: size mismatch");
  for (std::size_t i = 0; i < n; ++i) gr[i] += g[i];
}

Tensor Tensor::detached() const {
  Tensor t;
  t.storage_ = storage_;
  t.shape_ = shape_;
  t.detached_ = true;
  return t;
}

void Tensor::backward() const {
  if (numel() != 1) fail("backward(): loss must be a scalar, got shape " + shape_str(shape_));
  if (!node_ && !requires_grad()) return;

  // Iterative post-order DFS to topo-sort the recorded nodes.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  if (node_) {
    stack.push_back({node_.get(), 0});
    visited.insert(node_.get());
  }
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* child = node->parents[idx].node().get();
      ++idx;
      if (child && !visited.count(child)) {
        visited.insert(child);
        stack.push_back({child, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  const_cast<Tensor*>(this)->grad()[0] = Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backprop) (*it)->backprop();
}

}  // namespace emochat
