#include "credence/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace credence {

namespace {
thread_local int g_no_grad_depth = 0;
}

bool grad_enabled() { return g_no_grad_depth == 0; }

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

void TensorImpl::accumulate_grad(const std::vector<float>& g) {
  ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(static_cast<std::size_t>(numel(shape)), 0.0f);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad && grad_enabled();
  return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.mutable_data().begin(), t.mutable_data().end(), value);
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data,
                         bool requires_grad) {
  if (numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw std::invalid_argument(
        "tensor shape " + shape_to_string(shape) + " expects " +
        std::to_string(numel(shape)) + " values, got " +
        std::to_string(data.size()));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad && grad_enabled();
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

float Tensor::item() const {
  if (!is_scalar()) {
    throw std::invalid_argument("item() called on non-scalar tensor of shape " +
                                shape_to_string(shape()));
  }
  return impl_->data[0];
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  impl->requires_grad = false;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  impl->requires_grad = impl_->requires_grad;
  return Tensor(std::move(impl));
}

bool Tensor::all_finite() const {
  for (float v : impl_->data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void zero_grads(ParameterMap& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

const Tensor* find_param(const ParameterMap& params, const std::string& name) {
  for (const auto& p : params) {
    if (p.name == name) return &p.tensor;
  }
  return nullptr;
}

Tape Tape::from(const Tensor& loss) {
  // Iterative post-order DFS over the recorded graph; emits parents before
  // children, which is exactly the forward topological order.
  Tape tape;
  std::unordered_set<const TensorImpl*> visited;
  struct Frame {
    TensorImplPtr node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.impl(), 0});
  while (!stack.empty()) {
    Frame& frame = stack.back();
    if (frame.next_parent == 0) {
      if (visited.count(frame.node.get())) {
        stack.pop_back();
        continue;
      }
    }
    if (frame.next_parent < frame.node->parents.size()) {
      TensorImplPtr parent = frame.node->parents[frame.next_parent++];
      if (!visited.count(parent.get())) stack.push_back({parent, 0});
    } else {
      visited.insert(frame.node.get());
      tape.nodes_.push_back({frame.node});
      stack.pop_back();
    }
  }
  return tape;
}

void Tape::backward() {
  if (nodes_.empty()) return;
  TensorImpl& root = *nodes_.back().tensor;
  root.ensure_grad();
  root.grad[0] = 1.0f;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    TensorImpl& node = *it->tensor;
    if (node.backward_fn && !node.grad.empty()) {
      node.backward_fn(node);
    }
  }
}

void backward(const Tensor& loss) {
  if (!loss.is_scalar()) {
    throw std::invalid_argument(
        "backward() requires a scalar loss, got shape " +
        shape_to_string(loss.shape()));
  }
  Tape::from(loss).backward();
}

}  // namespace credence
