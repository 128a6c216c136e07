#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace credence {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

struct TensorImpl;
using TensorImplPtr = std::shared_ptr<TensorImpl>;

// Backing node of a Tensor. `parents` and `backward_fn` are only populated
// when the node was produced by a differentiable op with gradients enabled;
// leaves have an empty op name.
struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  bool requires_grad = false;
  std::vector<float> grad;  // empty until backward touches this node

  std::string op;
  std::vector<TensorImplPtr> parents;
  // Receives this node's grad and accumulates into the parents' grads.
  std::function<void(const TensorImpl&)> backward_fn;

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0f);
  }
  void accumulate_grad(const std::vector<float>& g);
};

// Value-semantics handle onto a shared node, cheap to copy. Data written by
// the producing op is treated as immutable afterwards; in-place mutation is
// reserved for the optimizer, which owns its parameters.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(TensorImplPtr impl) : impl_(std::move(impl)) {}

  // Uninitialized-to-zero tensor of the given shape.
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<float> data,
                          bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t dim(std::size_t axis) const { return impl_->shape[axis]; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::int64_t size() const { return impl_->size(); }
  bool is_scalar() const { return impl_->size() == 1; }

  const std::vector<float>& data() const { return impl_->data; }
  std::vector<float>& mutable_data() { return impl_->data; }
  float item() const;
  float at(std::int64_t flat_index) const { return impl_->data[flat_index]; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool value) { impl_->requires_grad = value; }
  bool has_grad() const { return !impl_->grad.empty(); }
  const std::vector<float>& grad() const { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }

  // Same data, detached from the graph and never receiving gradients.
  Tensor detach() const;
  // Deep copy of values (leaf, no graph history).
  Tensor clone() const;

  bool all_finite() const;

  TensorImplPtr impl() const { return impl_; }

 private:
  TensorImplPtr impl_;
};

// A named, ordered parameter registry. Order is the serialization and
// optimizer-update order, so it must be deterministic.
struct NamedParam {
  std::string name;
  Tensor tensor;
};
using ParameterMap = std::vector<NamedParam>;

void zero_grads(ParameterMap& params);
const Tensor* find_param(const ParameterMap& params, const std::string& name);

// Reverse-mode tape linearized from a scalar loss. Nodes are stored in
// topological order (every node's parents precede it); backward() walks the
// list exactly once in reverse.
class Tape {
 public:
  struct Node {
    TensorImplPtr tensor;
  };

  static Tape from(const Tensor& loss);

  // Seeds d(loss)/d(loss) = 1 and propagates through every recorded node.
  void backward();

  std::size_t node_count() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }

 private:
  std::vector<Node> nodes_;
};

// Convenience wrapper: build the tape for `loss` and run it.
void backward(const Tensor& loss);

// While a NoGradGuard is alive, ops do not record graph nodes and their
// outputs do not require grad. Used for evaluation passes.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

}  // namespace credence
