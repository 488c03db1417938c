#include "phytnet/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace phytnet {

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ConfigError("negative dimension in shape " + shape_to_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_to_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

static std::shared_ptr<Tensor::Node> make_node(std::vector<int> shape,
                                               std::vector<float> data,
                                               bool requires_grad) {
  auto node = std::make_shared<Tensor::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return node;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  int64_t n = shape_numel(shape);
  return Tensor(make_node(std::move(shape), std::vector<float>(static_cast<size_t>(n), 0.0f),
                          requires_grad));
}

Tensor Tensor::full(std::vector<int> shape, float value, bool requires_grad) {
  int64_t n = shape_numel(shape);
  return Tensor(make_node(std::move(shape), std::vector<float>(static_cast<size_t>(n), value),
                          requires_grad));
}

Tensor Tensor::from_vector(std::vector<int> shape, std::vector<float> values,
                           bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(values.size()))
    throw ConfigError("data length " + std::to_string(values.size()) +
                      " does not match shape " + shape_to_string(shape));
  return Tensor(make_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return from_vector({1}, {value}, requires_grad);
}

Tensor Tensor::uniform(std::vector<int> shape, float lo, float hi, Rng& rng,
                       bool requires_grad) {
  int64_t n = shape_numel(shape);
  std::vector<float> values(static_cast<size_t>(n));
  for (auto& v : values) v = static_cast<float>(rng.uniform(lo, hi));
  return Tensor(make_node(std::move(shape), std::move(values), requires_grad));
}

std::vector<float>& Tensor::grad() {
  Node& n = check_node();
  if (n.grad.empty()) throw UsageError("tensor has no gradient (run backward first)");
  return n.grad;
}

const std::vector<float>& Tensor::grad() const {
  return const_cast<Tensor*>(this)->grad();
}

void Tensor::zero_grad() {
  Node& n = check_node();
  n.grad.assign(n.data.size(), 0.0f);
}

float Tensor::item() const {
  const Node& n = check_node();
  if (n.numel() != 1)
    throw UsageError("item() on tensor of shape " + shape_to_string(n.shape));
  return n.data[0];
}

void Tensor::backward() {
  Node& root = check_node();
  if (root.numel() != 1)
    throw UsageError("backward() requires a scalar, got shape " +
                     shape_to_string(root.shape));

  // Iterative post-order DFS for a topological order over ancestors.
  std::vector<Node*> topo;
  std::unordered_set<Node*> visited;
  struct Frame {
    Node* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({&root, 0});
  visited.insert(&root);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      Node* p = f.node->parents[f.next_parent++].get();
      if (visited.insert(p).second) stack.push_back({p, 0});
    } else {
      topo.push_back(f.node);
      stack.pop_back();
    }
  }

  // Interior grads are transient per sweep; leaf grads accumulate across
  // sweeps until explicitly zeroed.
  for (Node* n : topo)
    if (n->backward_fn) n->grad.assign(n->data.size(), 0.0f);

  root.ensure_grad();
  root.grad[0] += 1.0f;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* n = *it;
    if (!n->backward_fn) continue;
    n->backward_fn(*n);
  }
}

void check_finite(const Tensor& t, const char* op) {
  for (float v : t.data()) {
    if (!std::isfinite(v))
      throw NumericError(std::string(op) + " produced a non-finite value");
  }
}

}  // namespace phytnet
