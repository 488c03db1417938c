#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "phytnet/common.hpp"
#include "phytnet/rng.hpp"

namespace phytnet {

// Dense float32 tensor with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto a shared node. Ops build a graph of nodes;
// calling backward() on a scalar walks the graph in reverse topological
// order and accumulates gradients into every node that requires them.
// Gradients accumulate across backward() calls until zero_grad() is called.
// Data is immutable once an op has consumed the tensor; grad is the only
// field mutated afterwards.
class Tensor {
 public:
  struct Node {
    std::vector<int> shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until first needed
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;  // reads this->grad, accumulates into parents
    const char* op = "";

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    void ensure_grad() {
      if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
    }
  };

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, float value, bool requires_grad = false);
  static Tensor from_vector(std::vector<int> shape, std::vector<float> values,
                            bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);
  // Uniform values in [lo, hi); used by parameter initialization.
  static Tensor uniform(std::vector<int> shape, float lo, float hi, Rng& rng,
                        bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return check_node().shape; }
  int rank() const { return static_cast<int>(shape().size()); }
  int dim(int i) const { return shape().at(static_cast<size_t>(i)); }
  int64_t numel() const { return check_node().numel(); }
  bool requires_grad() const { return check_node().requires_grad; }

  std::vector<float>& data() { return check_node().data; }
  const std::vector<float>& data() const { return check_node().data; }
  float* ptr() { return data().data(); }
  const float* ptr() const { return data().data(); }

  bool has_grad() const { return defined() && !node_->grad.empty(); }
  std::vector<float>& grad();
  const std::vector<float>& grad() const;
  void ensure_grad() { check_node().ensure_grad(); }
  void zero_grad();

  // Value of a one-element tensor.
  float item() const;

  // Reverse-mode sweep from a scalar. Populates grad on every node that
  // requires grad and is reachable from this tensor.
  void backward();

  std::shared_ptr<Node> node() const { return node_; }

 private:
  Node& check_node() const {
    if (!node_) throw UsageError("operation on an undefined tensor");
    return *node_;
  }

  std::shared_ptr<Node> node_;
};

int64_t shape_numel(const std::vector<int>& shape);
std::string shape_to_string(const std::vector<int>& shape);

// Throws NumericError if any element of t is NaN or Inf. Every forward op
// calls this on its result so a bad step fails immediately.
void check_finite(const Tensor& t, const char* op);

}  // namespace phytnet
