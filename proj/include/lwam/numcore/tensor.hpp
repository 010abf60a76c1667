#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace lwam::nc {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

struct Node;
using NodePtr = std::shared_ptr<Node>;

// Propagates out.grad into the grads of out.inputs.
using BackwardFn = std::function<void(Node& out)>;

// One recorded value of the compute graph. Nodes are numbered in creation
// order, so every node's inputs carry smaller ids than the node itself and
// sorting by id is a topological order of the tape.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool consumed = false;
  std::uint64_t id = 0;
  const char* op = "leaf";
  std::vector<NodePtr> inputs;
  BackwardFn backward;

  // Zero-initialises the gradient buffer on first use.
  std::span<double> grad_buffer();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false);
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  // Negative axes count from the back.
  std::size_t dim(int axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Direct write access. Only meaningful on leaves (parameters, inputs).
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  // Fresh leaf holding a copy of the values.
  Tensor detach() const;
  Tensor clone(bool requires_grad) const;

  std::uint64_t id() const;
  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

struct BackwardReport {
  std::size_t nodes_visited = 0;
};

// Reverse-mode sweep from a scalar loss. Closures of interior nodes are
// released afterwards; the same graph cannot be swept twice.
BackwardReport backward(const Tensor& loss);

bool grad_enabled();

// RAII scope in which operations record no graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// For operation authors: wraps forward values, checks they are finite, and
// records the backward closure when any input needs a gradient.
Tensor make_op(const char* name, Shape shape, std::vector<double> data,
               const std::vector<Tensor>& inputs, BackwardFn backward);

}  // namespace lwam::nc
