#include "lwam/numcore/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "lwam/errors.hpp"

namespace lwam::nc {

namespace {

std::atomic<std::uint64_t> g_next_id{1};
thread_local int t_no_grad_depth = 0;

NodePtr new_node(Shape shape, std::vector<double> data, bool requires_grad) {
  if (numel(shape) != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + to_string(shape));
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return n;
}

const Node& checked(const NodePtr& n) {
  if (!n) throw ContractError("use of undefined tensor");
  return *n;
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::span<double> Node::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = nc::numel(shape);
  return Tensor(new_node(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = nc::numel(shape);
  return Tensor(new_node(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(new_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(new_node({}, {value}, requires_grad));
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(nc::numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(new_node(std::move(shape), std::move(v), requires_grad));
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(nc::numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(new_node(std::move(shape), std::move(v), requires_grad));
}

const Shape& Tensor::shape() const { return checked(node_).shape; }

std::size_t Tensor::dim(int axis) const {
  const auto& s = shape();
  int r = static_cast<int>(s.size());
  int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(s));
  return s[static_cast<std::size_t>(a)];
}

std::size_t Tensor::numel() const { return checked(node_).data.size(); }

std::span<const double> Tensor::data() const { return checked(node_).data; }

std::span<double> Tensor::mutable_data() {
  checked(node_);
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return data()[0];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  checked(node_);
  node_->requires_grad = value;
  return *this;
}

bool Tensor::has_grad() const { return !checked(node_).grad.empty(); }

std::span<const double> Tensor::grad() const { return checked(node_).grad; }

void Tensor::zero_grad() {
  checked(node_);
  node_->grad.clear();
}

Tensor Tensor::detach() const {
  const auto& n = checked(node_);
  return Tensor(new_node(n.shape, n.data, false));
}

Tensor Tensor::clone(bool requires_grad) const {
  const auto& n = checked(node_);
  return Tensor(new_node(n.shape, n.data, requires_grad));
}

std::uint64_t Tensor::id() const { return checked(node_).id; }

bool grad_enabled() { return t_no_grad_depth == 0; }

NoGradGuard::NoGradGuard() { ++t_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --t_no_grad_depth; }

Tensor make_op(const char* name, Shape shape, std::vector<double> data,
               const std::vector<Tensor>& inputs, BackwardFn backward) {
  for (double v : data) {
    if (!std::isfinite(v)) throw NumericalError(std::string("non-finite value produced by ") + name);
  }
  bool track = false;
  if (grad_enabled()) {
    for (const auto& t : inputs) track = track || t.requires_grad();
  }
  auto n = new_node(std::move(shape), std::move(data), track);
  n->op = name;
  if (track) {
    n->inputs.reserve(inputs.size());
    for (const auto& t : inputs) n->inputs.push_back(t.node());
    n->backward = std::move(backward);
  }
  return Tensor(std::move(n));
}

BackwardReport backward(const Tensor& loss) {
  const auto& root = loss.node();
  if (!root) throw ContractError("backward on undefined tensor");
  if (root->data.size() != 1 || !root->shape.empty()) {
    throw ShapeError("backward requires a scalar loss, got shape " + to_string(root->shape));
  }
  if (root->consumed) throw ContractError("graph already consumed; rebuild it before calling backward again");
  if (!root->requires_grad) throw ContractError("loss does not depend on any tensor requiring grad");

  // Owning references keep interior nodes alive while closures are released.
  std::vector<NodePtr> order;
  std::unordered_set<const Node*> seen;
  std::vector<NodePtr> stack{root};
  seen.insert(root.get());
  while (!stack.empty()) {
    NodePtr n = stack.back();
    stack.pop_back();
    for (const auto& in : n->inputs) {
      if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in);
    }
    order.push_back(std::move(n));
  }
  std::sort(order.begin(), order.end(), [](const NodePtr& a, const NodePtr& b) { return a->id > b->id; });

  root->grad_buffer()[0] += 1.0;
  BackwardReport report;
  for (const auto& n : order) {
    ++report.nodes_visited;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  for (const auto& n : order) {
    if (!n->inputs.empty()) {
      n->backward = nullptr;
      n->inputs.clear();
      n->consumed = true;
      if (n != root) {
        n->grad.clear();
        n->grad.shrink_to_fit();
      }
    }
  }
  return report;
}

}  // namespace lwam::nc
