#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "hca/common.hpp"

namespace hca {

class Graph;

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor of 64-bit reals, the value type everything else is
// built from. Copies share the underlying buffer and are cheap; mutation
// goes through mutable_data(), which clones a shared buffer first. A tensor
// may carry a (graph, node) tag that ties it into a recording Graph; the tag
// is dropped by detached().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor from(Shape shape, std::initializer_list<double> values);
  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0);
  static Tensor uniform(Shape shape, double lo, double hi, std::mt19937_64& rng);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::int64_t numel() const;
  std::int64_t dim(std::size_t axis) const;

  std::span<const double> data() const;
  // Clones the buffer first if it is shared with another tensor.
  std::span<double> mutable_data();

  // Scalar extraction; requires numel() == 1.
  double value() const;
  double operator()(std::int64_t i) const;
  double operator()(std::int64_t i, std::int64_t j) const;

  bool all_finite() const;

  // Graph participation.
  bool grad_enabled() const { return graph_ != nullptr; }
  Graph* graph() const { return graph_; }
  std::int64_t node() const { return node_; }
  // Same buffer, no graph tag. Used when capturing forward values in
  // backward closures so vjp math never records new nodes.
  Tensor detached() const;

 private:
  friend class Graph;
  std::shared_ptr<std::vector<double>> data_;
  Shape shape_;
  Graph* graph_ = nullptr;
  std::int64_t node_ = -1;
};

// Gradients of a backward pass, keyed by node id. Every grad-enabled leaf of
// the graph gets an entry whose shape equals the leaf's value shape; leaves
// the output does not depend on map to zeros.
class GradientMap {
 public:
  const Tensor& at(const Tensor& leaf) const;
  const Tensor& at_node(std::int64_t node_id) const;
  bool contains(const Tensor& leaf) const;
  std::size_t size() const { return by_node_.size(); }

 private:
  friend class Graph;
  std::unordered_map<std::int64_t, Tensor> by_node_;
};

// Append-only record of differentiable operations. Node parents always have
// smaller ids, so append order is a topological order and backward() is a
// single reverse sweep. One graph instance is single-threaded; independent
// graphs can run on different threads.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Registers a grad-enabled leaf and returns the tagged tensor.
  Tensor parameter(const Tensor& value);

  // Reverse accumulation from a scalar output recorded on this graph.
  GradientMap backward(const Tensor& output);

  std::int64_t node_count() const { return static_cast<std::int64_t>(nodes_.size()); }

  // Op-implementation hook: records a node and returns the tagged value.
  // The vjp maps the upstream gradient to per-parent gradients in the same
  // order as `parents`; entries for untracked parents may be left undefined.
  using Vjp = std::function<std::vector<Tensor>(const Tensor&)>;
  Tensor record(Tensor value, const std::vector<const Tensor*>& parents, Vjp vjp);

 private:
  struct Node {
    std::vector<std::int64_t> parents;
    Vjp vjp;  // empty for leaves
    Shape shape;
    bool leaf = false;
  };
  std::vector<Node> nodes_;
};

// Graph shared by the given tensors: nullptr when none is recorded; throws
// ContractError when two tensors belong to different graphs.
Graph* common_graph(std::initializer_list<const Tensor*> ts);

// ---- Primitive operations (all graph-recorded when an operand is) --------

Tensor matmul(const Tensor& a, const Tensor& b);
// Elementwise; same shape, or b rank-1 broadcast over the last axis of a 2-D a.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor transpose(const Tensor& a);
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor reshape(const Tensor& a, Shape shape);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, int axis);  // 2-D only

// softmax(x / temperature) along the last axis, max-stabilized.
Tensor softmax(const Tensor& x, double temperature);
// beta^-1 * log(sum(exp(beta * v))) for 1-D v, max-stabilized; scalar result.
Tensor lse(double beta, const Tensor& v);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);
// Inverted dropout; rate 0 returns x untouched and consumes no randomness.
Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng);

// First n rows of an untracked 2-D tensor (positional-encoding lookup).
Tensor take_rows(const Tensor& t, std::int64_t n);

// ---- Gradient checking ----------------------------------------------------

// Max relative error between backward() and central differences, elementwise
// over x. f must be deterministic (it is evaluated twice and compared
// bitwise; mismatch throws ContractError) and scalar-valued.
// The relative error denominator is max(|analytic|, |numeric|, 1e-8).
double grad_check(const std::function<Tensor(Graph&, const Tensor&)>& f,
                  const Tensor& x, double step);

// Same, but only `max_coords` randomly chosen coordinates of x are probed.
// max_coords <= 0 checks everything.
double grad_check(const std::function<Tensor(Graph&, const Tensor&)>& f,
                  const Tensor& x, double step, std::int64_t max_coords,
                  std::mt19937_64& rng);

}  // namespace hca
