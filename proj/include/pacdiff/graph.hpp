#pragma once

#include <array>
#include <cstddef>
#include <deque>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pacdiff/errors.hpp"
#include "pacdiff/tensor.hpp"

namespace pacdiff {

enum class OpKind {
  Param,
  Input,
  Constant,
  Add,
  Sub,
  Mul,
  Div,
  MatMul,
  Relu,
  Elu,
  Tanh,
  Exp,
  Log,
  Sqrt,
  Square,
  Sum,
  Mean,
  Concat,
  Normalize,
};

std::string_view op_name(OpKind kind);

// Reduction / normalization axis. Rows reduces over the batch (result 1 x c),
// Cols reduces over features (result r x 1).
enum class Axis { All, Rows, Cols };

class Graph;

// Handle to a node of a Graph. Cheap to copy; only valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

// A static computation graph. Nodes are appended in topological order by the
// builder functions below; shapes are resolved when forward() binds the named
// leaves. Elementwise binary ops broadcast 2-D like numpy (each dimension
// equal or 1).
//
// Bound leaf tensors are referenced, not copied: lvalue maps passed to bind()
// must outlive forward() and backward(). Temporaries are moved into the graph.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Named leaf whose gradient backward() reports. Repeated names share a node.
  Var param(std::string name);
  /// Named leaf treated as data; no gradient is reported for it.
  Var input(std::string name);
  Var constant(Tensor value);
  Var scalar(double v) { return constant(scalar_tensor(v)); }

  Var unary(OpKind kind, Var x);
  Var binary(OpKind kind, Var a, Var b);
  Var reduce(OpKind kind, Var x, Axis axis);
  Var concat(Var a, Var b);
  Var normalize(Var x, Axis axis, double eps);

  std::size_t size() const { return nodes_.size(); }

  /// The root defaults to the most recently added node.
  void set_output(Var v);
  Var output() const;

  void bind(const TensorMap& leaves);
  void bind(TensorMap&& leaves);
  const Tensor& forward();
  const Tensor& forward(const TensorMap& leaves);
  const Tensor& forward(TensorMap&& leaves);
  bool evaluated() const { return evaluated_; }

  /// dRoot/dParam for every param leaf. Root must be 1x1.
  TensorMap backward();

  const Tensor& value(Var v) const;
  const Tensor& value(std::size_t id) const;

 private:
  struct Node {
    OpKind kind = OpKind::Constant;
    std::array<std::size_t, 2> in{0, 0};
    int arity = 0;
    Axis axis = Axis::All;
    double eps = 0.0;
    std::string name;
    bool requires_grad = false;
    Tensor storage;
    Tensor cache;
    const Tensor* bound = nullptr;
  };

  Var push(Node node);
  void eval_node(std::size_t id);
  const Node& checked(Var v) const;
  [[noreturn]] void fail_shape(std::size_t id, const std::string& what) const;

  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> leaf_ids_;
  std::vector<const TensorMap*> bindings_;
  std::deque<TensorMap> owned_;
  std::size_t output_ = 0;
  bool has_output_ = false;
  bool evaluated_ = false;
};

// Expression-style builders.
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);
Var operator+(Var a, double b);
Var operator+(double a, Var b);
Var operator-(Var a, double b);
Var operator-(double a, Var b);
Var operator*(Var a, double b);
Var operator*(double a, Var b);
Var operator/(Var a, double b);
Var operator/(double a, Var b);

Var matmul(Var a, Var b);
Var relu(Var x);
Var elu(Var x);
Var tanh(Var x);
Var exp(Var x);
Var log(Var x);
Var sqrt(Var x);
Var square(Var x);
Var sum(Var x, Axis axis = Axis::All);
Var mean(Var x, Axis axis = Axis::All);
Var concat(Var a, Var b);
/// Zero-mean unit-variance standardization along `axis` (biased variance).
Var normalize(Var x, Axis axis, double eps);

}  // namespace pacdiff
