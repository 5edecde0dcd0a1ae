#include "pacdiff/graph.hpp"

#include <cmath>

namespace pacdiff {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Param: return "param";
    case OpKind::Input: return "input";
    case OpKind::Constant: return "constant";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::MatMul: return "matmul";
    case OpKind::Relu: return "relu";
    case OpKind::Elu: return "elu";
    case OpKind::Tanh: return "tanh";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Sqrt: return "sqrt";
    case OpKind::Square: return "square";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::Concat: return "concat";
    case OpKind::Normalize: return "normalize";
  }
  return "?";
}

namespace {

bool is_leaf(OpKind k) { return k == OpKind::Param || k == OpKind::Input; }

Eigen::Index broadcast_dim(Eigen::Index a, Eigen::Index b, bool& ok) {
  if (a == b) return a;
  if (a == 1) return b;
  if (b == 1) return a;
  ok = false;
  return 0;
}

Tensor expand(const Tensor& t, Eigen::Index rows, Eigen::Index cols) {
  if (t.rows() == rows && t.cols() == cols) return t;
  return t.replicate(rows / t.rows(), cols / t.cols());
}

// Sums a broadcast gradient back down to the operand's shape.
Tensor reduce_to(const Tensor& g, Eigen::Index rows, Eigen::Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows == 1 && cols == 1) return scalar_tensor(g.sum());
  if (rows == 1) return g.colwise().sum();
  return g.rowwise().sum();
}

Tensor reduce_sum(const Tensor& x, Axis axis) {
  switch (axis) {
    case Axis::All: return scalar_tensor(x.sum());
    case Axis::Rows: return x.colwise().sum();
    case Axis::Cols: return x.rowwise().sum();
  }
  return {};
}

Eigen::Index reduce_count(const Tensor& x, Axis axis) {
  switch (axis) {
    case Axis::All: return x.size();
    case Axis::Rows: return x.rows();
    case Axis::Cols: return x.cols();
  }
  return 1;
}

Tensor spread(const Tensor& g, Axis axis, Eigen::Index rows, Eigen::Index cols) {
  switch (axis) {
    case Axis::All: return Tensor::Constant(rows, cols, g(0, 0));
    case Axis::Rows: return g.replicate(rows, 1);
    case Axis::Cols: return g.replicate(1, cols);
  }
  return {};
}

}  // namespace

const Tensor& Var::value() const { return graph_->value(*this); }

Var Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  evaluated_ = false;
  return Var(this, nodes_.size() - 1);
}

const Graph::Node& Graph::checked(Var v) const {
  if (&v.graph() != this || v.id() >= nodes_.size())
    throw UsageError("Var does not belong to this graph");
  return nodes_[v.id()];
}

Var Graph::param(std::string name) {
  if (auto it = leaf_ids_.find(name); it != leaf_ids_.end()) {
    if (nodes_[it->second].kind != OpKind::Param)
      throw UsageError("leaf '" + name + "' already declared as input");
    return Var(this, it->second);
  }
  Node n;
  n.kind = OpKind::Param;
  n.name = name;
  n.requires_grad = true;
  Var v = push(std::move(n));
  leaf_ids_.emplace(std::move(name), v.id());
  return v;
}

Var Graph::input(std::string name) {
  if (auto it = leaf_ids_.find(name); it != leaf_ids_.end()) {
    if (nodes_[it->second].kind != OpKind::Input)
      throw UsageError("leaf '" + name + "' already declared as param");
    return Var(this, it->second);
  }
  Node n;
  n.kind = OpKind::Input;
  n.name = name;
  Var v = push(std::move(n));
  leaf_ids_.emplace(std::move(name), v.id());
  return v;
}

Var Graph::constant(Tensor value) {
  Node n;
  n.kind = OpKind::Constant;
  n.storage = std::move(value);
  return push(std::move(n));
}

Var Graph::unary(OpKind kind, Var x) {
  Node n;
  n.kind = kind;
  n.in[0] = x.id();
  n.arity = 1;
  n.requires_grad = checked(x).requires_grad;
  return push(std::move(n));
}

Var Graph::binary(OpKind kind, Var a, Var b) {
  Node n;
  n.kind = kind;
  n.in = {a.id(), b.id()};
  n.arity = 2;
  n.requires_grad = checked(a).requires_grad || checked(b).requires_grad;
  return push(std::move(n));
}

Var Graph::reduce(OpKind kind, Var x, Axis axis) {
  Var v = unary(kind, x);
  nodes_[v.id()].axis = axis;
  return v;
}

Var Graph::concat(Var a, Var b) { return binary(OpKind::Concat, a, b); }

Var Graph::normalize(Var x, Axis axis, double eps) {
  if (axis == Axis::All) throw UsageError("normalize needs a Rows or Cols axis");
  Var v = unary(OpKind::Normalize, x);
  nodes_[v.id()].axis = axis;
  nodes_[v.id()].eps = eps;
  return v;
}

void Graph::set_output(Var v) {
  checked(v);
  output_ = v.id();
  has_output_ = true;
}

Var Graph::output() const {
  if (nodes_.empty()) throw UsageError("empty graph has no output");
  return Var(const_cast<Graph*>(this), has_output_ ? output_ : nodes_.size() - 1);
}

void Graph::bind(const TensorMap& leaves) {
  bindings_.push_back(&leaves);
  evaluated_ = false;
}

void Graph::bind(TensorMap&& leaves) {
  owned_.push_back(std::move(leaves));
  bind(owned_.back());
}

const Tensor& Graph::forward(const TensorMap& leaves) {
  bindings_.clear();
  bind(leaves);
  return forward();
}

const Tensor& Graph::forward(TensorMap&& leaves) {
  bindings_.clear();
  owned_.clear();
  bind(std::move(leaves));
  return forward();
}

const Tensor& Graph::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.bound ? *n.bound : n.storage;
}

const Tensor& Graph::value(Var v) const {
  checked(v);
  if (!evaluated_ && !(nodes_[v.id()].kind == OpKind::Constant))
    throw UsageError("value requested before forward");
  return value(v.id());
}

void Graph::fail_shape(std::size_t id, const std::string& what) const {
  throw ShapeError("node " + std::to_string(id) + " (" +
                   std::string(op_name(nodes_[id].kind)) + "): " + what);
}

void Graph::eval_node(std::size_t id) {
  Node& n = nodes_[id];
  n.bound = nullptr;
  if (is_leaf(n.kind)) {
    for (auto it = bindings_.rbegin(); it != bindings_.rend(); ++it) {
      if (auto f = (*it)->find(n.name); f != (*it)->end()) {
        n.bound = &f->second;
        break;
      }
    }
    if (!n.bound) throw UsageError("leaf '" + n.name + "' is not bound");
    if (!n.bound->allFinite())
      throw NonFiniteError("leaf '" + n.name + "' holds non-finite values");
    return;
  }
  if (n.kind == OpKind::Constant) return;

  const Tensor& a = value(n.in[0]);
  const Tensor* b = n.arity == 2 ? &value(n.in[1]) : nullptr;

  switch (n.kind) {
    case OpKind::Add:
    case OpKind::Sub:
    case OpKind::Mul:
    case OpKind::Div: {
      bool ok = true;
      Eigen::Index r = broadcast_dim(a.rows(), b->rows(), ok);
      Eigen::Index c = broadcast_dim(a.cols(), b->cols(), ok);
      if (!ok)
        fail_shape(id, "cannot broadcast " + shape_string(a) + " with " +
                           shape_string(*b));
      Tensor ea = expand(a, r, c);
      Tensor eb = expand(*b, r, c);
      if (n.kind == OpKind::Add) n.storage = ea + eb;
      else if (n.kind == OpKind::Sub) n.storage = ea - eb;
      else if (n.kind == OpKind::Mul) n.storage = ea.cwiseProduct(eb);
      else n.storage = ea.cwiseQuotient(eb);
      break;
    }
    case OpKind::MatMul:
      if (a.cols() != b->rows())
        fail_shape(id, "matmul " + shape_string(a) + " by " + shape_string(*b));
      n.storage.resize(a.rows(), b->cols());
      n.storage.noalias() = a * *b;
      break;
    case OpKind::Relu: n.storage = a.cwiseMax(0.0); break;
    case OpKind::Elu:
      n.storage = (a.array() > 0.0).select(a.array(), a.array().exp() - 1.0).matrix();
      break;
    case OpKind::Tanh: n.storage = a.array().tanh().matrix(); break;
    case OpKind::Exp: n.storage = a.array().exp().matrix(); break;
    case OpKind::Log: n.storage = a.array().log().matrix(); break;
    case OpKind::Sqrt: n.storage = a.array().sqrt().matrix(); break;
    case OpKind::Square: n.storage = a.array().square().matrix(); break;
    case OpKind::Sum: n.storage = reduce_sum(a, n.axis); break;
    case OpKind::Mean:
      if (a.size() == 0) fail_shape(id, "mean of empty tensor");
      n.storage = reduce_sum(a, n.axis) / double(reduce_count(a, n.axis));
      break;
    case OpKind::Concat:
      if (a.rows() != b->rows())
        fail_shape(id, "concat rows " + shape_string(a) + " vs " + shape_string(*b));
      n.storage.resize(a.rows(), a.cols() + b->cols());
      n.storage << a, *b;
      break;
    case OpKind::Normalize: {
      if (n.axis == Axis::Rows) {
        Eigen::RowVectorXd mu = a.colwise().mean();
        Tensor centered = a.rowwise() - mu;
        Eigen::RowVectorXd var = centered.array().square().colwise().mean();
        Eigen::RowVectorXd inv = (var.array() + n.eps).rsqrt();
        n.cache = inv;
        n.storage = centered.array().rowwise() * inv.array();
      } else {
        Eigen::VectorXd mu = a.rowwise().mean();
        Tensor centered = a.colwise() - mu;
        Eigen::VectorXd var = centered.array().square().rowwise().mean();
        Eigen::VectorXd inv = (var.array() + n.eps).rsqrt();
        n.cache = inv;
        n.storage = centered.array().colwise() * inv.array();
      }
      break;
    }
    default:
      break;
  }
  if (!n.storage.allFinite())
    throw NonFiniteError("node " + std::to_string(id) + " (" +
                         std::string(op_name(n.kind)) + ") produced non-finite values");
}

const Tensor& Graph::forward() {
  if (nodes_.empty()) throw UsageError("forward on empty graph");
  evaluated_ = false;
  for (std::size_t i = 0; i < nodes_.size(); ++i) eval_node(i);
  evaluated_ = true;
  return value(output().id());
}

TensorMap Graph::backward() {
  if (!evaluated_) throw UsageError("backward called before forward");
  const std::size_t root = output().id();
  if (value(root).size() != 1)
    throw ContractError("backward needs a scalar root, got " +
                        shape_string(value(root)));

  std::vector<Tensor> grads(root + 1);
  std::vector<bool> has(root + 1, false);
  auto accumulate = [&](std::size_t id, Tensor g) {
    if (!nodes_[id].requires_grad) return;
    if (has[id]) {
      grads[id] += g;
    } else {
      grads[id] = std::move(g);
      has[id] = true;
    }
  };
  grads[root] = scalar_tensor(1.0);
  has[root] = true;

  for (std::size_t i = root + 1; i-- > 0;) {
    if (!has[i]) continue;
    const Node& n = nodes_[i];
    if (is_leaf(n.kind) || n.kind == OpKind::Constant) continue;
    const Tensor& g = grads[i];
    const Tensor& y = value(i);
    const Tensor& a = value(n.in[0]);
    const Tensor* b = n.arity == 2 ? &value(n.in[1]) : nullptr;
    const std::size_t ia = n.in[0];
    const std::size_t ib = n.in[1];
    const bool need_a = nodes_[ia].requires_grad;
    const bool need_b = n.arity == 2 && nodes_[ib].requires_grad;

    switch (n.kind) {
      case OpKind::Add:
        if (need_a) accumulate(ia, reduce_to(g, a.rows(), a.cols()));
        if (need_b) accumulate(ib, reduce_to(g, b->rows(), b->cols()));
        break;
      case OpKind::Sub:
        if (need_a) accumulate(ia, reduce_to(g, a.rows(), a.cols()));
        if (need_b) accumulate(ib, reduce_to(-g, b->rows(), b->cols()));
        break;
      case OpKind::Mul:
        if (need_a)
          accumulate(ia, reduce_to(g.cwiseProduct(expand(*b, g.rows(), g.cols())),
                                   a.rows(), a.cols()));
        if (need_b)
          accumulate(ib, reduce_to(g.cwiseProduct(expand(a, g.rows(), g.cols())),
                                   b->rows(), b->cols()));
        break;
      case OpKind::Div: {
        Tensor eb = expand(*b, g.rows(), g.cols());
        if (need_a) accumulate(ia, reduce_to(g.cwiseQuotient(eb), a.rows(), a.cols()));
        if (need_b) {
          Tensor d = -(g.cwiseProduct(y)).cwiseQuotient(eb);
          accumulate(ib, reduce_to(d, b->rows(), b->cols()));
        }
        break;
      }
      case OpKind::MatMul:
        if (need_a) {
          Tensor da(a.rows(), a.cols());
          da.noalias() = g * b->transpose();
          accumulate(ia, std::move(da));
        }
        if (need_b) {
          Tensor db(b->rows(), b->cols());
          db.noalias() = a.transpose() * g;
          accumulate(ib, std::move(db));
        }
        break;
      case OpKind::Relu:
        accumulate(ia, (a.array() > 0.0).select(g.array(), 0.0).matrix());
        break;
      case OpKind::Elu:
        accumulate(ia, (a.array() > 0.0).select(g.array(), g.array() * (y.array() + 1.0)).matrix());
        break;
      case OpKind::Tanh:
        accumulate(ia, (g.array() * (1.0 - y.array().square())).matrix());
        break;
      case OpKind::Exp: accumulate(ia, g.cwiseProduct(y)); break;
      case OpKind::Log: accumulate(ia, g.cwiseQuotient(a)); break;
      case OpKind::Sqrt: accumulate(ia, (0.5 * g.array() / y.array()).matrix()); break;
      case OpKind::Square: accumulate(ia, (2.0 * g.array() * a.array()).matrix()); break;
      case OpKind::Sum: accumulate(ia, spread(g, n.axis, a.rows(), a.cols())); break;
      case OpKind::Mean:
        accumulate(ia, spread(g, n.axis, a.rows(), a.cols()) /
                           double(reduce_count(a, n.axis)));
        break;
      case OpKind::Concat:
        if (need_a) accumulate(ia, g.leftCols(a.cols()));
        if (need_b) accumulate(ib, g.rightCols(b->cols()));
        break;
      case OpKind::Normalize: {
        // dx = inv/N * (N*g - sum(g) - y*sum(g*y)) along the normalized axis.
        if (n.axis == Axis::Rows) {
          const double count = double(a.rows());
          Eigen::RowVectorXd gs = g.colwise().sum();
          Eigen::RowVectorXd gys = g.cwiseProduct(y).colwise().sum();
          Tensor d = (count * g).rowwise() - gs;
          d -= (y.array().rowwise() * gys.array()).matrix();
          d = (d.array().rowwise() * (n.cache.row(0).array() / count)).matrix();
          accumulate(ia, std::move(d));
        } else {
          const double count = double(a.cols());
          Eigen::VectorXd gs = g.rowwise().sum();
          Eigen::VectorXd gys = g.cwiseProduct(y).rowwise().sum();
          Tensor d = (count * g).colwise() - gs;
          d -= (y.array().colwise() * gys.array()).matrix();
          d = (d.array().colwise() * (n.cache.col(0).array() / count)).matrix();
          accumulate(ia, std::move(d));
        }
        break;
      }
      default:
        break;
    }
  }

  TensorMap out;
  for (const auto& [name, id] : leaf_ids_) {
    const Node& n = nodes_[id];
    if (n.kind != OpKind::Param) continue;
    if (id <= root && has[id]) {
      out.emplace(name, grads[id]);
    } else {
      out.emplace(name, Tensor::Zero(value(id).rows(), value(id).cols()));
    }
  }
  return out;
}

Var operator+(Var a, Var b) { return a.graph().binary(OpKind::Add, a, b); }
Var operator-(Var a, Var b) { return a.graph().binary(OpKind::Sub, a, b); }
Var operator*(Var a, Var b) { return a.graph().binary(OpKind::Mul, a, b); }
Var operator/(Var a, Var b) { return a.graph().binary(OpKind::Div, a, b); }
Var operator-(Var a) { return a.graph().scalar(0.0) - a; }
Var operator+(Var a, double b) { return a + a.graph().scalar(b); }
Var operator+(double a, Var b) { return b.graph().scalar(a) + b; }
Var operator-(Var a, double b) { return a - a.graph().scalar(b); }
Var operator-(double a, Var b) { return b.graph().scalar(a) - b; }
Var operator*(Var a, double b) { return a * a.graph().scalar(b); }
Var operator*(double a, Var b) { return b.graph().scalar(a) * b; }
Var operator/(Var a, double b) { return a * a.graph().scalar(1.0 / b); }
Var operator/(double a, Var b) { return b.graph().scalar(a) / b; }

Var matmul(Var a, Var b) { return a.graph().binary(OpKind::MatMul, a, b); }
Var relu(Var x) { return x.graph().unary(OpKind::Relu, x); }
Var elu(Var x) { return x.graph().unary(OpKind::Elu, x); }
Var tanh(Var x) { return x.graph().unary(OpKind::Tanh, x); }
Var exp(Var x) { return x.graph().unary(OpKind::Exp, x); }
Var log(Var x) { return x.graph().unary(OpKind::Log, x); }
Var sqrt(Var x) { return x.graph().unary(OpKind::Sqrt, x); }
Var square(Var x) { return x.graph().unary(OpKind::Square, x); }
Var sum(Var x, Axis axis) { return x.graph().reduce(OpKind::Sum, x, axis); }
Var mean(Var x, Axis axis) { return x.graph().reduce(OpKind::Mean, x, axis); }
Var concat(Var a, Var b) { return a.graph().concat(a, b); }
Var normalize(Var x, Axis axis, double eps) { return x.graph().normalize(x, axis, eps); }

}  // namespace pacdiff
