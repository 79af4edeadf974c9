#pragma once

#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "tcam/nn/matrix.hpp"
#include "tcam/nn/params.hpp"

namespace tcam::nn {

template <class T>
class Tape;

/// Handle to a node recorded on a Tape.
template <class T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Matrix<T>& value() const { return tape_->value(id_); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  T scalar() const { return value()(0, 0); }
  bool needs_grad() const { return tape_->needs_grad(id_); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Per-forward-pass computation record. Nodes are appended in evaluation
/// order; backward() sweeps them in reverse. A tape is not reused across
/// steps.
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() { nodes_.reserve(256); }
  /// With gradients disabled, parameters enter as constants and no backward
  /// closures are kept.
  explicit Tape(bool grad_enabled) : grad_enabled_(grad_enabled) { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Matrix<T> value) {
    require_finite(value, "constant");
    nodes_.push_back(Node{std::move(value), {}, {}, false, nullptr});
    return {this, nodes_.size() - 1};
  }

  /// Records a leaf bound to `p`; the node reads p.value in place, so `p`
  /// must not change while the tape is alive. Each parameter may enter a
  /// tape once.
  Var<T> parameter(Parameter<T>& p) {
    if (!used_.insert(&p).second) {
      throw NumericError("parameter '" + p.name + "' used more than once in one forward pass");
    }
    nodes_.push_back(Node{{}, {}, {}, grad_enabled_, &p});
    param_nodes_.push_back(nodes_.size() - 1);
    return {this, nodes_.size() - 1};
  }

  Var<T> record(Matrix<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn,
                const char* op) {
    return record(std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()),
                  std::move(fn), op);
  }

  Var<T> record(Matrix<T> value, std::span<const Var<T>> inputs, BackwardFn fn, const char* op) {
    require_finite(value, op);
    bool needs = false;
    for (const auto& in : inputs) {
      if (in.tape() != this) throw NumericError(std::string(op) + ": operands from different tapes");
      needs = needs || nodes_[in.id()].needs_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, needs ? std::move(fn) : BackwardFn{}, needs, nullptr});
    return {this, nodes_.size() - 1};
  }

  const Matrix<T>& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.param ? n.param->value : n.value;
  }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  /// Gradient buffer for node `id`, allocated as zeros on first access.
  Matrix<T>& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) {
      const Matrix<T>& v = value(id);
      n.grad = Matrix<T>::Zero(v.rows(), v.cols());
    }
    return n.grad;
  }
  bool has_grad(std::size_t id) const { return nodes_[id].grad.size() != 0; }

  /// grad(id) += g, assigning directly on first write. `g` must not read
  /// grad(id) itself.
  template <class Expr>
  void add_grad(std::size_t id, const Expr& g) {
    Matrix<T>& dst = nodes_[id].grad;
    if (dst.size() == 0) {
      dst.resize(g.rows(), g.cols());
      dst.noalias() = g;
    } else {
      dst.noalias() += g;
    }
  }

  std::size_t size() const { return nodes_.size(); }
  std::size_t parameter_count() const { return param_nodes_.size(); }
  bool uses(const Parameter<T>& p) const { return used_.contains(&p); }
  bool grad_enabled() const { return grad_enabled_; }

  void backward(const Var<T>& loss) {
    if (loss.tape() != this) throw NumericError("backward: loss belongs to another tape");
    const Matrix<T>& v = value(loss.id());
    if (v.rows() != 1 || v.cols() != 1) {
      throw NumericError("backward: loss must be scalar, got " + shape_string(v));
    }
    if (!needs_grad(loss.id())) return;
    grad(loss.id()).setConstant(T(1));
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.size() == 0) continue;
      n.backward(*this, i);
    }
    for (std::size_t id : param_nodes_) {
      if (has_grad(id) && !all_finite(nodes_[id].grad)) {
        throw NumericError("NaN/Inf gradient for parameter '" + nodes_[id].param->name + "'");
      }
    }
  }

  /// Adds leaf gradients into each bound Parameter::grad.
  void accumulate_parameter_grads() const {
    for (std::size_t id : param_nodes_) {
      const Node& n = nodes_[id];
      if (n.grad.size() != 0) n.param->grad += n.grad;
    }
  }

  /// Adds leaf gradients into `sink`, indexed by Parameter::index.
  void accumulate_parameter_grads(std::vector<Matrix<T>>& sink) const {
    for (std::size_t id : param_nodes_) {
      const Node& n = nodes_[id];
      if (n.grad.size() == 0) continue;
      auto& s = sink.at(n.param->index);
      if (s.size() == 0) s = Matrix<T>::Zero(n.grad.rows(), n.grad.cols());
      s += n.grad;
    }
  }

 private:
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    BackwardFn backward;
    bool needs_grad = false;
    Parameter<T>* param = nullptr;
  };

  std::vector<Node> nodes_;
  std::vector<std::size_t> param_nodes_;
  std::unordered_set<const Parameter<T>*> used_;
  bool grad_enabled_ = true;
};

}  // namespace tcam::nn
