#pragma once

// Minimal reverse-mode automatic differentiation over dense Eigen matrices.
// Column vectors are n x 1 matrices. A Tape records one forward pass; Vars are
// handles into it and stay valid for the tape's lifetime.

#include <cstddef>
#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace stancemil::ad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class Parameter {
 public:
  Parameter(std::string name, Matrix value)
      : name_(std::move(name)), value_(std::move(value)), grad_(Matrix::Zero(value_.rows(), value_.cols())) {}

  const std::string& name() const { return name_; }
  Matrix& value() { return value_; }
  const Matrix& value() const { return value_; }
  Matrix& grad() { return grad_; }
  const Matrix& grad() const { return grad_; }
  void zero_grad() { grad_.setZero(); }

 private:
  std::string name_;
  Matrix value_;
  Matrix grad_;
};

// Ordered registry of named parameters with stable addresses.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet& other);
  ParameterSet& operator=(const ParameterSet& other);
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;

  Parameter& add(std::string name, Matrix value);
  Parameter& get(std::string_view name);
  const Parameter& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad();
  // SHA-256 over names, shapes and raw values; equal digests mean bitwise-equal
  // parameters.
  std::string digest() const;

  Vector flatten_values() const;
  Vector flatten_grads() const;
  void assign_values(const Vector& flat);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

struct SparseFeatures {
  int dim = 0;
  std::vector<int> index;
  std::vector<double> value;
};

class Tape;

class Var {
 public:
  Var() = default;
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;
  int id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Var constant(Matrix value);
  Var constant(double value);
  // Reads the parameter by reference; backward accumulates into its grad.
  Var parameter(Parameter& p);

  // Seeds d(loss)/d(loss) = 1 and propagates to every parameter leaf.
  void backward(const Var& loss);

  std::size_t size() const { return nodes_.size(); }

  // Op-implementation interface.
  Var push(Matrix value, bool requires_grad, BackwardFn fn);
  const Matrix& value(int id) const;
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  Matrix& grad(int id);

 private:
  struct Node {
    Matrix value;
    const Matrix* ref = nullptr;
    Parameter* param = nullptr;
    bool requires_grad = false;
    bool has_grad = false;
    Matrix grad;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;
};

// Elementwise / algebraic ops. Shapes must agree; mismatches throw shape errors.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var hadamard(const Var& a, const Var& b);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var dot(const Var& a, const Var& b);  // 1x1
Var sum(const Var& a);                // 1x1
Var concat(const std::vector<Var>& parts);  // vertical stack of column vectors
Var hstack(const std::vector<Var>& columns);  // n x m from m column vectors
Var element(const Var& a, Eigen::Index row);  // 1x1
Var softmax(const Var& a);  // column vector
Var log(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var relu(const Var& a);
Var one_minus(const Var& a);
// Values are clamped into [lo, hi]; gradient passes only where unclamped.
Var clamp(const Var& a, double lo, double hi);
// t * a + (1 - t) * b
Var mix(const Var& a, const Var& b, double t);

// W (out x in) * x + b with sparse x; gradient rows are touched sparsely.
Var sparse_affine(Tape& tape, Parameter& weight, Parameter& bias, const SparseFeatures& x);
// Column `index` of an embedding table (dim x vocab).
Var embedding_column(Tape& tape, Parameter& table, int index);

}  // namespace stancemil::ad
