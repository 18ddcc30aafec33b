#include "stancemil/autodiff.hpp"

#include <cmath>

#include "stancemil/error.hpp"
#include "stancemil/hashing.hpp"

namespace stancemil::ad {

namespace {

std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw Error(ErrorKind::kShape, std::string(op) + ": shapes " + shape(a.value()) + " and " +
                                       shape(b.value()) + " differ");
}

void require_column(const Var& a, const char* op) {
  if (a.cols() != 1)
    throw Error(ErrorKind::kShape, std::string(op) + ": expected a column vector, got " + shape(a.value()));
}

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw Error(ErrorKind::kInternal, "operation on an empty Var");
  return *a.tape();
}

}  // namespace

// ---------------------------------------------------------------------------
// ParameterSet

ParameterSet::ParameterSet(const ParameterSet& other) {
  for (const auto& p : other.params_) params_.push_back(std::make_unique<Parameter>(*p));
}

ParameterSet& ParameterSet::operator=(const ParameterSet& other) {
  if (this != &other) {
    params_.clear();
    for (const auto& p : other.params_) params_.push_back(std::make_unique<Parameter>(*p));
  }
  return *this;
}

Parameter& ParameterSet::add(std::string name, Matrix value) {
  if (contains(name)) throw Error(ErrorKind::kInternal, "duplicate parameter '" + name + "'");
  params_.push_back(std::make_unique<Parameter>(std::move(name), std::move(value)));
  return *params_.back();
}

Parameter& ParameterSet::get(std::string_view name) {
  for (auto& p : params_)
    if (p->name() == name) return *p;
  throw Error(ErrorKind::kLookup, "no parameter named '" + std::string(name) + "'");
}

const Parameter& ParameterSet::get(std::string_view name) const {
  for (const auto& p : params_)
    if (p->name() == name) return *p;
  throw Error(ErrorKind::kLookup, "no parameter named '" + std::string(name) + "'");
}

bool ParameterSet::contains(std::string_view name) const {
  for (const auto& p : params_)
    if (p->name() == name) return true;
  return false;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p->value().size());
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

std::string ParameterSet::digest() const {
  Sha256 h;
  for (const auto& p : params_) {
    h.update(p->name());
    const std::int64_t dims[2] = {p->value().rows(), p->value().cols()};
    h.update(dims, sizeof(dims));
    h.update(p->value().data(), sizeof(double) * static_cast<std::size_t>(p->value().size()));
  }
  return h.hex_digest();
}

Vector ParameterSet::flatten_values() const {
  Vector out(static_cast<Eigen::Index>(scalar_count()));
  Eigen::Index off = 0;
  for (const auto& p : params_) {
    out.segment(off, p->value().size()) = p->value().reshaped();
    off += p->value().size();
  }
  return out;
}

Vector ParameterSet::flatten_grads() const {
  Vector out(static_cast<Eigen::Index>(scalar_count()));
  Eigen::Index off = 0;
  for (const auto& p : params_) {
    out.segment(off, p->grad().size()) = p->grad().reshaped();
    off += p->grad().size();
  }
  return out;
}

void ParameterSet::assign_values(const Vector& flat) {
  if (flat.size() != static_cast<Eigen::Index>(scalar_count()))
    throw Error(ErrorKind::kShape, "flat parameter vector has the wrong length");
  Eigen::Index off = 0;
  for (auto& p : params_) {
    p->value().reshaped() = flat.segment(off, p->value().size());
    off += p->value().size();
  }
}

// ---------------------------------------------------------------------------
// Var / Tape

const Matrix& Var::value() const {
  if (!valid()) throw Error(ErrorKind::kInternal, "value of an empty Var");
  return tape_->value(id_);
}

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw Error(ErrorKind::kShape, "scalar() on a " + shape(v) + " value");
  return v(0, 0);
}

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::constant(double value) { return push(Matrix::Constant(1, 1, value), false, nullptr); }

Var Tape::parameter(Parameter& p) {
  Node n;
  n.ref = &p.value();
  n.param = &p;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::push(Matrix value, bool requires_grad, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

const Matrix& Tape::value(int id) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  return n.ref ? *n.ref : n.value;
}

Matrix& Tape::grad(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.has_grad) {
    const Matrix& v = n.ref ? *n.ref : n.value;
    n.grad = Matrix::Zero(v.rows(), v.cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw Error(ErrorKind::kInternal, "backward on a foreign Var");
  if (loss.value().size() != 1) throw Error(ErrorKind::kShape, "backward requires a scalar loss");
  if (!requires_grad(loss.id())) return;
  grad(loss.id())(0, 0) += 1.0;
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.has_grad) continue;
    if (n.param) {
      n.param->grad() += n.grad;
    } else if (n.backward) {
      n.backward(*this, id);
    }
  }
}

// ---------------------------------------------------------------------------
// Ops

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tape& t = tape_of(a);
  const int ia = a.id(), ib = b.id();
  return t.push(a.value() + b.value(), t.requires_grad(ia) || t.requires_grad(ib),
                [ia, ib](Tape& t, int self) {
                  const Matrix& g = t.grad(self);
                  if (t.requires_grad(ia)) t.grad(ia) += g;
                  if (t.requires_grad(ib)) t.grad(ib) += g;
                });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tape& t = tape_of(a);
  const int ia = a.id(), ib = b.id();
  return t.push(a.value() - b.value(), t.requires_grad(ia) || t.requires_grad(ib),
                [ia, ib](Tape& t, int self) {
                  const Matrix& g = t.grad(self);
                  if (t.requires_grad(ia)) t.grad(ia) += g;
                  if (t.requires_grad(ib)) t.grad(ib) -= g;
                });
}

Var scale(const Var& a, double s) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.push(a.value() * s, t.requires_grad(ia),
                [ia, s](Tape& t, int self) { t.grad(ia) += s * t.grad(self); });
}

Var hadamard(const Var& a, const Var& b) {
  require_same_shape(a, b, "hadamard");
  Tape& t = tape_of(a);
  const int ia = a.id(), ib = b.id();
  return t.push(a.value().cwiseProduct(b.value()), t.requires_grad(ia) || t.requires_grad(ib),
                [ia, ib](Tape& t, int self) {
                  const Matrix& g = t.grad(self);
                  if (t.requires_grad(ia)) t.grad(ia) += g.cwiseProduct(t.value(ib));
                  if (t.requires_grad(ib)) t.grad(ib) += g.cwiseProduct(t.value(ia));
                });
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows())
    throw Error(ErrorKind::kShape, "matmul: " + shape(a.value()) + " * " + shape(b.value()));
  Tape& t = tape_of(a);
  const int ia = a.id(), ib = b.id();
  return t.push(a.value() * b.value(), t.requires_grad(ia) || t.requires_grad(ib),
                [ia, ib](Tape& t, int self) {
                  const Matrix& g = t.grad(self);
                  if (t.requires_grad(ia)) t.grad(ia).noalias() += g * t.value(ib).transpose();
                  if (t.requires_grad(ib)) t.grad(ib).noalias() += t.value(ia).transpose() * g;
                });
}

Var transpose(const Var& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.push(a.value().transpose(), t.requires_grad(ia),
                [ia](Tape& t, int self) { t.grad(ia) += t.grad(self).transpose(); });
}

Var dot(const Var& a, const Var& b) {
  require_same_shape(a, b, "dot");
  Tape& t = tape_of(a);
  const int ia = a.id(), ib = b.id();
  const double v = a.value().cwiseProduct(b.value()).sum();
  return t.push(Matrix::Constant(1, 1, v), t.requires_grad(ia) || t.requires_grad(ib),
                [ia, ib](Tape& t, int self) {
                  const double g = t.grad(self)(0, 0);
                  if (t.requires_grad(ia)) t.grad(ia) += g * t.value(ib);
                  if (t.requires_grad(ib)) t.grad(ib) += g * t.value(ia);
                });
}

Var sum(const Var& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.push(Matrix::Constant(1, 1, a.value().sum()), t.requires_grad(ia),
                [ia](Tape& t, int self) { t.grad(ia).array() += t.grad(self)(0, 0); });
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error(ErrorKind::kShape, "concat of nothing");
  Tape& t = tape_of(parts.front());
  Eigen::Index rows = 0;
  bool needs = false;
  for (const auto& p : parts) {
    require_column(p, "concat");
    rows += p.rows();
    needs = needs || t.requires_grad(p.id());
  }
  Matrix out(rows, 1);
  std::vector<int> ids;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    off += p.rows();
    ids.push_back(p.id());
  }
  return t.push(std::move(out), needs, [ids](Tape& t, int self) {
    Eigen::Index off = 0;
    for (int id : ids) {
      const Eigen::Index r = t.value(id).rows();
      if (t.requires_grad(id)) t.grad(id) += t.grad(self).middleRows(off, r);
      off += r;
    }
  });
}

Var hstack(const std::vector<Var>& columns) {
  if (columns.empty()) throw Error(ErrorKind::kShape, "hstack of nothing");
  Tape& t = tape_of(columns.front());
  const Eigen::Index rows = columns.front().rows();
  Matrix out(rows, static_cast<Eigen::Index>(columns.size()));
  std::vector<int> ids;
  bool needs = false;
  for (std::size_t j = 0; j < columns.size(); ++j) {
    require_column(columns[j], "hstack");
    if (columns[j].rows() != rows) throw Error(ErrorKind::kShape, "hstack: ragged columns");
    out.col(static_cast<Eigen::Index>(j)) = columns[j].value();
    ids.push_back(columns[j].id());
    needs = needs || t.requires_grad(columns[j].id());
  }
  return t.push(std::move(out), needs, [ids](Tape& t, int self) {
    for (std::size_t j = 0; j < ids.size(); ++j)
      if (t.requires_grad(ids[j])) t.grad(ids[j]) += t.grad(self).col(static_cast<Eigen::Index>(j));
  });
}

Var element(const Var& a, Eigen::Index row) {
  require_column(a, "element");
  if (row < 0 || row >= a.rows()) throw Error(ErrorKind::kIndex, "element index out of range");
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.push(Matrix::Constant(1, 1, a.value()(row, 0)), t.requires_grad(ia),
                [ia, row](Tape& t, int self) { t.grad(ia)(row, 0) += t.grad(self)(0, 0); });
}

Var softmax(const Var& a) {
  require_column(a, "softmax");
  Tape& t = tape_of(a);
  const int ia = a.id();
  const Matrix& x = a.value();
  Matrix y = (x.array() - x.maxCoeff()).exp().matrix();
  y /= y.sum();
  return t.push(std::move(y), t.requires_grad(ia), [ia](Tape& t, int self) {
    const Matrix& y = t.value(self);
    const Matrix& g = t.grad(self);
    const double inner = g.cwiseProduct(y).sum();
    t.grad(ia).array() += y.array() * (g.array() - inner);
  });
}

Var log(const Var& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.push(a.value().array().log().matrix(), t.requires_grad(ia), [ia](Tape& t, int self) {
    t.grad(ia).array() += t.grad(self).array() / t.value(ia).array();
  });
}

Var tanh(const Var& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.push(a.value().array().tanh().matrix(), t.requires_grad(ia), [ia](Tape& t, int self) {
    const auto& y = t.value(self).array();
    t.grad(ia).array() += t.grad(self).array() * (1.0 - y * y);
  });
}

Var sigmoid(const Var& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  Matrix y = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return t.push(std::move(y), t.requires_grad(ia), [ia](Tape& t, int self) {
    const auto& y = t.value(self).array();
    t.grad(ia).array() += t.grad(self).array() * y * (1.0 - y);
  });
}

Var relu(const Var& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.push(a.value().cwiseMax(0.0), t.requires_grad(ia), [ia](Tape& t, int self) {
    t.grad(ia).array() += (t.value(ia).array() > 0.0).select(t.grad(self).array(), 0.0);
  });
}

Var one_minus(const Var& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.push((1.0 - a.value().array()).matrix(), t.requires_grad(ia),
                [ia](Tape& t, int self) { t.grad(ia) -= t.grad(self); });
}

Var clamp(const Var& a, double lo, double hi) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.push(a.value().cwiseMax(lo).cwiseMin(hi), t.requires_grad(ia),
                [ia, lo, hi](Tape& t, int self) {
                  const auto& x = t.value(ia).array();
                  t.grad(ia).array() += (x >= lo && x <= hi).select(t.grad(self).array(), 0.0);
                });
}

Var mix(const Var& a, const Var& b, double w) {
  require_same_shape(a, b, "mix");
  Tape& t = tape_of(a);
  const int ia = a.id(), ib = b.id();
  Matrix v = w * a.value() + (1.0 - w) * b.value();
  return t.push(std::move(v), t.requires_grad(ia) || t.requires_grad(ib),
                [ia, ib, w](Tape& t, int self) {
                  const Matrix& g = t.grad(self);
                  if (t.requires_grad(ia)) t.grad(ia) += w * g;
                  if (t.requires_grad(ib)) t.grad(ib) += (1.0 - w) * g;
                });
}

Var sparse_affine(Tape& tape, Parameter& weight, Parameter& bias, const SparseFeatures& x) {
  const Matrix& w = weight.value();
  if (x.dim != w.cols())
    throw Error(ErrorKind::kShape, "sparse_affine: feature dim " + std::to_string(x.dim) +
                                       " vs weight " + shape(w));
  Matrix y = bias.value();
  for (std::size_t n = 0; n < x.index.size(); ++n) y.col(0) += x.value[n] * w.col(x.index[n]);
  Parameter* wp = &weight;
  Parameter* bp = &bias;
  // Feature vectors are owned by the caller and outlive the tape.
  const SparseFeatures* xp = &x;
  return tape.push(std::move(y), true, [wp, bp, xp](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    bp->grad() += g;
    Matrix& wg = wp->grad();
    for (std::size_t n = 0; n < xp->index.size(); ++n) wg.col(xp->index[n]) += xp->value[n] * g.col(0);
  });
}

Var embedding_column(Tape& tape, Parameter& table, int index) {
  if (index < 0 || index >= table.value().cols())
    throw Error(ErrorKind::kIndex, "embedding index out of range");
  Parameter* tp = &table;
  return tape.push(table.value().col(index), true, [tp, index](Tape& t, int self) {
    tp->grad().col(index) += t.grad(self).col(0);
  });
}

}  // namespace stancemil::ad
