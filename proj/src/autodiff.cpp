// SPDX-License-Identifier: Apache-2.0
#include "scmd/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

namespace scmd {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDimension: return "dimension";
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kParameter: return "parameter";
    case ErrorKind::kDomain: return "domain";
    case ErrorKind::kDegenerateVector: return "degenerate_vector";
    case ErrorKind::kContract: return "contract";
    case ErrorKind::kLookup: return "lookup";
    case ErrorKind::kTemplate: return "template";
    case ErrorKind::kConfiguration: return "configuration";
    case ErrorKind::kCapacity: return "capacity";
    case ErrorKind::kBadMagic: return "bad_magic";
    case ErrorKind::kTruncated: return "truncated";
    case ErrorKind::kCrcMismatch: return "crc_mismatch";
    case ErrorKind::kValidation: return "validation";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kDivergence: return "divergence";
  }
  return "unknown";
}

namespace ad {
namespace {

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << '[' << m.rows() << 'x' << m.cols() << ']';
  return os.str();
}

void require_same_shape(const char* op, Var a, Var b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorKind::kDimension, std::string(op) + ": shape mismatch " +
                                           shape_str(a.value()) + " vs " + shape_str(b.value()));
  }
}

void require_same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) {
    throw Error(ErrorKind::kContract, "operands live on different tapes");
  }
}

void require_temperature(double t) {
  if (!(t > 0.0) || !std::isfinite(t)) {
    throw Error(ErrorKind::kParameter, "temperature must be positive, got " + std::to_string(t));
  }
}

// Row-wise max-shifted softmax of z / T.
Matrix softmax_rows(const Matrix& z, double t) {
  Matrix out(z.rows(), z.cols());
  for (Index i = 0; i < z.rows(); ++i) {
    const double m = z.row(i).maxCoeff();
    out.row(i) = ((z.row(i).array() - m) / t).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

}  // namespace

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

double Var::scalar() const {
  if (rows() != 1 || cols() != 1) {
    throw Error(ErrorKind::kShape, "expected a scalar, got " + shape_str(value()));
  }
  return value()(0, 0);
}

Var Tape::leaf(Matrix value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), Matrix(), requires_grad, true, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backprop backprop) {
  bool track = false;
  for (const Var& in : inputs) {
    if (in.tape_ != this) throw Error(ErrorKind::kContract, "input recorded on another tape");
    track = track || nodes_[in.id_].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), Matrix(), track, false,
                        track ? std::move(backprop) : Backprop{}});
  return Var(this, nodes_.size() - 1);
}

Tape::Node& Tape::node(Var v) { return nodes_[v.id_]; }

void Tape::accumulate(Var v, const Matrix& g) {
  Node& n = node(v);
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(Var loss) {
  if (loss.tape_ != this) throw Error(ErrorKind::kContract, "loss recorded on another tape");
  if (nodes_.empty()) throw Error(ErrorKind::kContract, "backward on an empty tape");
  const Matrix& lv = nodes_[loss.id_].value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw Error(ErrorKind::kShape, "backward needs a scalar loss, got " + shape_str(lv));
  }
  for (Node& n : nodes_) {
    if (!n.is_leaf) n.grad.resize(0, 0);
  }
  accumulate(loss, Matrix::Ones(1, 1));
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.is_leaf || !n.requires_grad || n.grad.size() == 0 || !n.backprop) continue;
    n.backprop(*this, i);
  }
}

void Tape::zero_grad() {
  for (Node& n : nodes_) n.grad.resize(0, 0);
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  if (a.cols() != b.rows()) {
    throw Error(ErrorKind::kDimension,
                "matmul: inner dimensions differ " + shape_str(a.value()) + " x " + shape_str(b.value()));
  }
  return a.tape().record(a.value() * b.value(), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (a.requires_grad()) t.accumulate(a, g * b.value().transpose());
    if (b.requires_grad()) t.accumulate(b, a.value().transpose() * g);
  });
}

Var transpose(Var a) {
  return a.tape().record(a.value().transpose(), {a}, [a](Tape& t, std::size_t self) {
    t.accumulate(a, t.grad(self).transpose());
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("add", a, b);
  return a.tape().record(a.value() + b.value(), {a, b}, [a, b](Tape& t, std::size_t self) {
    t.accumulate(a, t.grad(self));
    t.accumulate(b, t.grad(self));
  });
}

Var add_row(Var a, Var row) {
  require_same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw Error(ErrorKind::kDimension,
                "add_row: expected [1x" + std::to_string(a.cols()) + "] row, got " + shape_str(row.value()));
  }
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return a.tape().record(std::move(out), {a, row}, [a, row](Tape& t, std::size_t self) {
    t.accumulate(a, t.grad(self));
    if (row.requires_grad()) t.accumulate(row, t.grad(self).colwise().sum());
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("sub", a, b);
  return a.tape().record(a.value() - b.value(), {a, b}, [a, b](Tape& t, std::size_t self) {
    t.accumulate(a, t.grad(self));
    if (b.requires_grad()) t.accumulate(b, -t.grad(self));
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("mul", a, b);
  return a.tape().record(a.value().cwiseProduct(b.value()), {a, b},
                         [a, b](Tape& t, std::size_t self) {
                           const Matrix& g = t.grad(self);
                           if (a.requires_grad()) t.accumulate(a, g.cwiseProduct(b.value()));
                           if (b.requires_grad()) t.accumulate(b, g.cwiseProduct(a.value()));
                         });
}

Var mul_scalar(Var a, double s) {
  return a.tape().record(a.value() * s, {a}, [a, s](Tape& t, std::size_t self) {
    t.accumulate(a, t.grad(self) * s);
  });
}

Var relu(Var a) {
  // Subgradient at 0 is 0.
  return a.tape().record(a.value().cwiseMax(0.0), {a}, [a](Tape& t, std::size_t self) {
    const Matrix mask = (a.value().array() > 0.0).cast<double>().matrix();
    t.accumulate(a, t.grad(self).cwiseProduct(mask));
  });
}

Var log(Var a) {
  if (!(a.value().array() > 0.0).all()) {
    throw Error(ErrorKind::kDomain, "log: input must be strictly positive");
  }
  return a.tape().record(a.value().array().log().matrix(), {a}, [a](Tape& t, std::size_t self) {
    t.accumulate(a, t.grad(self).cwiseQuotient(a.value()));
  });
}

Var sum(Var a) {
  return a.tape().record(Matrix::Constant(1, 1, a.value().sum()), {a},
                         [a](Tape& t, std::size_t self) {
                           t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), t.grad(self)(0, 0)));
                         });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw Error(ErrorKind::kShape, "mean of an empty tensor");
  return a.tape().record(Matrix::Constant(1, 1, a.value().sum() / n), {a},
                         [a, n](Tape& t, std::size_t self) {
                           t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), t.grad(self)(0, 0) / n));
                         });
}

Var row_sum(Var a) {
  return a.tape().record(a.value().rowwise().sum(), {a}, [a](Tape& t, std::size_t self) {
    Matrix g(a.rows(), a.cols());
    g.colwise() = t.grad(self).col(0);
    t.accumulate(a, g);
  });
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  Matrix out(static_cast<Index>(idx.size()), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= static_cast<std::size_t>(a.rows())) {
      throw Error(ErrorKind::kDimension, "gather_rows: row " + std::to_string(idx[i]) +
                                             " out of range for " + shape_str(a.value()));
    }
    out.row(static_cast<Index>(i)) = a.value().row(static_cast<Index>(idx[i]));
  }
  return a.tape().record(std::move(out), {a}, [a, idx](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix ga = Matrix::Zero(a.rows(), a.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      ga.row(static_cast<Index>(idx[i])) += g.row(static_cast<Index>(i));
    }
    t.accumulate(a, ga);
  });
}

Var pick(Var a, std::span<const int> cols) {
  if (static_cast<Index>(cols.size()) != a.rows()) {
    throw Error(ErrorKind::kDimension, "pick: " + std::to_string(cols.size()) +
                                           " indices for " + shape_str(a.value()));
  }
  std::vector<int> c(cols.begin(), cols.end());
  Matrix out(a.rows(), 1);
  for (Index i = 0; i < a.rows(); ++i) {
    if (c[i] < 0 || c[i] >= a.cols()) {
      throw Error(ErrorKind::kParameter, "pick: column " + std::to_string(c[i]) + " out of range");
    }
    out(i, 0) = a.value()(i, c[i]);
  }
  return a.tape().record(std::move(out), {a}, [a, c](Tape& t, std::size_t self) {
    Matrix ga = Matrix::Zero(a.rows(), a.cols());
    for (Index i = 0; i < a.rows(); ++i) ga(i, c[i]) = t.grad(self)(i, 0);
    t.accumulate(a, ga);
  });
}

Var softmax_t(Var logits, double temperature) {
  require_temperature(temperature);
  Matrix p = softmax_rows(logits.value(), temperature);
  return logits.tape().record(std::move(p), {logits},
                              [logits, temperature](Tape& t, std::size_t self) {
                                const Matrix& y = t.value(self);
                                const Matrix& g = t.grad(self);
                                const Vector dot = g.cwiseProduct(y).rowwise().sum();
                                Matrix gz = g;
                                gz.colwise() -= dot;
                                t.accumulate(logits, y.cwiseProduct(gz) / temperature);
                              });
}

Var log_softmax_t(Var logits, double temperature) {
  require_temperature(temperature);
  const Matrix& z = logits.value();
  Matrix out(z.rows(), z.cols());
  for (Index i = 0; i < z.rows(); ++i) {
    const double m = z.row(i).maxCoeff();
    const auto shifted = ((z.row(i).array() - m) / temperature).eval();
    out.row(i) = (shifted - std::log(shifted.exp().sum())).matrix();
  }
  return logits.tape().record(std::move(out), {logits},
                              [logits, temperature](Tape& t, std::size_t self) {
                                const Matrix p = t.value(self).array().exp().matrix();
                                const Matrix& g = t.grad(self);
                                const Vector total = g.rowwise().sum();
                                Matrix gz = g - p.cwiseProduct(total.replicate(1, p.cols()));
                                t.accumulate(logits, gz / temperature);
                              });
}

Var l2_normalize(Var a) {
  const Matrix& v = a.value();
  Vector norms = v.rowwise().norm();
  for (Index i = 0; i < norms.size(); ++i) {
    if (!(norms(i) > kNormEpsilon)) {
      throw Error(ErrorKind::kDegenerateVector,
                  "l2_normalize: row " + std::to_string(i) + " has norm " + std::to_string(norms(i)));
    }
  }
  Matrix u = v.array().colwise() / norms.array();
  return a.tape().record(std::move(u), {a}, [a, norms](Tape& t, std::size_t self) {
    const Matrix& u = t.value(self);
    const Matrix& g = t.grad(self);
    const Vector dot = u.cwiseProduct(g).rowwise().sum();
    Matrix gv = g - u.cwiseProduct(dot.replicate(1, u.cols()));
    gv.array().colwise() /= norms.array();
    t.accumulate(a, gv);
  });
}

double finite_diff_check(const ScalarFn& f, const Matrix& x, double eps) {
  Matrix analytic;
  {
    Tape tape;
    Var xv = tape.leaf(x, true);
    Var loss = f(tape, xv);
    tape.backward(loss);
    analytic = xv.grad().size() == 0 ? Matrix::Zero(x.rows(), x.cols()) : xv.grad();
  }
  auto eval = [&](const Matrix& at) {
    Tape tape;
    Var xv = tape.leaf(at, true);
    return f(tape, xv).scalar();
  };
  double worst = 0.0;
  Matrix probe = x;
  for (Index r = 0; r < x.rows(); ++r) {
    for (Index c = 0; c < x.cols(); ++c) {
      const double orig = probe(r, c);
      probe(r, c) = orig + eps;
      const double up = eval(probe);
      probe(r, c) = orig - eps;
      const double down = eval(probe);
      probe(r, c) = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic(r, c);
      worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
    }
  }
  return worst;
}

}  // namespace ad
}  // namespace scmd
