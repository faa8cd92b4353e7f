#include "dvc/autodiff.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace dvc::ad {

// ---------------------------------------------------------------- ParamSet

Parameter& ParamSet::add(const std::string& name, int rows, int cols) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = Mat::Zero(rows, cols);
  p->grad = Mat::Zero(rows, cols);
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter* ParamSet::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

const Parameter* ParamSet::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

Parameter& ParamSet::at(const std::string& name) {
  auto* p = find(name);
  if (!p) throw std::out_of_range("unknown parameter: " + name);
  return *p;
}

std::size_t ParamSet::num_elements() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
  return n;
}

void ParamSet::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

void ParamSet::set_zero() {
  for (auto& p : params_) p->value.setZero();
}

void ParamSet::init_uniform(std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& p : params_)
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = u(rng);
}

double ParamSet::grad_norm() const {
  double sq = 0.0;
  for (const auto& p : params_) sq += p->grad.squaredNorm();
  return std::sqrt(sq);
}

double ParamSet::clip_grad_norm(double max_norm) {
  const double norm = grad_norm();
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& p : params_) p->grad *= f;
  }
  return norm;
}

void ParamSet::copy_values_from(const ParamSet& other) {
  for (auto& p : params_) {
    const Parameter* q = other.find(p->name);
    if (!q || q->value.rows() != p->value.rows() || q->value.cols() != p->value.cols())
      throw std::invalid_argument("parameter mismatch: " + p->name);
    p->value = q->value;
  }
}

// -------------------------------------------------------------------- Tape

const Mat& Var::value() const { return tape_->value(id_); }

Mat& Tape::grad(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(int id, const Mat& g) {
  if (!nodes_[id].needs_grad) return;
  Mat& dst = grad(id);
  dst += g;
}

Var Tape::constant(Mat value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::param(Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var(this, it->second);
  Node n;
  n.value = p.value;
  n.param = &p;
  n.needs_grad = grad_enabled_;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_[&p] = id;
  return Var(this, id);
}

Var Tape::record(Mat value, std::initializer_list<Var> inputs, Backward bw) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(bw));
}

Var Tape::record(Mat value, std::span<const Var> inputs, Backward bw) {
  Node n;
  n.value = std::move(value);
  if (grad_enabled_) {
    for (const Var& v : inputs) {
      if (nodes_[v.id()].needs_grad) {
        n.needs_grad = true;
        break;
      }
    }
    if (n.needs_grad) n.backward = std::move(bw);
  }
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::backward(Var loss, double seed) {
  if (!grad_enabled_) throw std::logic_error("backward on a tape without gradients");
  if (loss.rows() != 1 || loss.cols() != 1) throw std::invalid_argument("backward needs a scalar");
  if (!nodes_[loss.id()].needs_grad) return;
  grad(loss.id())(0, 0) += seed;
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.param) {
      n.param->grad += n.grad;
    } else if (n.backward) {
      n.backward(*this, id);
    }
  }
}

// --------------------------------------------------------------------- ops

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  Tape& t = *a.tape();
  Mat v = a.value() * b.value();
  return t.record(std::move(v), {a, b}, [a, b](Tape& t, int self) {
    const Mat& g = t.grad(self);
    if (t.needs_grad(a.id())) t.accumulate(a.id(), g * b.value().transpose());
    if (t.needs_grad(b.id())) t.accumulate(b.id(), a.value().transpose() * g);
  });
}

Var add(Var a, Var b) {
  check_same_shape(a, b, "add");
  Tape& t = *a.tape();
  return t.record(a.value() + b.value(), {a, b}, [a, b](Tape& t, int self) {
    const Mat& g = t.grad(self);
    t.accumulate(a.id(), g);
    t.accumulate(b.id(), g);
  });
}

Var sub(Var a, Var b) {
  check_same_shape(a, b, "sub");
  Tape& t = *a.tape();
  return t.record(a.value() - b.value(), {a, b}, [a, b](Tape& t, int self) {
    const Mat& g = t.grad(self);
    t.accumulate(a.id(), g);
    t.accumulate(b.id(), -g);
  });
}

Var cmul(Var a, Var b) {
  check_same_shape(a, b, "cmul");
  Tape& t = *a.tape();
  return t.record(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& t, int self) {
    const Mat& g = t.grad(self);
    if (t.needs_grad(a.id())) t.accumulate(a.id(), g.cwiseProduct(b.value()));
    if (t.needs_grad(b.id())) t.accumulate(b.id(), g.cwiseProduct(a.value()));
  });
}

Var scale(Var a, double s) {
  Tape& t = *a.tape();
  return t.record(a.value() * s, {a}, [a, s](Tape& t, int self) {
    t.accumulate(a.id(), t.grad(self) * s);
  });
}

Var add_bias(Var a, Var b) {
  if (b.cols() != 1 || b.rows() != a.rows()) throw std::invalid_argument("add_bias: shape mismatch");
  Tape& t = *a.tape();
  Mat v = a.value().colwise() + b.value().col(0);
  return t.record(std::move(v), {a, b}, [a, b](Tape& t, int self) {
    const Mat& g = t.grad(self);
    t.accumulate(a.id(), g);
    if (t.needs_grad(b.id())) t.accumulate(b.id(), g.rowwise().sum());
  });
}

Var one_minus(Var a) {
  Tape& t = *a.tape();
  Mat v = (1.0 - a.value().array()).matrix();
  return t.record(std::move(v), {a}, [a](Tape& t, int self) { t.accumulate(a.id(), -t.grad(self)); });
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Var sigmoid(Var a) {
  Tape& t = *a.tape();
  Mat v = a.value().unaryExpr([](double x) { return sigmoid(x); });
  return t.record(std::move(v), {a}, [a](Tape& t, int self) {
    const Mat& y = t.value(self);
    t.accumulate(a.id(), t.grad(self).cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
  });
}

Var tanh(Var a) {
  Tape& t = *a.tape();
  Mat v = a.value().array().tanh().matrix();
  return t.record(std::move(v), {a}, [a](Tape& t, int self) {
    const Mat& y = t.value(self);
    t.accumulate(a.id(), t.grad(self).cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

Var relu(Var a) {
  Tape& t = *a.tape();
  Mat v = a.value().cwiseMax(0.0);
  return t.record(std::move(v), {a}, [a](Tape& t, int self) {
    Mat mask = (a.value().array() > 0.0).cast<double>().matrix();
    t.accumulate(a.id(), t.grad(self).cwiseProduct(mask));
  });
}

Var clamp(Var a, double lo, double hi) {
  Tape& t = *a.tape();
  Mat v = a.value().cwiseMax(lo).cwiseMin(hi);
  return t.record(std::move(v), {a}, [a, lo, hi](Tape& t, int self) {
    Mat mask = (a.value().array() >= lo && a.value().array() <= hi).cast<double>().matrix();
    t.accumulate(a.id(), t.grad(self).cwiseProduct(mask));
  });
}

Var transpose(Var a) {
  Tape& t = *a.tape();
  return t.record(a.value().transpose(), {a}, [a](Tape& t, int self) {
    t.accumulate(a.id(), t.grad(self).transpose());
  });
}

Var sum(Var a) {
  Tape& t = *a.tape();
  Mat v(1, 1);
  v(0, 0) = a.value().sum();
  return t.record(std::move(v), {a}, [a](Tape& t, int self) {
    const double g = t.grad(self)(0, 0);
    t.accumulate(a.id(), Mat::Constant(a.rows(), a.cols(), g));
  });
}

Var vcat(std::initializer_list<Var> parts) {
  return vcat(std::span<const Var>(parts.begin(), parts.size()));
}

Var vcat(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("vcat: no inputs");
  Tape& t = *parts.front().tape();
  const int c = parts.front().cols();
  int r = 0;
  for (const Var& p : parts) {
    if (p.cols() != c) throw std::invalid_argument("vcat: column mismatch");
    r += p.rows();
  }
  Mat v(r, c);
  int off = 0;
  for (const Var& p : parts) {
    v.middleRows(off, p.rows()) = p.value();
    off += p.rows();
  }
  std::vector<Var> in(parts.begin(), parts.end());
  return t.record(std::move(v), parts, [in](Tape& t, int self) {
    const Mat& g = t.grad(self);
    int off = 0;
    for (const Var& p : in) {
      if (t.needs_grad(p.id())) t.accumulate(p.id(), g.middleRows(off, p.rows()));
      off += p.rows();
    }
  });
}

Var hcat(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("hcat: no inputs");
  Tape& t = *parts.front().tape();
  const int r = parts.front().rows();
  int c = 0;
  for (const Var& p : parts) {
    if (p.rows() != r) throw std::invalid_argument("hcat: row mismatch");
    c += p.cols();
  }
  Mat v(r, c);
  int off = 0;
  for (const Var& p : parts) {
    v.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  std::vector<Var> in(parts.begin(), parts.end());
  return t.record(std::move(v), parts, [in](Tape& t, int self) {
    const Mat& g = t.grad(self);
    int off = 0;
    for (const Var& p : in) {
      if (t.needs_grad(p.id())) t.accumulate(p.id(), g.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

Var rows(Var a, int start, int count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw std::out_of_range("rows: slice out of range");
  Tape& t = *a.tape();
  Mat v = a.value().middleRows(start, count);
  return t.record(std::move(v), {a}, [a, start, count](Tape& t, int self) {
    if (!t.needs_grad(a.id())) return;
    t.grad(a.id()).middleRows(start, count) += t.grad(self);
  });
}

Var col(Var a, int j) {
  if (j < 0 || j >= a.cols()) throw std::out_of_range("col: index out of range");
  Tape& t = *a.tape();
  Mat v = a.value().col(j);
  return t.record(std::move(v), {a}, [a, j](Tape& t, int self) {
    if (!t.needs_grad(a.id())) return;
    t.grad(a.id()).col(j) += t.grad(self);
  });
}

Var pick(Var a, int i, int j) {
  if (i < 0 || i >= a.rows() || j < 0 || j >= a.cols()) throw std::out_of_range("pick: index out of range");
  Tape& t = *a.tape();
  Mat v(1, 1);
  v(0, 0) = a.value()(i, j);
  return t.record(std::move(v), {a}, [a, i, j](Tape& t, int self) {
    if (!t.needs_grad(a.id())) return;
    t.grad(a.id())(i, j) += t.grad(self)(0, 0);
  });
}

Var reshape_rowmajor(Var a, int r, int c) {
  if (a.value().size() != static_cast<Eigen::Index>(r) * c) throw std::invalid_argument("reshape: size mismatch");
  if (a.rows() != 1 && a.cols() != 1) throw std::invalid_argument("reshape: input must be a vector");
  Tape& t = *a.tape();
  Mat v(r, c);
  const Mat& in = a.value();
  for (int k = 0; k < r * c; ++k) v(k / c, k % c) = in.data()[k];
  const int ar = a.rows(), ac = a.cols();
  return t.record(std::move(v), {a}, [a, r, c, ar, ac](Tape& t, int self) {
    const Mat& g = t.grad(self);
    Mat back(ar, ac);
    for (int k = 0; k < r * c; ++k) back.data()[k] = g(k / c, k % c);
    t.accumulate(a.id(), back);
  });
}

Vec softmax(const Vec& v) {
  const double m = v.maxCoeff();
  Vec e = (v.array() - m).exp().matrix();
  return e / e.sum();
}

Var softmax_cols(Var a) {
  Tape& t = *a.tape();
  Mat v(a.rows(), a.cols());
  for (int j = 0; j < a.cols(); ++j) v.col(j) = softmax(a.value().col(j));
  return t.record(std::move(v), {a}, [a](Tape& t, int self) {
    const Mat& y = t.value(self);
    const Mat& g = t.grad(self);
    Mat back(y.rows(), y.cols());
    for (int j = 0; j < y.cols(); ++j) {
      const double dot = g.col(j).dot(y.col(j));
      back.col(j) = y.col(j).cwiseProduct((g.col(j).array() - dot).matrix());
    }
    t.accumulate(a.id(), back);
  });
}

Var softmax_rows(Var a) {
  return transpose(softmax_cols(transpose(a)));
}

Var log_softmax(Var a, const std::vector<bool>* mask) {
  if (a.cols() != 1) throw std::invalid_argument("log_softmax: expects a column vector");
  Tape& t = *a.tape();
  const int n = a.rows();
  std::vector<bool> keep = mask ? *mask : std::vector<bool>(n, true);
  if (static_cast<int>(keep.size()) != n) throw std::invalid_argument("log_softmax: mask size mismatch");
  const Mat& x = a.value();
  double m = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i)
    if (keep[i]) m = std::max(m, x(i, 0));
  if (!std::isfinite(m)) throw std::invalid_argument("log_softmax: every entry masked");
  double z = 0.0;
  for (int i = 0; i < n; ++i)
    if (keep[i]) z += std::exp(x(i, 0) - m);
  const double lse = m + std::log(z);
  Mat v(n, 1);
  for (int i = 0; i < n; ++i)
    v(i, 0) = keep[i] ? x(i, 0) - lse : -std::numeric_limits<double>::infinity();
  return t.record(std::move(v), {a}, [a, keep](Tape& t, int self) {
    const Mat& y = t.value(self);
    const Mat& g = t.grad(self);
    const int n = static_cast<int>(y.rows());
    double gs = 0.0;
    for (int i = 0; i < n; ++i)
      if (keep[i]) gs += g(i, 0);
    Mat back = Mat::Zero(n, 1);
    for (int i = 0; i < n; ++i)
      if (keep[i]) back(i, 0) = g(i, 0) - std::exp(y(i, 0)) * gs;
    t.accumulate(a.id(), back);
  });
}

Var cross_entropy(Var logits, int target) {
  if (target < 0 || target >= logits.rows()) throw std::out_of_range("cross_entropy: target out of range");
  return scale(pick(log_softmax(logits), target), -1.0);
}

Var bce_with_logits(Var logits, const Mat& targets) {
  if (targets.rows() != logits.rows() || targets.cols() != logits.cols())
    throw std::invalid_argument("bce_with_logits: shape mismatch");
  Tape& t = *logits.tape();
  const Mat& x = logits.value();
  const double n = static_cast<double>(x.size());
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double z = x.data()[i];
    // softplus(z) - y z, evaluated stably
    const double sp = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    total += sp - targets.data()[i] * z;
  }
  Mat v(1, 1);
  v(0, 0) = total / n;
  return t.record(std::move(v), {logits}, [logits, targets, n](Tape& t, int self) {
    const double g = t.grad(self)(0, 0);
    Mat p = logits.value().unaryExpr([](double z) { return sigmoid(z); });
    t.accumulate(logits.id(), (p - targets) * (g / n));
  });
}

Var affine(Tape& t, Parameter& w, Parameter& b, Var x) {
  return add_bias(matmul(t.param(w), x), t.param(b));
}

}  // namespace dvc::ad
