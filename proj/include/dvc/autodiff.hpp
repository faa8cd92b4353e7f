#pragma once

// Minimal reverse-mode differentiation over dense double matrices.
//
// A Tape records every operation applied to Var handles. Calling
// backward() on a 1x1 Var walks the tape in reverse and accumulates
// gradients into the Parameters that were bound to the tape. All model
// code in this project (proposal scorer, selector, relation encoder,
// hierarchical decoder) is written against these ops so a single
// finite-difference harness can check every gradient path.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace dvc::ad {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// A named trainable tensor with its accumulated gradient.
struct Parameter {
  std::string name;
  Mat value;
  Mat grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

/// Owns parameters in insertion order. Addresses are stable.
class ParamSet {
 public:
  Parameter& add(const std::string& name, int rows, int cols);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  Parameter& at(const std::string& name);

  std::size_t size() const { return params_.size(); }
  std::size_t num_elements() const;
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad();
  void set_zero();
  /// Uniform init in [-scale, scale] for every parameter.
  void init_uniform(std::mt19937_64& rng, double scale);
  double grad_norm() const;
  /// Rescales all gradients so their global L2 norm is at most max_norm.
  /// Returns the norm before clipping.
  double clip_grad_norm(double max_norm);
  void copy_values_from(const ParamSet& other);

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Mat& value() const;
  int rows() const { return static_cast<int>(value().rows()); }
  int cols() const { return static_cast<int>(value().cols()); }
  double scalar() const { return value()(0, 0); }
  int id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, int)>;

  /// A tape with grad disabled records values only.
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Mat value);
  Var constant_vec(const Vec& value) { return constant(Mat(value)); }
  /// Binds a parameter. Repeated calls on one tape return the same node.
  Var param(Parameter& p);

  /// Reverse sweep from a 1x1 node; adds into Parameter::grad.
  void backward(Var loss, double seed = 1.0);

  const Mat& value(int id) const { return nodes_[id].value; }
  Mat& grad(int id);
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  /// Accumulates g into node id's gradient if it needs one.
  void accumulate(int id, const Mat& g);

  /// Records an op result. `inputs` decide whether a backward is kept.
  Var record(Mat value, std::initializer_list<Var> inputs, Backward bw);
  Var record(Mat value, std::span<const Var> inputs, Backward bw);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    Backward backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_nodes_;
  bool grad_enabled_;
};

// Elementwise / algebraic ops. Shapes follow Eigen conventions; column
// vectors are n x 1 matrices.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var cmul(Var a, Var b);
Var scale(Var a, double s);
/// a + b with b a column vector broadcast across a's columns.
Var add_bias(Var a, Var b);
Var one_minus(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
/// Elementwise clamp to [lo, hi]; no gradient outside the range.
Var clamp(Var a, double lo, double hi);
Var transpose(Var a);
Var sum(Var a);
/// Vertical concatenation (column vectors or equal-width matrices).
Var vcat(std::span<const Var> parts);
Var vcat(std::initializer_list<Var> parts);
/// Horizontal concatenation of equal-height matrices.
Var hcat(std::span<const Var> parts);
Var rows(Var a, int start, int count);
Var col(Var a, int j);
Var pick(Var a, int i, int j = 0);
/// Reinterprets a 1 x (r*c) or (r*c) x 1 vector as an r x c matrix with
/// element k landing at (k / c, k % c).
Var reshape_rowmajor(Var a, int r, int c);
/// Softmax down each column.
Var softmax_cols(Var a);
/// Softmax along each row.
Var softmax_rows(Var a);
/// Log-softmax of a column vector; entries with mask[i] == false get
/// probability exactly zero and receive no gradient.
Var log_softmax(Var a, const std::vector<bool>* mask = nullptr);
/// -log softmax(a)[target] for a column vector.
Var cross_entropy(Var logits, int target);

/// Mean binary cross-entropy between sigmoid(logits) and soft targets of
/// the same shape.
Var bce_with_logits(Var logits, const Mat& targets);

/// y = W x + b convenience.
Var affine(Tape& t, Parameter& w, Parameter& b, Var x);

/// Numerically stable softmax of a column vector (value only).
Vec softmax(const Vec& v);
double sigmoid(double x);

}  // namespace dvc::ad
