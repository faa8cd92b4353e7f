#include <doctest.h>

#include <cmath>
#include <random>

#include "dvc/autodiff.hpp"
#include "dvc/optim.hpp"

using namespace dvc;
using namespace dvc::ad;

namespace {

// Central differences of f() with respect to every entry of p.
Mat numeric_grad(Parameter& p, const std::function<double()>& f, double h = 1e-5) {
  Mat g(p.value.rows(), p.value.cols());
  for (Eigen::Index k = 0; k < p.value.size(); ++k) {
    const double keep = p.value(k);
    p.value(k) = keep + h;
    const double up = f();
    p.value(k) = keep - h;
    const double down = f();
    p.value(k) = keep;
    g(k) = (up - down) / (2 * h);
  }
  return g;
}

double rel_error(const Mat& a, const Mat& n) {
  double worst = 0.0;
  for (Eigen::Index k = 0; k < a.size(); ++k)
    worst = std::max(worst, std::abs(a(k) - n(k)) / std::max({std::abs(a(k)), std::abs(n(k)), 1e-5}));
  return worst;
}

}  // namespace

TEST_CASE("every op passes a finite-difference check inside one composite graph") {
  ParamSet ps;
  std::mt19937_64 rng(4);
  auto& w = ps.add("w", 4, 3);
  auto& b = ps.add("b", 4, 1);
  auto& x = ps.add("x", 3, 5);
  auto& y = ps.add("y", 4, 5);
  ps.init_uniform(rng, 0.7);
  const std::vector<bool> mask = {true, false, true, true};
  auto f = [&](Tape& t) {
    Var h = tanh(add_bias(matmul(t.param(w), t.param(x)), t.param(b)));  // 4x5
    Var s = sigmoid(cmul(h, t.param(y)));
    Var r = clamp(relu(sub(s, scale(t.param(y), 0.3))), -1.0, 0.6);
    Var a = softmax_rows(r);
    Var c = softmax_cols(transpose(a));  // 5x4
    Var stacked = vcat({col(a, 1), rows(col(c, 0), 0, 2), reshape_rowmajor(pick(a, 0, 0), 1, 1)});
    Var wide = hcat(std::vector<Var>{col(h, 0), col(h, 2)});
    Var ls = log_softmax(col(h, 3), &mask);
    Var total = add(sum(cmul(stacked, stacked)), sum(one_minus(wide)));
    total = add(total, pick(ls, 2));
    total = add(total, cross_entropy(col(r, 4), 1));
    total = add(total, bce_with_logits(h, Mat::Constant(4, 5, 0.3)));
    return total;
  };
  auto value = [&]() {
    Tape t(false);
    return f(t).scalar();
  };
  ps.zero_grad();
  Tape t;
  t.backward(f(t));
  for (auto* p : {&w, &b, &x, &y}) CHECK(rel_error(p->grad, numeric_grad(*p, value)) < 1e-4);
}

TEST_CASE("repeated param binding accumulates gradient once per use") {
  ParamSet ps;
  auto& p = ps.add("p", 1, 1);
  p.value(0) = 3.0;
  ps.zero_grad();
  Tape t;
  Var a = t.param(p), b = t.param(p);
  CHECK(a.id() == b.id());
  t.backward(cmul(a, b));  // d(p^2)/dp = 6
  CHECK(p.grad(0) == doctest::Approx(6.0));
}

TEST_CASE("masked log-softmax gives masked entries zero probability") {
  Tape t;
  const std::vector<bool> mask = {true, false, true};
  Var ls = log_softmax(t.constant(Mat::Constant(3, 1, 2.0)), &mask);
  CHECK(std::exp(ls.value()(0)) == doctest::Approx(0.5));
  CHECK(std::exp(ls.value()(1)) == 0.0);
  CHECK(softmax(Vec::Constant(4, 1e3)).sum() == doctest::Approx(1.0));
}

TEST_CASE("gradient clipping never increases the norm") {
  ParamSet ps;
  std::mt19937_64 rng(2);
  auto& p = ps.add("p", 5, 5);
  for (double scale : {1e-3, 0.1, 1.0, 10.0}) {
    std::normal_distribution<double> n(0.0, scale);
    for (Eigen::Index k = 0; k < p.value.size(); ++k) p.grad(k) = 0;
    p.grad = Mat::NullaryExpr(5, 5, [&]() { return n(rng); });
    const double before = ps.grad_norm();
    const double reported = ps.clip_grad_norm(1.0);
    CHECK(reported == doctest::Approx(before));
    CHECK(ps.grad_norm() <= before + 1e-12);
    CHECK(ps.grad_norm() <= 1.0 + 1e-12);
  }
}

TEST_CASE("adam with zero gradients leaves parameters exactly unchanged") {
  ParamSet ps;
  std::mt19937_64 rng(3);
  ps.add("a", 3, 2);
  ps.init_uniform(rng, 1.0);
  ps.zero_grad();
  const Mat before = ps[0].value;
  Adam opt(1e-3);
  opt.step(ps);
  CHECK(ps[0].value == before);
}

TEST_CASE("adam descends a quadratic") {
  ParamSet ps;
  auto& p = ps.add("p", 2, 1);
  p.value << 3.0, -2.0;
  Adam opt(0.1);
  for (int i = 0; i < 500; ++i) {
    ps.zero_grad();
    Tape t;
    Var v = t.param(p);
    t.backward(sum(cmul(v, v)));
    opt.step(ps);
  }
  CHECK(p.value.norm() < 1e-2);
}
