#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "doctest.h"
#include "gridvlm/autodiff.hpp"

using namespace gridvlm;
using ad::Mat;
using ad::Tape;
using ad::Var;

namespace {

Mat random_mat(std::mt19937_64& rng, int r, int c, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

// Central finite differences of a scalar graph against the tape gradients.
void check_grads(const std::function<Var(Tape&, const std::vector<Var>&)>& build,
                 std::vector<Mat> inputs, double h = 1e-6, double tol = 1e-5) {
  Tape t;
  std::vector<Var> leaves;
  for (const Mat& m : inputs) leaves.push_back(t.leaf(m));
  Var root = build(t, leaves);
  REQUIRE(t.val(root).size() == 1);
  t.backward(root);

  auto value_at = [&](const std::vector<Mat>& xs) {
    Tape tt;
    std::vector<Var> ls;
    for (const Mat& m : xs) ls.push_back(tt.leaf(m));
    return tt.val(build(tt, ls))(0, 0);
  };

  for (size_t k = 0; k < inputs.size(); ++k) {
    Mat g = t.grad(leaves[k]);
    for (int i = 0; i < inputs[k].rows(); ++i)
      for (int j = 0; j < inputs[k].cols(); ++j) {
        std::vector<Mat> plus = inputs, minus = inputs;
        plus[k](i, j) += h;
        minus[k](i, j) -= h;
        double fd = (value_at(plus) - value_at(minus)) / (2 * h);
        CHECK(g(i, j) == doctest::Approx(fd).epsilon(tol).scale(1.0));
      }
  }
}

}  // namespace

TEST_CASE("finite differences validate every differentiable op") {
  std::mt19937_64 rng(17);
  Mat a = random_mat(rng, 3, 4), b = random_mat(rng, 4, 3), c = random_mat(rng, 3, 4);

  check_grads([](Tape& t, const std::vector<Var>& v) { return t.sum_all(t.matmul(v[0], v[1])); },
              {a, b});
  check_grads(
      [](Tape& t, const std::vector<Var>& v) {
        return t.mean_all(t.hadamard(t.add(v[0], v[1]), t.sub(v[0], v[1])));
      },
      {a, c});
  check_grads(
      [](Tape& t, const std::vector<Var>& v) {
        return t.sum_all(t.add_scalar(t.scale(t.transpose(v[0]), 0.7), -0.3));
      },
      {a});
  check_grads(
      [](Tape& t, const std::vector<Var>& v) {
        return t.sum_all(t.hadamard(t.gelu(v[0]), t.gelu(v[0])));
      },
      {a});
  check_grads(
      [](Tape& t, const std::vector<Var>& v) {
        return t.sum_all(t.exp(t.scale(v[0], 0.5)));
      },
      {a});
  check_grads(
      [](Tape& t, const std::vector<Var>& v) {
        return t.sum_all(t.log(t.add_scalar(t.hadamard(v[0], v[0]), 1.0)));
      },
      {a});
  check_grads(
      [](Tape& t, const std::vector<Var>& v) {
        return t.sum_all(t.softmax_causal_rows(v[0]));
      },
      {random_mat(rng, 4, 4)});
  check_grads(
      [](Tape& t, const std::vector<Var>& v) {
        return t.sum_all(t.hadamard(t.log_softmax_rows(v[0]), t.exp(v[1])));
      },
      {a, c});
  check_grads(
      [](Tape& t, const std::vector<Var>& v) {
        return t.sum_all(t.rmsnorm_rows(v[0], v[1], 1e-6));
      },
      {a, random_mat(rng, 1, 4)});
  check_grads(
      [](Tape& t, const std::vector<Var>& v) {
        return t.sum_all(t.gather_rows(v[0], {2, 0, 2}));
      },
      {a});
  check_grads(
      [](Tape& t, const std::vector<Var>& v) {
        return t.sum_all(t.gather_coeffs(v[0], {{0, 1}, {2, 3}, {0, 1}}));
      },
      {a});
  check_grads(
      [](Tape& t, const std::vector<Var>& v) {
        return t.sum_all(t.matmul(t.concat_rows({v[0], v[1]}), t.transpose(v[2])));
      },
      {a, c, random_mat(rng, 2, 4)});
  check_grads(
      [](Tape& t, const std::vector<Var>& v) {
        return t.sum_all(t.concat_cols({v[0], t.scale(v[1], 2.0)}));
      },
      {a, c});
  check_grads(
      [](Tape& t, const std::vector<Var>& v) {
        return t.sum_all(t.hadamard(t.slice_rows(v[0], 1, 2), t.slice_cols(v[1], 0, 4)));
      },
      {a, random_mat(rng, 2, 5)});
  check_grads(
      [](Tape& t, const std::vector<Var>& v) {
        return t.sum_all(t.minimum(v[0], t.scale(v[1], 1.5)));
      },
      {a, c});
}

TEST_CASE("clamp passes gradient only strictly inside the interval") {
  Mat x(1, 3);
  x << -2.0, 0.25, 3.0;
  Tape t;
  Var v = t.leaf(x);
  Var root = t.sum_all(t.clamp(v, 0.0, 1.0));
  t.backward(root);
  Mat g = t.grad(v);
  CHECK(g(0, 0) == 0.0);
  CHECK(g(0, 1) == 1.0);
  CHECK(g(0, 2) == 0.0);
  Mat val = t.val(t.clamp(v, 0.0, 1.0));
  CHECK(val(0, 0) == 0.0);
  CHECK(val(0, 1) == 0.25);
  CHECK(val(0, 2) == 1.0);
}

TEST_CASE("minimum routes tie gradients to the first argument") {
  Mat x(1, 1), y(1, 1);
  x << 0.5;
  y << 0.5;
  Tape t;
  Var a = t.leaf(x), b = t.leaf(y);
  t.backward(t.sum_all(t.minimum(a, b)));
  CHECK(t.grad(a)(0, 0) == 1.0);
  CHECK(t.grad(b)(0, 0) == 0.0);
}

TEST_CASE("gradients accumulate across reuse of a node") {
  Mat x(1, 1);
  x << 0.7;
  Tape t;
  Var a = t.leaf(x);
  Var root = t.add(t.scale(a, 2.0), t.hadamard(a, a));
  t.backward(t.sum_all(root));
  CHECK(t.grad(a)(0, 0) == doctest::Approx(2.0 + 2 * 0.7));
}

TEST_CASE("softmax_causal_rows masks strictly above the diagonal") {
  std::mt19937_64 rng(3);
  Mat x = random_mat(rng, 5, 5);
  Mat s = ad::kernels::softmax_causal_rows(x);
  for (int i = 0; i < 5; ++i) {
    CHECK(s.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
    for (int j = i + 1; j < 5; ++j) CHECK(s(i, j) == 0.0);
  }
}

TEST_CASE("backward rejects non-scalar and foreign roots") {
  Tape t;
  Var m = t.leaf(Mat::Ones(2, 2));
  CHECK_THROWS_AS(t.backward(m), InputError);
  Tape other;
  Var foreign = other.leaf(Mat::Ones(1, 1));
  CHECK_THROWS_AS(t.val(foreign), InputError);
  CHECK_THROWS_AS(t.backward(Var{}), InputError);
}
