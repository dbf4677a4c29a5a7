#pragma once

#include <Eigen/Dense>
#include <functional>
#include <utility>
#include <vector>

#include "gridvlm/common.hpp"

namespace gridvlm::ad {

using Mat = Eigen::MatrixXd;

// Shared forward kernels. The tape and the plain (gradient-free) engine both
// call these, so the two paths produce bit-identical values.
namespace kernels {
Mat softmax_causal_rows(const Mat& x);
Mat log_softmax_rows(const Mat& x);
Mat rmsnorm_rows(const Mat& x, const Mat& gain, double eps);
Mat gelu(const Mat& x);
}  // namespace kernels

struct Var {
  int id = -1;
  const void* tape = nullptr;  // identity of the recording tape
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape over dense matrices. Nodes are recorded in creation
// order; backward() replays them in reverse. Gradients accumulate in
// deterministic (recording) order.
class Tape {
 public:
  using BackFn = std::function<void(Tape&, const Mat&)>;

  Var leaf(Mat value);
  Var constant(Mat value) { return leaf(std::move(value)); }

  const Mat& val(Var v) const { return nodes_[static_cast<size_t>(check(v))].value; }
  // Zero matrix if the node never received a gradient.
  Mat grad(Var v) const;

  // root must be 1x1 and finite.
  void backward(Var root);

  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var hadamard(Var a, Var b);
  Var scale(Var a, double c);
  Var add_scalar(Var a, double c);
  Var gather_rows(Var a, std::vector<int> rows);
  Var concat_rows(const std::vector<Var>& parts);
  Var concat_cols(const std::vector<Var>& parts);
  Var slice_rows(Var a, int r0, int n);
  Var slice_cols(Var a, int c0, int n);
  Var softmax_causal_rows(Var a);
  Var rmsnorm_rows(Var x, Var gain, double eps);
  Var gelu(Var a);
  Var log_softmax_rows(Var a);
  // Picks entries (row, col) into a 1 x cells.size() row vector.
  Var gather_coeffs(Var a, std::vector<std::pair<int, int>> cells);
  Var sum_all(Var a);
  Var mean_all(Var a);
  Var exp(Var a);
  Var log(Var a);
  // Gradient passes only strictly inside (lo, hi).
  Var clamp(Var a, double lo, double hi);
  // Elementwise min; ties route the gradient to a.
  Var minimum(Var a, Var b);

  size_t size() const { return nodes_.size(); }

  // Internal accessors used by backward closures.
  const Mat& value_of(int id) const;
  Mat& grad_ref(int id);

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool has_grad = false;
    BackFn back;
  };

  int check(Var v) const {
    if (!v.valid() || v.tape != this || v.id >= static_cast<int>(nodes_.size()))
      throw InputError("variable does not belong to this tape");
    return v.id;
  }
  Var push(Mat value, BackFn back);

  std::vector<Node> nodes_;
};

}  // namespace gridvlm::ad
