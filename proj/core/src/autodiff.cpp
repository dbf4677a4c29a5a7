#include "gridvlm/autodiff.hpp"

#include <cmath>

namespace gridvlm::ad {

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

namespace kernels {

Mat softmax_causal_rows(const Mat& x) {
  if (x.rows() != x.cols()) throw InputError("causal softmax expects a square matrix");
  Mat out = Mat::Zero(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    auto seg = x.row(i).head(i + 1);
    double m = seg.maxCoeff();
    Eigen::RowVectorXd e = (seg.array() - m).exp();
    out.row(i).head(i + 1) = e / e.sum();
  }
  return out;
}

Mat log_softmax_rows(const Mat& x) {
  Mat out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double m = x.row(i).maxCoeff();
    double lse = m + std::log((x.row(i).array() - m).exp().sum());
    out.row(i) = x.row(i).array() - lse;
  }
  return out;
}

Mat rmsnorm_rows(const Mat& x, const Mat& gain, double eps) {
  if (gain.rows() != 1 || gain.cols() != x.cols()) throw InputError("rmsnorm gain must be 1 x d");
  Mat out(x.rows(), x.cols());
  double d = static_cast<double>(x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double r = std::sqrt(x.row(i).squaredNorm() / d + eps);
    out.row(i) = (x.row(i) / r).cwiseProduct(gain.row(0));
  }
  return out;
}

Mat gelu(const Mat& x) {
  return (0.5 * x.array() * (1.0 + (kGeluC * (x.array() + kGeluA * x.array().cube())).tanh()))
      .matrix();
}

}  // namespace kernels

Var Tape::push(Mat value, BackFn back) {
  Node n;
  n.value = std::move(value);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1, this};
}

Var Tape::leaf(Mat value) { return push(std::move(value), nullptr); }

Mat Tape::grad(Var v) const {
  const Node& n = nodes_[static_cast<size_t>(check(v))];
  if (!n.has_grad) return Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Mat& Tape::grad_ref(int id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (!n.has_grad) {
    n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(Var root) {
  int r = check(root);
  const Mat& v = nodes_[static_cast<size_t>(r)].value;
  if (v.rows() != 1 || v.cols() != 1) throw InputError("backward root must be 1x1");
  if (!std::isfinite(v(0, 0))) throw NumericError("backward root is not finite");
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad.resize(0, 0);
  }
  grad_ref(r)(0, 0) = 1.0;
  for (int i = r; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.has_grad && n.back) n.back(*this, n.grad);
  }
}

const Mat& Tape::value_of(int id) const { return nodes_[static_cast<size_t>(id)].value; }

Var Tape::matmul(Var a, Var b) {
  int ia = check(a), ib = check(b);
  Mat out = value_of(ia) * value_of(ib);
  return push(std::move(out), [ia, ib](Tape& t, const Mat& g) {
    t.grad_ref(ia) += g * t.value_of(ib).transpose();
    t.grad_ref(ib) += t.value_of(ia).transpose() * g;
  });
}

Var Tape::transpose(Var a) {
  int ia = check(a);
  return push(value_of(ia).transpose(),
              [ia](Tape& t, const Mat& g) { t.grad_ref(ia) += g.transpose(); });
}

Var Tape::add(Var a, Var b) {
  int ia = check(a), ib = check(b);
  return push(value_of(ia) + value_of(ib), [ia, ib](Tape& t, const Mat& g) {
    t.grad_ref(ia) += g;
    t.grad_ref(ib) += g;
  });
}

Var Tape::sub(Var a, Var b) {
  int ia = check(a), ib = check(b);
  return push(value_of(ia) - value_of(ib), [ia, ib](Tape& t, const Mat& g) {
    t.grad_ref(ia) += g;
    t.grad_ref(ib) -= g;
  });
}

Var Tape::hadamard(Var a, Var b) {
  int ia = check(a), ib = check(b);
  return push(value_of(ia).cwiseProduct(value_of(ib)), [ia, ib](Tape& t, const Mat& g) {
    t.grad_ref(ia) += g.cwiseProduct(t.value_of(ib));
    t.grad_ref(ib) += g.cwiseProduct(t.value_of(ia));
  });
}

Var Tape::scale(Var a, double c) {
  int ia = check(a);
  return push(value_of(ia) * c, [ia, c](Tape& t, const Mat& g) { t.grad_ref(ia) += c * g; });
}

Var Tape::add_scalar(Var a, double c) {
  int ia = check(a);
  return push((value_of(ia).array() + c).matrix(),
              [ia](Tape& t, const Mat& g) { t.grad_ref(ia) += g; });
}

Var Tape::gather_rows(Var a, std::vector<int> rows) {
  int ia = check(a);
  const Mat& v = value_of(ia);
  Mat out(static_cast<Eigen::Index>(rows.size()), v.cols());
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= v.rows()) throw InputError("gather_rows index out of range");
    out.row(static_cast<Eigen::Index>(i)) = v.row(rows[i]);
  }
  return push(std::move(out), [ia, rows = std::move(rows)](Tape& t, const Mat& g) {
    Mat& ga = t.grad_ref(ia);
    for (size_t i = 0; i < rows.size(); ++i)
      ga.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw InputError("concat_rows needs at least one part");
  std::vector<int> ids;
  Eigen::Index rows = 0;
  Eigen::Index cols = value_of(check(parts[0])).cols();
  for (Var p : parts) {
    int ip = check(p);
    if (value_of(ip).cols() != cols) throw InputError("concat_rows column mismatch");
    rows += value_of(ip).rows();
    ids.push_back(ip);
  }
  Mat out(rows, cols);
  Eigen::Index r = 0;
  for (int ip : ids) {
    out.middleRows(r, value_of(ip).rows()) = value_of(ip);
    r += value_of(ip).rows();
  }
  return push(std::move(out), [ids](Tape& t, const Mat& g) {
    Eigen::Index r = 0;
    for (int ip : ids) {
      Eigen::Index n = t.value_of(ip).rows();
      t.grad_ref(ip) += g.middleRows(r, n);
      r += n;
    }
  });
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw InputError("concat_cols needs at least one part");
  std::vector<int> ids;
  Eigen::Index cols = 0;
  Eigen::Index rows = value_of(check(parts[0])).rows();
  for (Var p : parts) {
    int ip = check(p);
    if (value_of(ip).rows() != rows) throw InputError("concat_cols row mismatch");
    cols += value_of(ip).cols();
    ids.push_back(ip);
  }
  Mat out(rows, cols);
  Eigen::Index c = 0;
  for (int ip : ids) {
    out.middleCols(c, value_of(ip).cols()) = value_of(ip);
    c += value_of(ip).cols();
  }
  return push(std::move(out), [ids](Tape& t, const Mat& g) {
    Eigen::Index c = 0;
    for (int ip : ids) {
      Eigen::Index n = t.value_of(ip).cols();
      t.grad_ref(ip) += g.middleCols(c, n);
      c += n;
    }
  });
}

Var Tape::slice_rows(Var a, int r0, int n) {
  int ia = check(a);
  if (r0 < 0 || n < 0 || r0 + n > value_of(ia).rows()) throw InputError("slice_rows out of range");
  return push(value_of(ia).middleRows(r0, n), [ia, r0, n](Tape& t, const Mat& g) {
    t.grad_ref(ia).middleRows(r0, n) += g;
  });
}

Var Tape::slice_cols(Var a, int c0, int n) {
  int ia = check(a);
  if (c0 < 0 || n < 0 || c0 + n > value_of(ia).cols()) throw InputError("slice_cols out of range");
  return push(value_of(ia).middleCols(c0, n), [ia, c0, n](Tape& t, const Mat& g) {
    t.grad_ref(ia).middleCols(c0, n) += g;
  });
}

Var Tape::softmax_causal_rows(Var a) {
  int ia = check(a);
  Mat out = kernels::softmax_causal_rows(value_of(ia));
  Var v = push(out, nullptr);
  int self = v.id;
  nodes_[static_cast<size_t>(self)].back = [ia, self](Tape& t, const Mat& g) {
    const Mat& p = t.value_of(self);
    Mat& ga = t.grad_ref(ia);
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      auto pi = p.row(i).head(i + 1);
      auto gi = g.row(i).head(i + 1);
      double dot = pi.cwiseProduct(gi).sum();
      ga.row(i).head(i + 1) += pi.cwiseProduct((gi.array() - dot).matrix());
    }
  };
  return v;
}

Var Tape::rmsnorm_rows(Var x, Var gain, double eps) {
  int ix = check(x), ig = check(gain);
  Mat out = kernels::rmsnorm_rows(value_of(ix), value_of(ig), eps);
  return push(std::move(out), [ix, ig, eps](Tape& t, const Mat& g) {
    const Mat& xv = t.value_of(ix);
    const Mat& gn = t.value_of(ig);
    double d = static_cast<double>(xv.cols());
    Mat& gx = t.grad_ref(ix);
    Mat& gg = t.grad_ref(ig);
    for (Eigen::Index i = 0; i < xv.rows(); ++i) {
      double r = std::sqrt(xv.row(i).squaredNorm() / d + eps);
      Eigen::RowVectorXd gg_row = g.row(i).cwiseProduct(gn.row(0));
      double dot = gg_row.cwiseProduct(xv.row(i)).sum();
      gx.row(i) += gg_row / r - xv.row(i) * (dot / (d * r * r * r));
      gg.row(0) += g.row(i).cwiseProduct(xv.row(i)) / r;
    }
  });
}

Var Tape::gelu(Var a) {
  int ia = check(a);
  return push(kernels::gelu(value_of(ia)), [ia](Tape& t, const Mat& g) {
    const auto x = t.value_of(ia).array();
    auto th = (kGeluC * (x + kGeluA * x.cube())).tanh();
    auto du = kGeluC * (1.0 + 3.0 * kGeluA * x.square());
    auto dy = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th.square()) * du;
    t.grad_ref(ia) += (g.array() * dy).matrix();
  });
}

Var Tape::log_softmax_rows(Var a) {
  int ia = check(a);
  Mat out = kernels::log_softmax_rows(value_of(ia));
  Var v = push(out, nullptr);
  int self = v.id;
  nodes_[static_cast<size_t>(self)].back = [ia, self](Tape& t, const Mat& g) {
    const Mat& lp = t.value_of(self);
    Mat& ga = t.grad_ref(ia);
    for (Eigen::Index i = 0; i < lp.rows(); ++i) {
      double gsum = g.row(i).sum();
      ga.row(i) += g.row(i) - (lp.row(i).array().exp() * gsum).matrix();
    }
  };
  return v;
}

Var Tape::gather_coeffs(Var a, std::vector<std::pair<int, int>> cells) {
  int ia = check(a);
  const Mat& v = value_of(ia);
  Mat out(1, static_cast<Eigen::Index>(cells.size()));
  for (size_t i = 0; i < cells.size(); ++i) {
    auto [r, c] = cells[i];
    if (r < 0 || r >= v.rows() || c < 0 || c >= v.cols())
      throw InputError("gather_coeffs index out of range");
    out(0, static_cast<Eigen::Index>(i)) = v(r, c);
  }
  return push(std::move(out), [ia, cells = std::move(cells)](Tape& t, const Mat& g) {
    Mat& ga = t.grad_ref(ia);
    for (size_t i = 0; i < cells.size(); ++i)
      ga(cells[i].first, cells[i].second) += g(0, static_cast<Eigen::Index>(i));
  });
}

Var Tape::sum_all(Var a) {
  int ia = check(a);
  Mat out(1, 1);
  out(0, 0) = value_of(ia).sum();
  return push(std::move(out), [ia](Tape& t, const Mat& g) {
    t.grad_ref(ia).array() += g(0, 0);
  });
}

Var Tape::mean_all(Var a) {
  int ia = check(a);
  Mat out(1, 1);
  out(0, 0) = value_of(ia).mean();
  double inv = 1.0 / static_cast<double>(value_of(ia).size());
  return push(std::move(out), [ia, inv](Tape& t, const Mat& g) {
    t.grad_ref(ia).array() += g(0, 0) * inv;
  });
}

Var Tape::exp(Var a) {
  int ia = check(a);
  Mat out = value_of(ia).array().exp().matrix();
  Var v = push(out, nullptr);
  int self = v.id;
  nodes_[static_cast<size_t>(self)].back = [ia, self](Tape& t, const Mat& g) {
    t.grad_ref(ia) += g.cwiseProduct(t.value_of(self));
  };
  return v;
}

Var Tape::log(Var a) {
  int ia = check(a);
  return push(value_of(ia).array().log().matrix(), [ia](Tape& t, const Mat& g) {
    t.grad_ref(ia) += g.cwiseQuotient(t.value_of(ia));
  });
}

Var Tape::clamp(Var a, double lo, double hi) {
  int ia = check(a);
  Mat out = value_of(ia).array().max(lo).min(hi).matrix();
  return push(std::move(out), [ia, lo, hi](Tape& t, const Mat& g) {
    const Mat& v = t.value_of(ia);
    Mat mask = ((v.array() > lo) && (v.array() < hi)).cast<double>().matrix();
    t.grad_ref(ia) += g.cwiseProduct(mask);
  });
}

Var Tape::minimum(Var a, Var b) {
  int ia = check(a), ib = check(b);
  Mat out = value_of(ia).cwiseMin(value_of(ib));
  return push(std::move(out), [ia, ib](Tape& t, const Mat& g) {
    Mat pick_a = (t.value_of(ia).array() <= t.value_of(ib).array()).cast<double>().matrix();
    t.grad_ref(ia) += g.cwiseProduct(pick_a);
    t.grad_ref(ib) += g.cwiseProduct((1.0 - pick_a.array()).matrix());
  });
}

}  // namespace gridvlm::ad
