#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "gridvlm/common.hpp"
#include "gridvlm/model.hpp"

namespace gridvlm::optim {

// Adam with bias correction. Deterministic: plain elementwise updates in
// parameter order. State lives with the trainer, not the checkpoint.
struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void step(std::vector<std::pair<std::string, vlm::Mat>>& params,
            const std::vector<std::pair<std::string, vlm::Mat>>& grads) {
    if (grads.size() != params.size()) throw InputError("gradient/parameter count mismatch");
    if (m_.empty()) {
      m_.reserve(params.size());
      v_.reserve(params.size());
      for (const auto& [name, p] : params) {
        m_.push_back(vlm::Mat::Zero(p.rows(), p.cols()));
        v_.push_back(vlm::Mat::Zero(p.rows(), p.cols()));
      }
    }
    ++t_;
    double c1 = 1.0 - std::pow(beta1, t_);
    double c2 = 1.0 - std::pow(beta2, t_);
    for (size_t i = 0; i < params.size(); ++i) {
      if (grads[i].first != params[i].first) throw InputError("gradient order mismatch");
      const vlm::Mat& g = grads[i].second;
      m_[i] = beta1 * m_[i] + (1.0 - beta1) * g;
      v_[i] = beta2 * v_[i] + (1.0 - beta2) * g.cwiseProduct(g);
      vlm::Mat denom = (v_[i] / c2).cwiseSqrt();
      denom.array() += eps;
      params[i].second -= lr * (m_[i] / c1).cwiseQuotient(denom);
    }
  }

 private:
  std::vector<vlm::Mat> m_, v_;
  int t_ = 0;
};

}  // namespace gridvlm::optim
