#pragma once

#include <cstdint>
#include <vector>

#include "cape/nn/tensor.hpp"

namespace cape::nn {

/// Half-period cosine decay: eta0 * 0.5 * (1 + cos(pi t / T)).
double cosine_lr(int64_t t, int64_t total_steps, double eta0);

struct CosineSchedule {
  double eta0 = 0.1;
  int64_t total_steps = 1;
  double lr(int64_t t) const { return cosine_lr(t, total_steps, eta0); }
};

/// Bias-corrected Adam. Accumulators are attached per parameter tensor.
template <class S>
struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int64_t step = 0;
  std::vector<Mat<S>> m, v;

  void attach(const std::vector<Param<S>*>& params) {
    m.clear();
    v.clear();
    for (const auto* p : params) {
      m.push_back(Mat<S>::Zero(p->value.rows(), p->value.cols()));
      v.push_back(Mat<S>::Zero(p->value.rows(), p->value.cols()));
    }
    step = 0;
  }
};

/// theta <- theta - lr * m_hat / (sqrt(v_hat) + eps). Errors on
/// non-finite gradients, naming the parameter.
template <class S>
void adam_step(AdamState<S>& state, const std::vector<Param<S>*>& params, double lr);

} // namespace cape::nn
