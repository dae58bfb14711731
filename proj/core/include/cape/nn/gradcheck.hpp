#pragma once

#include <functional>

#include "cape/nn/tensor.hpp"

namespace cape::nn {

struct GradCheckReport {
  double max_rel_err = 0.0;
  size_t checked = 0;
  size_t excluded_kink = 0;
};

/// Central-difference check of previously computed analytic gradients.
///
/// loss_fn must re-run the forward pass with the parameters as they are
/// and return the scalar loss; pattern_fn (optional) returns a hash of
/// the rectifier activation pattern of that forward. Elements whose
/// perturbation flips the pattern are excluded as kink-adjacent.
template <class S>
GradCheckReport grad_check(const std::function<S()>& loss_fn,
                           const std::function<uint64_t()>& pattern_fn,
                           const std::vector<Param<S>*>& params, S eps) {
  require(eps > S(0), "invalid-eps: eps must be positive");

  GradCheckReport report;
  (void)loss_fn(); // establish the nominal activation pattern
  const uint64_t nominal = pattern_fn ? pattern_fn() : 0;

  for (Param<S>* p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      S& theta = p->value.data()[i];
      const S saved = theta;

      theta = saved + eps;
      const S f_plus = loss_fn();
      const uint64_t pat_plus = pattern_fn ? pattern_fn() : 0;
      theta = saved - eps;
      const S f_minus = loss_fn();
      const uint64_t pat_minus = pattern_fn ? pattern_fn() : 0;
      theta = saved;

      if (pat_plus != nominal || pat_minus != nominal) {
        ++report.excluded_kink;
        continue;
      }

      const double numeric = static_cast<double>(f_plus - f_minus) / (2.0 * static_cast<double>(eps));
      const double analytic = static_cast<double>(p->grad.data()[i]);
      ++report.checked;
      const double scale = std::max(std::abs(numeric), std::abs(analytic));
      if (scale < 1e-7) continue; // both effectively zero
      report.max_rel_err = std::max(report.max_rel_err, std::abs(numeric - analytic) / scale);
    }
  }
  // restore the nominal forward state
  (void)loss_fn();
  return report;
}

} // namespace cape::nn
