#pragma once

#include <cstdint>
#include <span>

#include "cape/nn/tensor.hpp"

namespace cape::nn {

/// Mean squared error over a [1 x B] prediction row; writes d(loss)/d(pred).
template <class S>
S mse_loss(const Mat<S>& pred, std::span<const S> target, Mat<S>* d_pred) {
  require(pred.rows() == 1 && static_cast<size_t>(pred.cols()) == target.size(),
          "loss: prediction/target shape mismatch");
  require(!target.empty(), "loss: empty batch");
  const S inv_n = static_cast<S>(1.0 / static_cast<double>(target.size()));
  S total = 0;
  if (d_pred != nullptr) d_pred->resize(1, pred.cols());
  for (Eigen::Index i = 0; i < pred.cols(); ++i) {
    const S diff = pred(0, i) - target[static_cast<size_t>(i)];
    total += diff * diff;
    if (d_pred != nullptr) (*d_pred)(0, i) = S(2) * diff * inv_n;
  }
  return total * inv_n;
}

/// Binary cross-entropy on logits (stable form); labels in {0, 1}.
template <class S>
S bce_with_logits(const Mat<S>& logit, std::span<const uint8_t> labels, Mat<S>* d_logit) {
  require(logit.rows() == 1 && static_cast<size_t>(logit.cols()) == labels.size(),
          "loss: logit/label shape mismatch");
  require(!labels.empty(), "loss: empty batch");
  const S inv_n = static_cast<S>(1.0 / static_cast<double>(labels.size()));
  S total = 0;
  if (d_logit != nullptr) d_logit->resize(1, logit.cols());
  for (Eigen::Index i = 0; i < logit.cols(); ++i) {
    const S z = logit(0, i);
    const S y = static_cast<S>(labels[static_cast<size_t>(i)]);
    total += std::max(z, S(0)) - z * y + std::log1p(std::exp(-std::abs(z)));
    if (d_logit != nullptr) {
      const S sig = S(1) / (S(1) + std::exp(-z));
      (*d_logit)(0, i) = (sig - y) * inv_n;
    }
  }
  return total * inv_n;
}

} // namespace cape::nn
