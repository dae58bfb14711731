#pragma once

#include <Eigen/Core>
#include <cmath>
#include <string>
#include <vector>

#include "cape/common.hpp"
#include "cape/rng.hpp"

namespace cape::nn {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>; // col-major

template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

/// A minibatch of per-sample feature maps, each [channels x time].
template <class S>
using Batch = std::vector<Mat<S>>;

/// Trainable tensor with its gradient accumulator.
template <class S>
struct Param {
  std::string name;
  Mat<S> value;
  Mat<S> grad;

  void resize(Eigen::Index rows, Eigen::Index cols) {
    value.setZero(rows, cols);
    grad.setZero(rows, cols);
  }
  Eigen::Index size() const { return value.size(); }
};

template <class S>
void init_fan_in_uniform(Mat<S>& w, int fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (Eigen::Index j = 0; j < w.cols(); ++j)
    for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = static_cast<S>(rng.uniform(-bound, bound));
}

template <class S>
void check_finite(const Mat<S>& m, const std::string& what) {
  if (!m.allFinite()) fail("non-finite: " + what);
}

/// Fixed chunk count for batch reductions; results are independent of the
/// worker count because partials are always combined in chunk order.
inline constexpr size_t kReduceChunks = 16;

inline size_t reduce_chunk_size(size_t n) { return n == 0 ? 1 : (n + kReduceChunks - 1) / kReduceChunks; }

} // namespace cape::nn
