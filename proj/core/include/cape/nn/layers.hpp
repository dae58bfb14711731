#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "cape/nn/tensor.hpp"

namespace cape::nn {

/// 1-D convolution over [channels x time] maps, zero "same" padding,
/// im2col + GEMM per sample.
template <class S>
class Conv1d {
public:
  Conv1d(std::string name, int c_in, int c_out, int kernel, int stride);
  void init(Rng& rng);

  int t_out(int t_in) const { return (t_in + 2 * pad_ - k_) / stride_ + 1; }
  void forward(const Batch<S>& x, Batch<S>& y);
  /// dx is resized/filled; weight and bias gradients accumulate.
  void backward(const Batch<S>& dy, Batch<S>& dx);
  std::vector<Param<S>*> params() { return {&w_, &b_}; }

  int c_in() const { return c_in_; }
  int c_out() const { return c_out_; }

private:
  void im2col(const Mat<S>& x, Mat<S>& cols) const;
  int c_in_, c_out_, k_, stride_, pad_;
  Param<S> w_; // [k*c_in x c_out]
  Param<S> b_; // [c_out x 1]
  const Batch<S>* x_ = nullptr;
};

/// Per-channel normalization over (batch, time) with running statistics
/// (biased variance on both paths so converged train/eval agree).
template <class S>
class BatchNorm1d {
public:
  BatchNorm1d(std::string name, int channels, double momentum = 0.9, double eps = 1e-5);

  void forward(const Batch<S>& x, Batch<S>& y, bool training);
  void backward(const Batch<S>& dy, Batch<S>& dx);
  std::vector<Param<S>*> params() { return {&gamma_, &beta_}; }
  void visit_buffers(const std::function<void(const std::string&, Mat<S>&)>& fn) {
    fn(name_ + ".running_mean", running_mean_);
    fn(name_ + ".running_var", running_var_);
  }

  const Mat<S>& running_mean() const { return running_mean_; }
  const Mat<S>& running_var() const { return running_var_; }

private:
  std::string name_;
  int channels_;
  double momentum_, eps_;
  Param<S> gamma_, beta_;
  Mat<S> running_mean_, running_var_; // [C x 1]
  // training-mode caches
  Batch<S> xhat_;
  Vec<S> invstd_;
  size_t norm_count_ = 0;
  bool trained_forward_ = false;
};

/// Rectifier; subgradient at exactly 0 is 0.
template <class S>
class ReLU {
public:
  void forward(const Batch<S>& x, Batch<S>& y);
  void backward(const Batch<S>& dy, Batch<S>& dx);
  /// FNV hash of the active-unit pattern of the last forward; used by the
  /// gradient checker to detect kink crossings.
  uint64_t pattern_hash() const;

private:
  const Batch<S>* y_ = nullptr;
};

/// Mean over time per channel: Batch -> [C x B].
template <class S>
class GlobalAvgPool {
public:
  void forward(const Batch<S>& x, Mat<S>& y);
  void backward(const Mat<S>& dy, Batch<S>& dx);

private:
  std::vector<int> t_in_;
};

/// Dense layer on column-batched features: y = W^T x + b, x is [in x B].
template <class S>
class Linear {
public:
  Linear(std::string name, int in_dim, int out_dim);
  void init(Rng& rng);
  void forward(const Mat<S>& x, Mat<S>& y);
  void backward(const Mat<S>& dy, Mat<S>& dx);
  std::vector<Param<S>*> params() { return {&w_, &b_}; }
  int in_dim() const { return in_dim_; }
  int out_dim() const { return out_dim_; }

private:
  int in_dim_, out_dim_;
  Param<S> w_; // [in x out]
  Param<S> b_; // [out x 1]
  const Mat<S>* x_ = nullptr;
};

/// Rectifier on column-batched features.
template <class S>
class MatReLU {
public:
  void forward(const Mat<S>& x, Mat<S>& y);
  void backward(const Mat<S>& dy, Mat<S>& dx);
  uint64_t pattern_hash() const;

private:
  const Mat<S>* y_ = nullptr;
};

/// Inverted dropout on column-batched features; disabled when p == 0 or
/// in evaluation mode.
template <class S>
class Dropout {
public:
  explicit Dropout(double p) : p_(p) {}
  void forward(const Mat<S>& x, Mat<S>& y, bool training, Rng* rng);
  void backward(const Mat<S>& dy, Mat<S>& dx);

private:
  double p_;
  Mat<S> mask_;
  bool active_ = false;
};

} // namespace cape::nn
