#include "cape/nn/layers.hpp"

#include <cstring>

#include "cape/digest.hpp"
#include "cape/parallel.hpp"

namespace cape::nn {

// ---------------------------------------------------------------------------
// Conv1d

template <class S>
Conv1d<S>::Conv1d(std::string name, int c_in, int c_out, int kernel, int stride)
    : c_in_(c_in), c_out_(c_out), k_(kernel), stride_(stride), pad_((kernel - 1) / 2) {
  require(kernel >= 1 && kernel % 2 == 1, "conv: kernel must be odd and positive");
  require(stride >= 1, "conv: stride must be positive");
  w_.name = name + ".w";
  b_.name = name + ".b";
  w_.resize(static_cast<Eigen::Index>(k_) * c_in_, c_out_);
  b_.resize(c_out_, 1);
}

template <class S>
void Conv1d<S>::init(Rng& rng) {
  init_fan_in_uniform(w_.value, k_ * c_in_, rng);
  b_.value.setZero();
}

// Column j of cols holds the flattened input window for output step j;
// interior windows are a single contiguous copy.
template <class S>
void Conv1d<S>::im2col(const Mat<S>& x, Mat<S>& cols) const {
  const int t_in = static_cast<int>(x.cols());
  const int n_out = t_out(t_in);
  cols.resize(static_cast<Eigen::Index>(k_) * c_in_, n_out);
  for (int j = 0; j < n_out; ++j) {
    const int start = j * stride_ - pad_;
    const int lo = std::max(0, -start);
    const int hi = std::min(k_, t_in - start);
    S* dst = cols.data() + static_cast<size_t>(j) * k_ * c_in_;
    if (lo > 0) std::memset(dst, 0, static_cast<size_t>(lo) * c_in_ * sizeof(S));
    if (hi < k_) std::memset(dst + static_cast<size_t>(hi) * c_in_, 0, static_cast<size_t>(k_ - hi) * c_in_ * sizeof(S));
    if (hi > lo)
      std::memcpy(dst + static_cast<size_t>(lo) * c_in_, x.data() + static_cast<size_t>(start + lo) * c_in_,
                  static_cast<size_t>(hi - lo) * c_in_ * sizeof(S));
  }
}

template <class S>
void Conv1d<S>::forward(const Batch<S>& x, Batch<S>& y) {
  x_ = &x;
  y.resize(x.size());
  parallel_for(x.size(), [&](size_t i) {
    require(static_cast<int>(x[i].rows()) == c_in_, "conv: channel mismatch in " + w_.name);
    Mat<S> cols;
    im2col(x[i], cols);
    y[i].noalias() = w_.value.transpose() * cols;
    y[i].colwise() += b_.value.col(0);
  });
}

template <class S>
void Conv1d<S>::backward(const Batch<S>& dy, Batch<S>& dx) {
  require(x_ != nullptr, "conv: backward before forward");
  const Batch<S>& x = *x_;
  const size_t n = x.size();
  dx.resize(n);

  const size_t chunk = reduce_chunk_size(n);
  const size_t nchunks = chunk_count(n, chunk);
  std::vector<Mat<S>> dw_part(nchunks), db_part(nchunks);

  parallel_chunks(n, chunk, [&](size_t begin, size_t end, size_t ci) {
    Mat<S>& dw = dw_part[ci];
    Mat<S>& db = db_part[ci];
    dw.setZero(w_.value.rows(), w_.value.cols());
    db.setZero(c_out_, 1);
    Mat<S> cols, dcols;
    for (size_t i = begin; i < end; ++i) {
      const int t_in = static_cast<int>(x[i].cols());
      im2col(x[i], cols);
      dw.noalias() += cols * dy[i].transpose();
      db.col(0) += dy[i].rowwise().sum();

      dcols.noalias() = w_.value * dy[i];
      Mat<S>& dxi = dx[i];
      dxi.setZero(c_in_, t_in);
      const int n_out = static_cast<int>(dy[i].cols());
      for (int j = 0; j < n_out; ++j) {
        const int start = j * stride_ - pad_;
        const int lo = std::max(0, -start);
        const int hi = std::min(k_, t_in - start);
        if (hi <= lo) continue;
        Eigen::Map<Mat<S>>(dxi.data() + static_cast<size_t>(start + lo) * c_in_, c_in_, hi - lo) +=
            Eigen::Map<const Mat<S>>(dcols.data() + static_cast<size_t>(j) * k_ * c_in_ +
                                         static_cast<size_t>(lo) * c_in_,
                                     c_in_, hi - lo);
      }
    }
  });

  for (size_t ci = 0; ci < nchunks; ++ci) {
    w_.grad += dw_part[ci];
    b_.grad += db_part[ci];
  }
}

// ---------------------------------------------------------------------------
// BatchNorm1d

template <class S>
BatchNorm1d<S>::BatchNorm1d(std::string name, int channels, double momentum, double eps)
    : name_(std::move(name)), channels_(channels), momentum_(momentum), eps_(eps) {
  gamma_.name = name_ + ".gamma";
  beta_.name = name_ + ".beta";
  gamma_.resize(channels, 1);
  beta_.resize(channels, 1);
  gamma_.value.setOnes();
  running_mean_ = Mat<S>::Zero(channels, 1);
  running_var_ = Mat<S>::Ones(channels, 1);
}

template <class S>
void BatchNorm1d<S>::forward(const Batch<S>& x, Batch<S>& y, bool training) {
  const size_t n = x.size();
  require(n > 0, "batchnorm: empty batch");
  y.resize(n);

  if (!training) {
    Vec<S> scale = ((running_var_.col(0).array() + static_cast<S>(eps_)).rsqrt() *
                    gamma_.value.col(0).array())
                       .matrix();
    parallel_for(n, [&](size_t i) {
      y[i] = ((x[i].colwise() - running_mean_.col(0)).array().colwise() * scale.array()).matrix();
      y[i].colwise() += beta_.value.col(0);
    });
    trained_forward_ = false;
    return;
  }

  // Batch statistics over (samples, time), chunk-deterministic.
  const size_t chunk = reduce_chunk_size(n);
  const size_t nchunks = chunk_count(n, chunk);
  std::vector<Vec<S>> sum_part(nchunks), sq_part(nchunks);
  std::vector<size_t> cnt_part(nchunks, 0);
  parallel_chunks(n, chunk, [&](size_t begin, size_t end, size_t ci) {
    Vec<S> s = Vec<S>::Zero(channels_), q = Vec<S>::Zero(channels_);
    size_t cnt = 0;
    for (size_t i = begin; i < end; ++i) {
      s += x[i].rowwise().sum();
      q += x[i].array().square().matrix().rowwise().sum();
      cnt += static_cast<size_t>(x[i].cols());
    }
    sum_part[ci] = std::move(s);
    sq_part[ci] = std::move(q);
    cnt_part[ci] = cnt;
  });
  Vec<S> total_sum = Vec<S>::Zero(channels_), total_sq = Vec<S>::Zero(channels_);
  size_t count = 0;
  for (size_t ci = 0; ci < nchunks; ++ci) {
    total_sum += sum_part[ci];
    total_sq += sq_part[ci];
    count += cnt_part[ci];
  }
  require(count > 0, "batchnorm: empty feature maps");

  const S inv_n = static_cast<S>(1.0 / static_cast<double>(count));
  Vec<S> mean = total_sum * inv_n;
  Vec<S> var = (total_sq * inv_n - mean.array().square().matrix()).cwiseMax(S(0));
  invstd_ = (var.array() + static_cast<S>(eps_)).rsqrt().matrix();
  norm_count_ = count;

  xhat_.resize(n);
  parallel_for(n, [&](size_t i) {
    xhat_[i] = ((x[i].colwise() - mean).array().colwise() * invstd_.array()).matrix();
    y[i] = (xhat_[i].array().colwise() * gamma_.value.col(0).array()).matrix();
    y[i].colwise() += beta_.value.col(0);
  });

  running_mean_.col(0) = static_cast<S>(momentum_) * running_mean_.col(0) + static_cast<S>(1.0 - momentum_) * mean;
  running_var_.col(0) = static_cast<S>(momentum_) * running_var_.col(0) + static_cast<S>(1.0 - momentum_) * var;
  trained_forward_ = true;
}

template <class S>
void BatchNorm1d<S>::backward(const Batch<S>& dy, Batch<S>& dx) {
  require(trained_forward_, "batchnorm: backward requires a training-mode forward");
  const size_t n = dy.size();
  dx.resize(n);

  const size_t chunk = reduce_chunk_size(n);
  const size_t nchunks = chunk_count(n, chunk);
  std::vector<Vec<S>> dg_part(nchunks), db_part(nchunks);
  parallel_chunks(n, chunk, [&](size_t begin, size_t end, size_t ci) {
    Vec<S> dg = Vec<S>::Zero(channels_), db = Vec<S>::Zero(channels_);
    for (size_t i = begin; i < end; ++i) {
      dg += (dy[i].array() * xhat_[i].array()).matrix().rowwise().sum();
      db += dy[i].rowwise().sum();
    }
    dg_part[ci] = std::move(dg);
    db_part[ci] = std::move(db);
  });
  Vec<S> sum_dy_xhat = Vec<S>::Zero(channels_), sum_dy = Vec<S>::Zero(channels_);
  for (size_t ci = 0; ci < nchunks; ++ci) {
    sum_dy_xhat += dg_part[ci];
    sum_dy += db_part[ci];
  }
  gamma_.grad.col(0) += sum_dy_xhat;
  beta_.grad.col(0) += sum_dy;

  // dx = (gamma * invstd / N) * (N dy - xhat * sum(dy xhat) - sum(dy))
  const S inv_n = static_cast<S>(1.0 / static_cast<double>(norm_count_));
  Vec<S> coef = (gamma_.value.col(0).array() * invstd_.array() * inv_n).matrix();
  const S count = static_cast<S>(static_cast<double>(norm_count_));
  parallel_for(n, [&](size_t i) {
    Mat<S> tmp = dy[i] * count;
    tmp -= (xhat_[i].array().colwise() * sum_dy_xhat.array()).matrix();
    tmp.colwise() -= sum_dy;
    dx[i] = (tmp.array().colwise() * coef.array()).matrix();
  });
}

// ---------------------------------------------------------------------------
// ReLU

template <class S>
void ReLU<S>::forward(const Batch<S>& x, Batch<S>& y) {
  y.resize(x.size());
  parallel_for(x.size(), [&](size_t i) { y[i] = x[i].cwiseMax(S(0)); });
  y_ = &y;
}

template <class S>
void ReLU<S>::backward(const Batch<S>& dy, Batch<S>& dx) {
  require(y_ != nullptr, "relu: backward before forward");
  const Batch<S>& y = *y_;
  dx.resize(dy.size());
  parallel_for(dy.size(), [&](size_t i) {
    dx[i] = ((y[i].array() > S(0)).template cast<S>() * dy[i].array()).matrix();
  });
}

template <class S>
uint64_t ReLU<S>::pattern_hash() const {
  require(y_ != nullptr, "relu: no recorded forward");
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& m : *y_)
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      h ^= (m.data()[i] > S(0)) ? 0x9eull : 0x31ull;
      h *= 0x100000001b3ull;
    }
  return h;
}

// ---------------------------------------------------------------------------
// GlobalAvgPool

template <class S>
void GlobalAvgPool<S>::forward(const Batch<S>& x, Mat<S>& y) {
  const size_t n = x.size();
  require(n > 0, "gap: empty batch");
  y.resize(x[0].rows(), static_cast<Eigen::Index>(n));
  t_in_.resize(n);
  parallel_for(n, [&](size_t i) {
    t_in_[i] = static_cast<int>(x[i].cols());
    y.col(static_cast<Eigen::Index>(i)) = x[i].rowwise().mean();
  });
}

template <class S>
void GlobalAvgPool<S>::backward(const Mat<S>& dy, Batch<S>& dx) {
  const size_t n = t_in_.size();
  dx.resize(n);
  parallel_for(n, [&](size_t i) {
    const S inv_t = static_cast<S>(1.0 / t_in_[i]);
    dx[i] = (dy.col(static_cast<Eigen::Index>(i)) * inv_t).replicate(1, t_in_[i]);
  });
}

// ---------------------------------------------------------------------------
// Linear

template <class S>
Linear<S>::Linear(std::string name, int in_dim, int out_dim) : in_dim_(in_dim), out_dim_(out_dim) {
  w_.name = name + ".w";
  b_.name = name + ".b";
  w_.resize(in_dim, out_dim);
  b_.resize(out_dim, 1);
}

template <class S>
void Linear<S>::init(Rng& rng) {
  init_fan_in_uniform(w_.value, in_dim_, rng);
  b_.value.setZero();
}

template <class S>
void Linear<S>::forward(const Mat<S>& x, Mat<S>& y) {
  require(static_cast<int>(x.rows()) == in_dim_, "linear: input dim mismatch in " + w_.name);
  x_ = &x;
  y.noalias() = w_.value.transpose() * x;
  y.colwise() += b_.value.col(0);
}

template <class S>
void Linear<S>::backward(const Mat<S>& dy, Mat<S>& dx) {
  require(x_ != nullptr, "linear: backward before forward");
  w_.grad.noalias() += (*x_) * dy.transpose();
  b_.grad.col(0) += dy.rowwise().sum();
  dx.noalias() = w_.value * dy;
}

// ---------------------------------------------------------------------------
// MatReLU / Dropout

template <class S>
void MatReLU<S>::forward(const Mat<S>& x, Mat<S>& y) {
  y = x.cwiseMax(S(0));
  y_ = &y;
}

template <class S>
void MatReLU<S>::backward(const Mat<S>& dy, Mat<S>& dx) {
  require(y_ != nullptr, "relu: backward before forward");
  dx = ((y_->array() > S(0)).template cast<S>() * dy.array()).matrix();
}

template <class S>
uint64_t MatReLU<S>::pattern_hash() const {
  require(y_ != nullptr, "relu: no recorded forward");
  uint64_t h = 0xcbf29ce484222325ull;
  for (Eigen::Index i = 0; i < y_->size(); ++i) {
    h ^= (y_->data()[i] > S(0)) ? 0x9eull : 0x31ull;
    h *= 0x100000001b3ull;
  }
  return h;
}

template <class S>
void Dropout<S>::forward(const Mat<S>& x, Mat<S>& y, bool training, Rng* rng) {
  active_ = training && p_ > 0.0;
  if (!active_) {
    y = x;
    return;
  }
  require(rng != nullptr, "dropout: rng required in training mode");
  const S keep_inv = static_cast<S>(1.0 / (1.0 - p_));
  mask_.resize(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < mask_.size(); ++i)
    mask_.data()[i] = rng->uniform() < p_ ? S(0) : keep_inv;
  y = x.cwiseProduct(mask_);
}

template <class S>
void Dropout<S>::backward(const Mat<S>& dy, Mat<S>& dx) {
  if (!active_) {
    dx = dy;
    return;
  }
  dx = dy.cwiseProduct(mask_);
}

// ---------------------------------------------------------------------------

template class Conv1d<float>;
template class Conv1d<double>;
template class BatchNorm1d<float>;
template class BatchNorm1d<double>;
template class ReLU<float>;
template class ReLU<double>;
template class GlobalAvgPool<float>;
template class GlobalAvgPool<double>;
template class Linear<float>;
template class Linear<double>;
template class MatReLU<float>;
template class MatReLU<double>;
template class Dropout<float>;
template class Dropout<double>;

} // namespace cape::nn
