#pragma once

#include <functional>
#include <memory>

#include "cape/nn/layers.hpp"

namespace cape::nn {

struct EncoderConfig {
  int n_blocks = 4;
  int stem_kernel = 17;
  int block_kernel = 15;
  std::vector<int> widths = {16, 32, 64, 128}; // one per block; stem emits widths[0]
  int stem_stride = 1;
  int block_stride = 4;
  int in_leads = 8;
  int embedding_dim = 256;
  std::vector<int> projection = {256, 128};
  double bn_momentum = 0.9;
  double dropout = 0.0; // projection hidden layer; off at desk scale

  static EncoderConfig desk();
  static EncoderConfig paper_scale(); // widths [64,128,196,256]

  void validate() const;
  /// Canonical field dump; its FNV digest guards checkpoints.
  std::string digest_string() const;
  uint64_t digest() const;
};

/// Residual block: conv-norm-relu-conv-norm, skip (1x1 conv + norm on
/// channel/stride change), relu after the sum.
template <class S>
class ResidualBlock {
public:
  ResidualBlock(const std::string& name, int c_in, int c_out, int kernel, int stride, double bn_momentum);
  void init(Rng& rng);
  void forward(const Batch<S>& x, Batch<S>& y, bool training);
  void backward(const Batch<S>& dy, Batch<S>& dx);
  std::vector<Param<S>*> params();
  void visit_buffers(const std::function<void(const std::string&, Mat<S>&)>& fn);
  uint64_t pattern_hash() const;

private:
  bool projected_;
  Conv1d<S> conv1_;
  BatchNorm1d<S> bn1_;
  ReLU<S> relu1_;
  Conv1d<S> conv2_;
  BatchNorm1d<S> bn2_;
  std::unique_ptr<Conv1d<S>> skip_conv_;
  std::unique_ptr<BatchNorm1d<S>> skip_bn_;
  ReLU<S> relu_out_;
  // activations
  Batch<S> a1_, h1_, r1_, a2_, h2_, sa_, sh_, sum_;
  const Batch<S>* x_ = nullptr;
  // backward scratch
  Batch<S> d_sum_, d_a2_, d_r1_, d_h1_, d_a1_, d_main_, d_sh_, d_sa_, d_skip_;
};

/// Residual ECG encoder plus the contrastive projection head. Embeddings
/// (pre-projection) are the downstream features.
template <class S>
class Encoder {
public:
  Encoder(const EncoderConfig& cfg, uint64_t seed);

  /// [embedding_dim x B]; deterministic given (params, batch, mode).
  const Mat<S>& forward_embed(const Batch<S>& x, bool training);
  /// Projection of the embeddings from the last forward_embed call.
  const Mat<S>& forward_project(bool training, Rng* dropout_rng = nullptr);

  /// Backprop from projection gradients through the whole network.
  void backward_project(const Mat<S>& d_proj);
  /// Backprop from embedding gradients (projection head untouched).
  void backward_embed(const Mat<S>& d_emb);

  std::vector<Param<S>*> params();
  void zero_grads();
  /// Params plus running statistics, in a stable order, for checkpoints.
  void visit_state(const std::function<void(const std::string&, Mat<S>&)>& fn);
  uint64_t pattern_hash() const;
  const EncoderConfig& config() const { return cfg_; }

private:
  EncoderConfig cfg_;
  Conv1d<S> stem_;
  BatchNorm1d<S> stem_bn_;
  ReLU<S> stem_relu_;
  std::vector<ResidualBlock<S>> blocks_;
  GlobalAvgPool<S> gap_;
  Linear<S> fc_;
  Linear<S> proj1_;
  MatReLU<S> proj_relu_;
  Dropout<S> proj_drop_;
  Linear<S> proj2_;
  // activations
  Batch<S> stem_a_, stem_h_, stem_r_;
  std::vector<Batch<S>> block_out_;
  Mat<S> pooled_, emb_, p1_, p1r_, p1d_, proj_;
  // backward scratch
  Mat<S> d_emb_, d_pooled_, d_p1_, d_p1r_, d_p1d_;
  Batch<S> d_batch_a_, d_batch_b_;
};

} // namespace cape::nn
