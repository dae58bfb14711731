#include "cape/nn/encoder.hpp"

#include <sstream>

#include "cape/digest.hpp"

namespace cape::nn {

EncoderConfig EncoderConfig::desk() { return EncoderConfig{}; }

EncoderConfig EncoderConfig::paper_scale() {
  EncoderConfig cfg;
  cfg.widths = {64, 128, 196, 256};
  return cfg;
}

void EncoderConfig::validate() const {
  require(n_blocks >= 1, "encoder: n_blocks must be >= 1");
  require(static_cast<int>(widths.size()) == n_blocks, "encoder: widths must have one entry per block");
  require(stem_kernel >= 1 && block_kernel >= 1, "encoder: kernels must be positive");
  require(stem_stride >= 1 && block_stride >= 1, "encoder: strides must be positive");
  require(in_leads >= 1 && embedding_dim >= 1, "encoder: dims must be positive");
  require(projection.size() == 2, "encoder: projection must list two dims");
  require(dropout >= 0.0 && dropout < 1.0, "encoder: dropout must be in [0, 1)");
}

std::string EncoderConfig::digest_string() const {
  std::ostringstream os;
  os << "enc1;blocks=" << n_blocks << ";stem_k=" << stem_kernel << ";block_k=" << block_kernel
     << ";widths=";
  for (int w : widths) os << w << ",";
  os << ";stem_s=" << stem_stride << ";block_s=" << block_stride << ";leads=" << in_leads
     << ";emb=" << embedding_dim << ";proj=" << projection[0] << "," << projection[1]
     << ";mom=" << bn_momentum << ";drop=" << dropout;
  return os.str();
}

uint64_t EncoderConfig::digest() const { return fnv1a64(digest_string()); }

// ---------------------------------------------------------------------------
// ResidualBlock

template <class S>
ResidualBlock<S>::ResidualBlock(const std::string& name, int c_in, int c_out, int kernel, int stride,
                                double bn_momentum)
    : projected_(c_in != c_out || stride != 1),
      conv1_(name + ".conv1", c_in, c_out, kernel, stride),
      bn1_(name + ".bn1", c_out, bn_momentum),
      conv2_(name + ".conv2", c_out, c_out, kernel, 1),
      bn2_(name + ".bn2", c_out, bn_momentum) {
  if (projected_) {
    skip_conv_ = std::make_unique<Conv1d<S>>(name + ".skip", c_in, c_out, 1, stride);
    skip_bn_ = std::make_unique<BatchNorm1d<S>>(name + ".skip_bn", c_out, bn_momentum);
  }
}

template <class S>
void ResidualBlock<S>::init(Rng& rng) {
  conv1_.init(rng);
  conv2_.init(rng);
  if (projected_) skip_conv_->init(rng);
}

template <class S>
void ResidualBlock<S>::forward(const Batch<S>& x, Batch<S>& y, bool training) {
  x_ = &x;
  conv1_.forward(x, a1_);
  bn1_.forward(a1_, h1_, training);
  relu1_.forward(h1_, r1_);
  conv2_.forward(r1_, a2_);
  bn2_.forward(a2_, h2_, training);

  const Batch<S>* skip = &x;
  if (projected_) {
    skip_conv_->forward(x, sa_);
    skip_bn_->forward(sa_, sh_, training);
    skip = &sh_;
  }
  sum_.resize(h2_.size());
  for (size_t i = 0; i < h2_.size(); ++i) sum_[i] = h2_[i] + (*skip)[i];
  relu_out_.forward(sum_, y);
}

template <class S>
void ResidualBlock<S>::backward(const Batch<S>& dy, Batch<S>& dx) {
  relu_out_.backward(dy, d_sum_);
  bn2_.backward(d_sum_, d_a2_);
  conv2_.backward(d_a2_, d_r1_);
  relu1_.backward(d_r1_, d_h1_);
  bn1_.backward(d_h1_, d_a1_);
  conv1_.backward(d_a1_, d_main_);

  if (projected_) {
    skip_bn_->backward(d_sum_, d_sa_);
    skip_conv_->backward(d_sa_, d_skip_);
    dx.resize(d_main_.size());
    for (size_t i = 0; i < d_main_.size(); ++i) dx[i] = d_main_[i] + d_skip_[i];
  } else {
    dx.resize(d_main_.size());
    for (size_t i = 0; i < d_main_.size(); ++i) dx[i] = d_main_[i] + d_sum_[i];
  }
}

template <class S>
std::vector<Param<S>*> ResidualBlock<S>::params() {
  std::vector<Param<S>*> out;
  for (auto* p : conv1_.params()) out.push_back(p);
  for (auto* p : bn1_.params()) out.push_back(p);
  for (auto* p : conv2_.params()) out.push_back(p);
  for (auto* p : bn2_.params()) out.push_back(p);
  if (projected_) {
    for (auto* p : skip_conv_->params()) out.push_back(p);
    for (auto* p : skip_bn_->params()) out.push_back(p);
  }
  return out;
}

template <class S>
void ResidualBlock<S>::visit_buffers(const std::function<void(const std::string&, Mat<S>&)>& fn) {
  bn1_.visit_buffers(fn);
  bn2_.visit_buffers(fn);
  if (projected_) skip_bn_->visit_buffers(fn);
}

template <class S>
uint64_t ResidualBlock<S>::pattern_hash() const {
  return mix_seed({relu1_.pattern_hash(), relu_out_.pattern_hash()});
}

// ---------------------------------------------------------------------------
// Encoder

template <class S>
Encoder<S>::Encoder(const EncoderConfig& cfg, uint64_t seed)
    : cfg_(cfg),
      stem_("stem.conv", cfg.in_leads, cfg.widths.at(0), cfg.stem_kernel, cfg.stem_stride),
      stem_bn_("stem.bn", cfg.widths.at(0), cfg.bn_momentum),
      gap_(),
      fc_("fc", cfg.widths.back(), cfg.embedding_dim),
      proj1_("proj.fc1", cfg.embedding_dim, cfg.projection.at(0)),
      proj_drop_(cfg.dropout),
      proj2_("proj.fc2", cfg.projection.at(0), cfg.projection.at(1)) {
  cfg.validate();
  int c_in = cfg.widths[0];
  for (int b = 0; b < cfg.n_blocks; ++b) {
    const int c_out = cfg.widths[b];
    blocks_.emplace_back("block" + std::to_string(b), c_in, c_out, cfg.block_kernel, cfg.block_stride,
                         cfg.bn_momentum);
    c_in = c_out;
  }
  block_out_.resize(blocks_.size());

  Rng rng(mix_seed({seed, 0x656e63696e6974ull}));
  stem_.init(rng);
  for (auto& b : blocks_) b.init(rng);
  fc_.init(rng);
  proj1_.init(rng);
  proj2_.init(rng);
}

template <class S>
const Mat<S>& Encoder<S>::forward_embed(const Batch<S>& x, bool training) {
  require(!x.empty(), "encoder: empty batch");
  for (const auto& m : x)
    require(static_cast<int>(m.rows()) == cfg_.in_leads, "encoder: lead-count mismatch");

  stem_.forward(x, stem_a_);
  for (const auto& m : stem_a_) check_finite(m, "activation after stem.conv");
  stem_bn_.forward(stem_a_, stem_h_, training);
  stem_relu_.forward(stem_h_, stem_r_);

  const Batch<S>* cur = &stem_r_;
  for (size_t b = 0; b < blocks_.size(); ++b) {
    blocks_[b].forward(*cur, block_out_[b], training);
    for (const auto& m : block_out_[b]) check_finite(m, "activation after block" + std::to_string(b));
    cur = &block_out_[b];
  }
  gap_.forward(*cur, pooled_);
  fc_.forward(pooled_, emb_);
  check_finite(emb_, "embeddings");
  return emb_;
}

template <class S>
const Mat<S>& Encoder<S>::forward_project(bool training, Rng* dropout_rng) {
  proj1_.forward(emb_, p1_);
  proj_relu_.forward(p1_, p1r_);
  proj_drop_.forward(p1r_, p1d_, training, dropout_rng);
  proj2_.forward(p1d_, proj_);
  check_finite(proj_, "projections");
  return proj_;
}

template <class S>
void Encoder<S>::backward_project(const Mat<S>& d_proj) {
  proj2_.backward(d_proj, d_p1d_);
  proj_drop_.backward(d_p1d_, d_p1r_);
  proj_relu_.backward(d_p1r_, d_p1_);
  proj1_.backward(d_p1_, d_emb_);
  backward_embed(d_emb_);
}

template <class S>
void Encoder<S>::backward_embed(const Mat<S>& d_emb) {
  fc_.backward(d_emb, d_pooled_);
  gap_.backward(d_pooled_, d_batch_a_);

  Batch<S>* d_cur = &d_batch_a_;
  Batch<S>* d_next = &d_batch_b_;
  for (size_t b = blocks_.size(); b-- > 0;) {
    blocks_[b].backward(*d_cur, *d_next);
    std::swap(d_cur, d_next);
  }
  stem_relu_.backward(*d_cur, *d_next);
  std::swap(d_cur, d_next);
  stem_bn_.backward(*d_cur, *d_next);
  std::swap(d_cur, d_next);
  // Gradient w.r.t. the raw input is not needed; stop at the stem conv
  // weight gradients.
  stem_.backward(*d_cur, *d_next);
}

template <class S>
std::vector<Param<S>*> Encoder<S>::params() {
  std::vector<Param<S>*> out;
  for (auto* p : stem_.params()) out.push_back(p);
  for (auto* p : stem_bn_.params()) out.push_back(p);
  for (auto& b : blocks_)
    for (auto* p : b.params()) out.push_back(p);
  for (auto* p : fc_.params()) out.push_back(p);
  for (auto* p : proj1_.params()) out.push_back(p);
  for (auto* p : proj2_.params()) out.push_back(p);
  return out;
}

template <class S>
void Encoder<S>::zero_grads() {
  for (auto* p : params()) p->grad.setZero();
}

template <class S>
void Encoder<S>::visit_state(const std::function<void(const std::string&, Mat<S>&)>& fn) {
  for (auto* p : params()) fn(p->name, p->value);
  stem_bn_.visit_buffers(fn);
  for (auto& b : blocks_) b.visit_buffers(fn);
}

template <class S>
uint64_t Encoder<S>::pattern_hash() const {
  uint64_t h = stem_relu_.pattern_hash();
  for (const auto& b : blocks_) h = mix_seed({h, b.pattern_hash()});
  return mix_seed({h, proj_relu_.pattern_hash()});
}

template class ResidualBlock<float>;
template class ResidualBlock<double>;
template class Encoder<float>;
template class Encoder<double>;

} // namespace cape::nn
