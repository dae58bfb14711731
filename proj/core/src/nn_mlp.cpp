#include "cape/nn/mlp.hpp"

#include <algorithm>
#include <cmath>

#include "cape/eval.hpp"
#include "cape/nn/losses.hpp"
#include "cape/nn/optim.hpp"

namespace cape::nn {

template <class S>
Mlp<S>::Mlp(const std::string& name, int in_dim, const std::vector<int>& hidden, int out_dim, uint64_t seed)
    : in_dim_(in_dim) {
  require(!hidden.empty(), "mlp: need at least one hidden layer");
  Rng rng(mix_seed({seed, 0x6d6c70ull}));
  int prev = in_dim;
  for (size_t h = 0; h < hidden.size(); ++h) {
    linears_.emplace_back(name + ".fc" + std::to_string(h), prev, hidden[h]);
    prev = hidden[h];
  }
  linears_.emplace_back(name + ".out", prev, out_dim);
  relus_.resize(hidden.size());
  for (auto& l : linears_) l.init(rng);
  acts_.resize(2 * hidden.size() + 1);
  d_acts_.resize(2 * hidden.size() + 1);
}

template <class S>
const Mat<S>& Mlp<S>::forward(const Mat<S>& x) {
  const Mat<S>* cur = &x;
  for (size_t h = 0; h < relus_.size(); ++h) {
    linears_[h].forward(*cur, acts_[2 * h]);
    relus_[h].forward(acts_[2 * h], acts_[2 * h + 1]);
    cur = &acts_[2 * h + 1];
  }
  linears_.back().forward(*cur, acts_.back());
  return acts_.back();
}

template <class S>
void Mlp<S>::backward(const Mat<S>& d_out) {
  Mat<S> d_cur;
  linears_.back().backward(d_out, d_cur);
  for (size_t h = relus_.size(); h-- > 0;) {
    Mat<S> d_pre;
    relus_[h].backward(d_cur, d_pre);
    linears_[h].backward(d_pre, d_cur);
  }
}

template <class S>
std::vector<Param<S>*> Mlp<S>::params() {
  std::vector<Param<S>*> out;
  for (auto& l : linears_)
    for (auto* p : l.params()) out.push_back(p);
  return out;
}

template <class S>
void Mlp<S>::zero_grads() {
  for (auto* p : params()) p->grad.setZero();
}

template <class S>
std::vector<Mat<S>> Mlp<S>::snapshot() const {
  std::vector<Mat<S>> snap;
  for (auto& l : const_cast<Mlp<S>*>(this)->linears_)
    for (auto* p : l.params()) snap.push_back(p->value);
  return snap;
}

template <class S>
void Mlp<S>::restore(const std::vector<Mat<S>>& snap) {
  size_t k = 0;
  for (auto& l : linears_)
    for (auto* p : l.params()) p->value = snap.at(k++);
}

template <class S>
uint64_t Mlp<S>::pattern_hash() const {
  uint64_t h = 0x12345;
  for (const auto& r : relus_) h = mix_seed({h, r.pattern_hash()});
  return h;
}

template class Mlp<float>;
template class Mlp<double>;

// ---------------------------------------------------------------------------
// Head training

void HeadConfig::validate() const {
  require(hidden.size() == 2, "head: exactly two hidden layers");
  for (int h : hidden)
    require(std::find(kHeadGrid.begin(), kHeadGrid.end(), h) != kHeadGrid.end(),
            "head: hidden size " + std::to_string(h) + " not in the {32,64,128,256} grid");
  require(lr > 0, "head: lr must be positive");
  require(max_epochs >= 1 && batch_size >= 1, "head: epochs and batch size must be positive");
}

std::vector<double> TrainedHead::predict(const Eigen::MatrixXf& features) const {
  Eigen::MatrixXf x = (features.colwise() - feat_mean).array().colwise() * feat_inv_sd.array();
  const Mat<float>& out = net->forward(x);
  std::vector<double> scores(static_cast<size_t>(out.cols()));
  for (Eigen::Index i = 0; i < out.cols(); ++i) {
    double v = static_cast<double>(out(0, i));
    if (task == HeadTask::age_regression) v = v * target_sd + target_mean;
    scores[static_cast<size_t>(i)] = v;
  }
  return scores;
}

namespace {

struct HeadData {
  Eigen::MatrixXf x; // standardized features [dim x n]
  std::vector<float> age_z;
  std::vector<uint8_t> labels;
  std::vector<double> truth; // raw years or 0/1 labels
};

HeadData gather(const EmbeddingSet& emb, const std::unordered_map<uint64_t, size_t>& by_id,
                std::span<const uint64_t> ids, HeadTask task, const char* which) {
  require(!ids.empty(), std::string("head: empty ") + which + " split");
  HeadData d;
  d.x.resize(emb.dim, static_cast<Eigen::Index>(ids.size()));
  for (size_t i = 0; i < ids.size(); ++i) {
    auto it = by_id.find(ids[i]);
    require(it != by_id.end(), "head: record " + std::to_string(ids[i]) + " missing from embeddings");
    const size_t row = it->second;
    d.x.col(static_cast<Eigen::Index>(i)) = emb.values.col(static_cast<Eigen::Index>(row));
    if (task == HeadTask::age_regression) {
      require(!std::isnan(emb.ages[row]), "head: record " + std::to_string(ids[i]) + " has no age label");
      d.truth.push_back(static_cast<double>(emb.ages[row]));
    } else {
      require(emb.sexes[row] != static_cast<uint8_t>(data::Sex::unknown),
              "head: record " + std::to_string(ids[i]) + " has no sex label");
      d.labels.push_back(emb.sexes[row]);
      d.truth.push_back(static_cast<double>(emb.sexes[row]));
    }
  }
  return d;
}

TrainedHead train_single(const EmbeddingSet& emb, HeadTask task, const HeadConfig& cfg,
                         const data::Splits& splits, uint64_t seed, const std::vector<int>& hidden) {
  const auto by_id = emb.index();
  HeadData train = gather(emb, by_id, splits.train, task, "train");
  HeadData val = gather(emb, by_id, splits.val, task, "val");

  if (task == HeadTask::sex_classification) {
    const auto [lo, hi] = std::minmax_element(train.labels.begin(), train.labels.end());
    require(*lo != *hi, "head: single-class training labels for sex");
  }

  TrainedHead head;
  head.task = task;
  head.hidden = hidden;

  // Feature standardization fitted on the training split.
  head.feat_mean = train.x.rowwise().mean();
  Eigen::VectorXf var =
      (train.x.colwise() - head.feat_mean).array().square().rowwise().mean().matrix();
  head.feat_inv_sd = (var.array() + 1e-12f).rsqrt().matrix();
  auto standardize = [&](Eigen::MatrixXf& x) {
    x = ((x.colwise() - head.feat_mean).array().colwise() * head.feat_inv_sd.array()).matrix();
  };
  standardize(train.x);
  standardize(val.x);

  // Age targets are z-scored for training; predictions are mapped back.
  if (task == HeadTask::age_regression) {
    double m = 0;
    for (double a : train.truth) m += a;
    m /= static_cast<double>(train.truth.size());
    double v = 0;
    for (double a : train.truth) v += (a - m) * (a - m);
    v /= static_cast<double>(train.truth.size());
    head.target_mean = m;
    head.target_sd = std::sqrt(std::max(v, 1e-12));
    train.age_z.resize(train.truth.size());
    for (size_t i = 0; i < train.truth.size(); ++i)
      train.age_z[i] = static_cast<float>((train.truth[i] - m) / head.target_sd);
  }

  head.net = std::make_shared<Mlp<float>>("head", static_cast<int>(emb.dim), hidden, 1,
                                          mix_seed({seed, static_cast<uint64_t>(hidden[0]),
                                                    static_cast<uint64_t>(hidden[1])}));
  Mlp<float>& net = *head.net;
  auto params = net.params();
  AdamState<float> adam;
  adam.attach(params);

  const bool lower_better = task == HeadTask::age_regression;
  auto evaluate = [&](const HeadData& d) {
    const Mat<float>& out = net.forward(d.x);
    if (task == HeadTask::age_regression) {
      std::vector<double> pred(static_cast<size_t>(out.cols()));
      for (Eigen::Index i = 0; i < out.cols(); ++i)
        pred[static_cast<size_t>(i)] = static_cast<double>(out(0, i)) * head.target_sd + head.target_mean;
      return eval::mae(pred, d.truth);
    }
    std::vector<double> score(static_cast<size_t>(out.cols()));
    for (Eigen::Index i = 0; i < out.cols(); ++i) score[static_cast<size_t>(i)] = out(0, i);
    std::vector<int> labels(d.labels.begin(), d.labels.end());
    return eval::auroc(score, labels);
  };

  const size_t n = static_cast<size_t>(train.x.cols());
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;

  Rng shuffle_rng(mix_seed({seed, 0x736875ull}));
  double lr = cfg.lr;
  double best = lower_better ? std::numeric_limits<double>::infinity() : -1.0;
  std::vector<Mat<float>> best_snap;
  int stagnant = 0, lr_stagnant = 0;

  Eigen::MatrixXf xb;
  Mat<float> d_out;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (size_t start = 0; start < n; start += static_cast<size_t>(cfg.batch_size)) {
      const size_t b = std::min(static_cast<size_t>(cfg.batch_size), n - start);
      xb.resize(train.x.rows(), static_cast<Eigen::Index>(b));
      std::vector<float> tb(b);
      std::vector<uint8_t> lb(b);
      for (size_t i = 0; i < b; ++i) {
        const size_t src = order[start + i];
        xb.col(static_cast<Eigen::Index>(i)) = train.x.col(static_cast<Eigen::Index>(src));
        if (task == HeadTask::age_regression)
          tb[i] = train.age_z[src];
        else
          lb[i] = train.labels[src];
      }
      const Mat<float>& out = net.forward(xb);
      if (task == HeadTask::age_regression)
        mse_loss<float>(out, tb, &d_out);
      else
        bce_with_logits<float>(out, lb, &d_out);
      net.zero_grads();
      net.backward(d_out);
      adam_step(adam, params, lr);
    }

    const double metric = evaluate(val);
    const bool improved = lower_better ? metric < best : metric > best;
    if (improved) {
      best = metric;
      best_snap = net.snapshot();
      head.best_epoch = epoch;
      stagnant = 0;
      lr_stagnant = 0;
    } else {
      ++stagnant;
      ++lr_stagnant;
      if (lr_stagnant >= cfg.lr_patience) {
        lr *= cfg.lr_factor;
        lr_stagnant = 0;
      }
      if (cfg.early_stop && stagnant >= cfg.patience) break;
    }
  }
  // Early stopping restores the best-validation parameters; a run with
  // early stopping disabled keeps the final ones.
  if (cfg.early_stop && !best_snap.empty()) {
    net.restore(best_snap);
    head.val_metric = best;
  } else {
    head.val_metric = evaluate(val);
  }
  head.train_metric = evaluate(train);
  return head;
}

} // namespace

TrainedHead train_head(const EmbeddingSet& emb, HeadTask task, const HeadConfig& cfg,
                       const data::Splits& splits, uint64_t seed) {
  cfg.validate();
  if (!cfg.grid_search) return train_single(emb, task, cfg, splits, seed, cfg.hidden);

  const bool lower_better = task == HeadTask::age_regression;
  std::optional<TrainedHead> best;
  for (int h1 : kHeadGrid)
    for (int h2 : kHeadGrid) {
      TrainedHead cand = train_single(emb, task, cfg, splits, seed, {h1, h2});
      if (!best || (lower_better ? cand.val_metric < best->val_metric
                                 : cand.val_metric > best->val_metric))
        best = std::move(cand);
    }
  return *best;
}

} // namespace cape::nn
