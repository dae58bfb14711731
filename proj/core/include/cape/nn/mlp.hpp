#pragma once

#include <memory>
#include <optional>

#include "cape/datamodel.hpp"
#include "cape/embedding.hpp"
#include "cape/nn/layers.hpp"

namespace cape::nn {

/// Two-hidden-layer perceptron head on frozen features.
template <class S>
class Mlp {
public:
  Mlp(const std::string& name, int in_dim, const std::vector<int>& hidden, int out_dim, uint64_t seed);

  const Mat<S>& forward(const Mat<S>& x);
  void backward(const Mat<S>& d_out);
  std::vector<Param<S>*> params();
  void zero_grads();

  /// Deep copy / restore of parameter values (early-stopping snapshots).
  std::vector<Mat<S>> snapshot() const;
  void restore(const std::vector<Mat<S>>& snap);

  uint64_t pattern_hash() const;

  int in_dim() const { return in_dim_; }

private:
  int in_dim_;
  std::vector<Linear<S>> linears_;
  std::vector<MatReLU<S>> relus_;
  std::vector<Mat<S>> acts_; // h1, r1, h2, r2, out
  std::vector<Mat<S>> d_acts_;
};

inline const std::vector<int> kHeadGrid = {32, 64, 128, 256};

struct HeadConfig {
  std::vector<int> hidden = {256, 128}; // sizes drawn from kHeadGrid
  bool grid_search = false;             // sweep kHeadGrid x kHeadGrid
  double lr = 1e-4;
  int max_epochs = 200;
  int batch_size = 64;
  int patience = 10;     // early stop after this many stagnant epochs
  int lr_patience = 5;   // halve lr after this many stagnant epochs
  double lr_factor = 0.5;
  bool early_stop = true;

  static HeadConfig age_preset() { return HeadConfig{}; }
  static HeadConfig sex_preset() {
    HeadConfig cfg;
    cfg.hidden = {256, 256};
    return cfg;
  }
  void validate() const;
};

enum class HeadTask { age_regression, sex_classification };

/// A trained head plus the feature/target scaling it was fit with.
struct TrainedHead {
  HeadTask task = HeadTask::age_regression;
  std::vector<int> hidden;
  std::shared_ptr<Mlp<float>> net;
  Eigen::VectorXf feat_mean, feat_inv_sd;
  double target_mean = 0.0, target_sd = 1.0; // age only
  double val_metric = 0.0;                   // MAE (age) or AUROC (sex)
  int best_epoch = -1;
  double train_metric = 0.0;

  /// Scores for the given feature columns: years for age, logits for sex.
  std::vector<double> predict(const Eigen::MatrixXf& features) const;
};

/// Trains a head on the embeddings of splits.train, early-stopping on
/// splits.val. Grid mode trains one head per (h1, h2) in the grid and
/// returns the best validation metric. Labels come from the embedding
/// set; records lacking the task label are rejected.
TrainedHead train_head(const EmbeddingSet& emb, HeadTask task, const HeadConfig& cfg,
                       const data::Splits& splits, uint64_t seed);

} // namespace cape::nn
