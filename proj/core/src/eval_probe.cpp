#include <algorithm>
#include <cmath>
#include <map>

#include "cape/common.hpp"
#include "cape/eval.hpp"
#include "cape/rng.hpp"

namespace cape::eval {

namespace {

// Full-batch Adam on L2-regularized logistic loss; convex, so a fixed
// iteration budget is enough for a probe.
Eigen::VectorXd fit_logistic(const Eigen::MatrixXd& x, const std::vector<int>& y, int iters,
                             double lr, double l2) {
  const Eigen::Index d = x.rows(), n = x.cols();
  Eigen::VectorXd w = Eigen::VectorXd::Zero(d + 1); // last entry: bias
  Eigen::VectorXd m = Eigen::VectorXd::Zero(d + 1), v = Eigen::VectorXd::Zero(d + 1);
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  Eigen::VectorXd grad(d + 1);
  for (int t = 1; t <= iters; ++t) {
    Eigen::VectorXd z = x.transpose() * w.head(d);
    z.array() += w(d);
    Eigen::VectorXd sig = (1.0 / (1.0 + (-z.array()).exp())).matrix();
    Eigen::VectorXd resid(n);
    for (Eigen::Index i = 0; i < n; ++i) resid(i) = sig(i) - static_cast<double>(y[static_cast<size_t>(i)]);
    grad.head(d) = x * resid / static_cast<double>(n) + l2 * w.head(d);
    grad(d) = resid.mean();
    m = b1 * m + (1.0 - b1) * grad;
    v = (b2 * v.array() + (1.0 - b2) * grad.array().square()).matrix();
    const double bc1 = 1.0 - std::pow(b1, t), bc2 = 1.0 - std::pow(b2, t);
    w.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
  }
  return w;
}

} // namespace

double cohort_probe(const EmbeddingSet& emb, uint64_t seed) {
  std::map<uint16_t, std::vector<size_t>> by_cohort;
  for (size_t i = 0; i < emb.size(); ++i) by_cohort[emb.cohort_ids[i]].push_back(i);
  require(by_cohort.size() >= 2, "probe: need at least two cohorts");
  for (const auto& [cid, idx] : by_cohort)
    require(idx.size() >= 30, "probe: cohort " + std::to_string(cid) + " has only " +
                                  std::to_string(idx.size()) + " samples (need 30)");

  constexpr int kFolds = 5;
  const Eigen::Index d = emb.values.rows();

  // Stratified folds: shuffle within cohort, assign round-robin.
  std::vector<int> fold(emb.size());
  Rng rng(mix_seed({seed, 0x70726f6265ull}));
  for (auto& [cid, idx] : by_cohort) {
    rng.shuffle(idx);
    for (size_t k = 0; k < idx.size(); ++k) fold[idx[k]] = static_cast<int>(k % kFolds);
  }

  // Pool out-of-fold scores per cohort, then macro-average AUROC.
  std::map<uint16_t, std::pair<std::vector<double>, std::vector<int>>> pooled;

  for (int f = 0; f < kFolds; ++f) {
    std::vector<size_t> train_idx, test_idx;
    for (size_t i = 0; i < emb.size(); ++i) (fold[i] == f ? test_idx : train_idx).push_back(i);

    // Standardize on the training fold.
    Eigen::MatrixXd xtr(d, static_cast<Eigen::Index>(train_idx.size()));
    for (size_t i = 0; i < train_idx.size(); ++i)
      xtr.col(static_cast<Eigen::Index>(i)) = emb.values.col(static_cast<Eigen::Index>(train_idx[i])).cast<double>();
    const Eigen::VectorXd mu = xtr.rowwise().mean();
    Eigen::VectorXd sd = ((xtr.colwise() - mu).array().square().rowwise().mean() + 1e-12).sqrt().matrix();
    xtr = ((xtr.colwise() - mu).array().colwise() / sd.array()).matrix();

    Eigen::MatrixXd xte(d, static_cast<Eigen::Index>(test_idx.size()));
    for (size_t i = 0; i < test_idx.size(); ++i)
      xte.col(static_cast<Eigen::Index>(i)) = emb.values.col(static_cast<Eigen::Index>(test_idx[i])).cast<double>();
    xte = ((xte.colwise() - mu).array().colwise() / sd.array()).matrix();

    for (const auto& [cid, unused] : by_cohort) {
      std::vector<int> ytr(train_idx.size());
      for (size_t i = 0; i < train_idx.size(); ++i) ytr[i] = emb.cohort_ids[train_idx[i]] == cid ? 1 : 0;
      const Eigen::VectorXd w = fit_logistic(xtr, ytr, 200, 0.05, 1e-3);
      auto& [scores, ys] = pooled[cid];
      for (size_t i = 0; i < test_idx.size(); ++i) {
        const double z = xte.col(static_cast<Eigen::Index>(i)).dot(w.head(d)) + w(d);
        scores.push_back(z);
        ys.push_back(emb.cohort_ids[test_idx[i]] == cid ? 1 : 0);
      }
    }
  }

  double macro = 0.0;
  for (const auto& [cid, sy] : pooled) macro += auroc(sy.first, sy.second);
  return macro / static_cast<double>(pooled.size());
}

} // namespace cape::eval
