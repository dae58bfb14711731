#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cape/common.hpp"
#include "cape/eval.hpp"

namespace cape::eval {

double mae(std::span<const double> pred, std::span<const double> truth) {
  require(pred.size() == truth.size(), "mae: length mismatch");
  require(!pred.empty(), "mae: empty input");
  double total = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    require(std::isfinite(pred[i]) && std::isfinite(truth[i]), "mae: non-finite value");
    total += std::abs(pred[i] - truth[i]);
  }
  return total / static_cast<double>(pred.size());
}

std::vector<double> midranks(std::span<const double> v) {
  const size_t n = v.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0; // average of 1-based ranks
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
  require(scores.size() == labels.size(), "auroc: length mismatch");
  require(!scores.empty(), "auroc: empty input");
  size_t n_pos = 0;
  for (int y : labels) {
    require(y == 0 || y == 1, "auroc: labels must be 0/1");
    n_pos += static_cast<size_t>(y);
  }
  const size_t n_neg = scores.size() - n_pos;
  require(n_pos > 0 && n_neg > 0, "auroc: both classes must be present");

  const std::vector<double> ranks = midranks(scores);
  double rank_sum_pos = 0.0;
  for (size_t i = 0; i < scores.size(); ++i)
    if (labels[i] == 1) rank_sum_pos += ranks[i];
  const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

MetricResult ci95(std::span<const double> values, const std::string& name) {
  require(values.size() >= 2, "ci95: need at least two runs");
  MetricResult r;
  r.name = name;
  r.n = values.size();
  r.runs.assign(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  r.value = mean;
  r.se = sd / std::sqrt(n);
  const double t = t_quantile_975(static_cast<int>(values.size()) - 1);
  r.lo = mean - t * r.se;
  r.hi = mean + t * r.se;
  return r;
}

BinTable binned_mae(std::span<const double> pred, std::span<const double> truth, double bin_width) {
  require(bin_width > 0, "bins: width must be positive");
  require(pred.size() == truth.size(), "bins: length mismatch");
  require(!pred.empty(), "bins: empty input");

  const double lo = *std::min_element(truth.begin(), truth.end());
  const double hi = *std::max_element(truth.begin(), truth.end());
  const size_t n_bins = static_cast<size_t>(std::floor((hi - lo) / bin_width)) + 1;

  BinTable table;
  table.bin_width = bin_width;
  table.rows.resize(n_bins);
  std::vector<double> total(n_bins, 0.0);
  for (size_t b = 0; b < n_bins; ++b) {
    table.rows[b].lo = lo + static_cast<double>(b) * bin_width;
    table.rows[b].hi = table.rows[b].lo + bin_width;
  }
  for (size_t i = 0; i < truth.size(); ++i) {
    size_t b = static_cast<size_t>(std::floor((truth[i] - lo) / bin_width));
    b = std::min(b, n_bins - 1);
    total[b] += std::abs(pred[i] - truth[i]);
    table.rows[b].count += 1;
  }
  double max_mae = 0.0;
  for (size_t b = 0; b < n_bins; ++b) {
    if (table.rows[b].count == 0) continue;
    table.rows[b].empty = false;
    table.rows[b].mae_years = total[b] / static_cast<double>(table.rows[b].count);
    max_mae = std::max(max_mae, table.rows[b].mae_years);
  }
  for (auto& row : table.rows)
    if (!row.empty && max_mae > 0) row.normalized = row.mae_years / max_mae;
  return table;
}

Pca2dResult pca2d(const Eigen::MatrixXf& values) {
  const Eigen::Index n = values.cols();
  require(n >= 3, "pca: need at least three samples");

  Eigen::MatrixXd x = values.cast<double>();
  const Eigen::VectorXd mean = x.rowwise().mean();
  x.colwise() -= mean;
  const Eigen::MatrixXd cov = (x * x.transpose()) / static_cast<double>(n);
  const double total_var = cov.trace();
  require(total_var > 0, "pca: zero variance input");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  require(solver.info() == Eigen::Success, "pca: eigendecomposition failed");
  const Eigen::Index d = cov.rows();

  Pca2dResult out;
  out.coords.resize(n, 2);
  for (int c = 0; c < 2; ++c) {
    Eigen::VectorXd comp = solver.eigenvectors().col(d - 1 - c);
    Eigen::Index argmax = 0;
    comp.cwiseAbs().maxCoeff(&argmax);
    if (comp(argmax) < 0) comp = -comp;
    out.coords.col(c) = x.transpose() * comp;
    out.explained[static_cast<size_t>(c)] =
        std::max(0.0, solver.eigenvalues()(d - 1 - c)) / total_var;
  }
  return out;
}

} // namespace cape::eval
