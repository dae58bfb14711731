#pragma once

#include <Eigen/Core>
#include <array>
#include <span>
#include <string>
#include <vector>

#include "cape/embedding.hpp"

namespace cape::eval {

/// A metric with its across-run spread: mean, 95% t-interval, SE.
struct MetricResult {
  std::string name;
  double value = 0.0;
  size_t n = 0;
  std::vector<double> runs;
  double lo = 0.0, hi = 0.0;
  double se = 0.0;
};

double mae(std::span<const double> pred, std::span<const double> truth);

/// Mann-Whitney AUROC with midrank tie handling:
/// P(s+ > s-) + 0.5 P(tie). Errors if a class is missing.
double auroc(std::span<const double> scores, std::span<const int> labels);

/// mean +- t_{0.975, n-1} * sd/sqrt(n).
MetricResult ci95(std::span<const double> values, const std::string& name = "");

/// Two-sided DeLong test for paired AUROCs via placement values.
/// Errors with "degenerate-variance" when the placement difference has
/// zero variance.
double delong_test(std::span<const double> scores_a, std::span<const double> scores_b,
                   std::span<const int> labels);

/// Two-sided Wilcoxon signed-rank p. Exact enumeration for n <= 12 after
/// dropping zero differences, normal approximation with tie and
/// continuity correction above.
double wilcoxon_signed_rank(std::span<const double> diffs);

struct KruskalResult {
  double h = 0.0;
  double p = 1.0;
};
/// Kruskal-Wallis H with tie correction; p from chi-square (k-1 df).
KruskalResult kruskal_wallis(std::span<const std::vector<double>> groups);

/// Stratified 5-fold one-vs-rest logistic probe predicting cohort_id;
/// returns macro-averaged AUROC. Requires >= 30 samples per cohort.
double cohort_probe(const EmbeddingSet& emb, uint64_t seed);

struct Pca2dResult {
  Eigen::MatrixXd coords; // [n x 2]
  std::array<double, 2> explained{};
};
/// Top-2 principal components of [dim x n] features; component sign fixed
/// so the largest-magnitude loading is positive.
Pca2dResult pca2d(const Eigen::MatrixXf& values);

struct BinTable {
  struct Row {
    double lo = 0, hi = 0;
    size_t count = 0;
    double mae_years = 0.0;
    double normalized = 0.0;
    bool empty = true;
  };
  double bin_width = 0;
  std::vector<Row> rows;
};
/// Per-age-bin MAE, normalized by the maximum over non-empty bins.
BinTable binned_mae(std::span<const double> pred, std::span<const double> truth, double bin_width);

// Distribution utilities (also used by the test oracles).
double normal_cdf(double x);
double chi2_sf(double x, int df);
double t_quantile_975(int df);
double reg_gamma_q(double a, double x); // regularized upper incomplete gamma
double reg_beta_i(double a, double b, double x);

/// Midranks (1-based, ties averaged).
std::vector<double> midranks(std::span<const double> v);

} // namespace cape::eval
