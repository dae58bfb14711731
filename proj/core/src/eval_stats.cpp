#include <algorithm>
#include <cmath>

#include "cape/common.hpp"
#include "cape/eval.hpp"

namespace cape::eval {

namespace {

// Regularized incomplete gamma P(a, x) by series, Q(a, x) by continued
// fraction; standard Lentz evaluation.
double gamma_p_series(double a, double x) {
  double ap = a;
  double sum = 1.0 / a;
  double del = sum;
  for (int n = 0; n < 500; ++n) {
    ap += 1.0;
    del *= x / ap;
    sum += del;
    if (std::abs(del) < std::abs(sum) * 1e-15) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

double gamma_q_cf(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= 500; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-15) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

// Continued fraction for the regularized incomplete beta.
double beta_cf(double a, double b, double x) {
  const double tiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 500; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-15) break;
  }
  return h;
}

} // namespace

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double reg_gamma_q(double a, double x) {
  require(a > 0 && x >= 0, "gamma: invalid arguments");
  if (x == 0.0) return 1.0;
  if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
  return gamma_q_cf(a, x);
}

double chi2_sf(double x, int df) {
  require(df >= 1, "chi2: df must be >= 1");
  if (x <= 0.0) return 1.0;
  return reg_gamma_q(0.5 * df, 0.5 * x);
}

double reg_beta_i(double a, double b, double x) {
  require(a > 0 && b > 0, "beta: invalid parameters");
  require(x >= 0.0 && x <= 1.0, "beta: x outside [0,1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double ln_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log(1.0 - x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
  return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

double t_quantile_975(int df) {
  require(df >= 1, "t: df must be >= 1");
  // F(t) = 1 - 0.5 I_{df/(df+t^2)}(df/2, 1/2) for t >= 0; bisect.
  auto cdf = [df](double t) {
    const double x = static_cast<double>(df) / (static_cast<double>(df) + t * t);
    return 1.0 - 0.5 * reg_beta_i(0.5 * df, 0.5, x);
  };
  double lo = 0.0, hi = 1e3;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (cdf(mid) < 0.975)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

double wilcoxon_signed_rank(std::span<const double> diffs) {
  std::vector<double> nonzero;
  for (double d : diffs) {
    require(std::isfinite(d), "wilcoxon: non-finite difference");
    if (d != 0.0) nonzero.push_back(d);
  }
  require(!nonzero.empty(), "wilcoxon: all differences are zero");
  const size_t n = nonzero.size();

  std::vector<double> abs_d(n);
  for (size_t i = 0; i < n; ++i) abs_d[i] = std::abs(nonzero[i]);
  const std::vector<double> ranks = midranks(abs_d);

  double w_plus = 0.0;
  for (size_t i = 0; i < n; ++i)
    if (nonzero[i] > 0) w_plus += ranks[i];

  if (n <= 12) {
    // Exact: enumerate all sign assignments.
    const size_t total = size_t{1} << n;
    size_t count_le = 0, count_ge = 0;
    const double eps = 1e-9;
    for (size_t m = 0; m < total; ++m) {
      double w = 0.0;
      for (size_t i = 0; i < n; ++i)
        if (m >> i & 1) w += ranks[i];
      if (w <= w_plus + eps) ++count_le;
      if (w >= w_plus - eps) ++count_ge;
    }
    const double p_lo = static_cast<double>(count_le) / static_cast<double>(total);
    const double p_hi = static_cast<double>(count_ge) / static_cast<double>(total);
    return std::min(1.0, 2.0 * std::min(p_lo, p_hi));
  }

  // Normal approximation with tie and continuity correction.
  const double nn = static_cast<double>(n);
  const double mu = nn * (nn + 1.0) / 4.0;
  double tie_term = 0.0;
  {
    std::vector<double> sorted(abs_d);
    std::sort(sorted.begin(), sorted.end());
    size_t i = 0;
    while (i < sorted.size()) {
      size_t j = i;
      while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
      const double t = static_cast<double>(j - i + 1);
      tie_term += t * t * t - t;
      i = j + 1;
    }
  }
  const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
  require(var > 0, "wilcoxon: degenerate variance");
  double num = w_plus - mu;
  num -= 0.5 * (num > 0 ? 1.0 : (num < 0 ? -1.0 : 0.0));
  const double z = num / std::sqrt(var);
  return 2.0 * (1.0 - normal_cdf(std::abs(z)));
}

KruskalResult kruskal_wallis(std::span<const std::vector<double>> groups) {
  require(groups.size() >= 2, "kruskal: need at least two groups");
  std::vector<double> all;
  for (const auto& g : groups) {
    require(!g.empty(), "kruskal: empty group");
    all.insert(all.end(), g.begin(), g.end());
  }
  const size_t n = all.size();
  require(n >= groups.size(), "kruskal: too few observations");

  const std::vector<double> ranks = midranks(all);
  KruskalResult res;

  double h = 0.0;
  size_t pos = 0;
  for (const auto& g : groups) {
    double rank_sum = 0.0;
    for (size_t i = 0; i < g.size(); ++i) rank_sum += ranks[pos + i];
    pos += g.size();
    h += rank_sum * rank_sum / static_cast<double>(g.size());
  }
  const double nn = static_cast<double>(n);
  h = 12.0 / (nn * (nn + 1.0)) * h - 3.0 * (nn + 1.0);

  // Tie correction.
  double tie_term = 0.0;
  {
    std::vector<double> sorted(all);
    std::sort(sorted.begin(), sorted.end());
    size_t i = 0;
    while (i < sorted.size()) {
      size_t j = i;
      while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
      const double t = static_cast<double>(j - i + 1);
      tie_term += t * t * t - t;
      i = j + 1;
    }
  }
  const double denom = 1.0 - tie_term / (nn * nn * nn - nn);
  if (denom <= 0.0) {
    // All values identical.
    res.h = 0.0;
    res.p = 1.0;
    return res;
  }
  res.h = h / denom;
  res.p = chi2_sf(res.h, static_cast<int>(groups.size()) - 1);
  return res;
}

double delong_test(std::span<const double> scores_a, std::span<const double> scores_b,
                   std::span<const int> labels) {
  require(scores_a.size() == labels.size() && scores_b.size() == labels.size(),
          "delong: length mismatch");
  std::vector<double> pos_a, neg_a, pos_b, neg_b;
  for (size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] == 0 || labels[i] == 1, "delong: labels must be 0/1");
    if (labels[i] == 1) {
      pos_a.push_back(scores_a[i]);
      pos_b.push_back(scores_b[i]);
    } else {
      neg_a.push_back(scores_a[i]);
      neg_b.push_back(scores_b[i]);
    }
  }
  const size_t n1 = pos_a.size(), n0 = neg_a.size();
  require(n1 > 0 && n0 > 0, "delong: both classes must be present");
  require(n1 >= 2 && n0 >= 2, "delong: need at least two samples per class");

  // Placement values via midranks (Sun & Xu).
  auto placements = [](const std::vector<double>& pos, const std::vector<double>& neg,
                       std::vector<double>& v10, std::vector<double>& v01) {
    std::vector<double> all(pos);
    all.insert(all.end(), neg.begin(), neg.end());
    const std::vector<double> r_all = midranks(all);
    const std::vector<double> r_pos = midranks(pos);
    const std::vector<double> r_neg = midranks(neg);
    const double m = static_cast<double>(pos.size()), n = static_cast<double>(neg.size());
    v10.resize(pos.size());
    v01.resize(neg.size());
    for (size_t i = 0; i < pos.size(); ++i) v10[i] = (r_all[i] - r_pos[i]) / n;
    for (size_t j = 0; j < neg.size(); ++j) v01[j] = 1.0 - (r_all[pos.size() + j] - r_neg[j]) / m;
  };

  std::vector<double> v10_a, v01_a, v10_b, v01_b;
  placements(pos_a, neg_a, v10_a, v01_a);
  placements(pos_b, neg_b, v10_b, v01_b);

  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  const double auc_a = mean(v10_a);
  const double auc_b = mean(v10_b);

  auto cov = [](const std::vector<double>& x, const std::vector<double>& y, double mx, double my) {
    double s = 0.0;
    for (size_t i = 0; i < x.size(); ++i) s += (x[i] - mx) * (y[i] - my);
    return s / static_cast<double>(x.size() - 1);
  };
  const double s10_aa = cov(v10_a, v10_a, auc_a, auc_a);
  const double s10_bb = cov(v10_b, v10_b, auc_b, auc_b);
  const double s10_ab = cov(v10_a, v10_b, auc_a, auc_b);
  const double m01_a = mean(v01_a), m01_b = mean(v01_b);
  const double s01_aa = cov(v01_a, v01_a, m01_a, m01_a);
  const double s01_bb = cov(v01_b, v01_b, m01_b, m01_b);
  const double s01_ab = cov(v01_a, v01_b, m01_a, m01_b);

  const double var = (s10_aa + s10_bb - 2.0 * s10_ab) / static_cast<double>(n1) +
                     (s01_aa + s01_bb - 2.0 * s01_ab) / static_cast<double>(n0);
  require(var > 1e-300, "degenerate-variance: identical placements in delong test");
  const double z = (auc_a - auc_b) / std::sqrt(var);
  return 2.0 * (1.0 - normal_cdf(std::abs(z)));
}

} // namespace cape::eval
