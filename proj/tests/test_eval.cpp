#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cape/eval.hpp>
#include <cape/rng.hpp>

#include <algorithm>
#include <cmath>

using namespace cape;
using namespace cape::eval;

namespace {

// Brute-force AUROC by pair counting in exact half-integer arithmetic.
double auroc_pair_counting(std::span<const double> scores, std::span<const int> labels) {
  long long twice_wins = 0, pairs = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j])
        twice_wins += 2;
      else if (scores[i] == scores[j])
        twice_wins += 1;
    }
  }
  return static_cast<double>(twice_wins) / (2.0 * static_cast<double>(pairs));
}

// Paired sign-flip permutation oracle for the DeLong test.
double delong_permutation_oracle(std::span<const double> a, std::span<const double> b,
                                 std::span<const int> labels, int n_perms, uint64_t seed) {
  std::vector<int> lv(labels.begin(), labels.end());
  const double observed = std::abs(auroc(a, lv) - auroc(b, lv));
  Rng rng(seed);
  int count = 0;
  std::vector<double> pa(a.begin(), a.end()), pb(b.begin(), b.end());
  for (int p = 0; p < n_perms; ++p) {
    for (size_t i = 0; i < pa.size(); ++i) {
      const bool swap = rng.uniform() < 0.5;
      pa[i] = swap ? b[i] : a[i];
      pb[i] = swap ? a[i] : b[i];
    }
    if (std::abs(auroc(pa, lv) - auroc(pb, lv)) >= observed - 1e-12) ++count;
  }
  return static_cast<double>(count) / n_perms;
}

} // namespace

TEST_CASE("mae basics") {
  std::vector<double> a = {1, 2, 3}, b = {1, 1, 5};
  CHECK(mae(a, b) == doctest::Approx(1.0));
  CHECK(mae(a, a) == 0.0);
  // constant offset raises MAE by at most the offset
  std::vector<double> shifted = {2, 3, 4};
  CHECK(mae(shifted, b) <= mae(a, b) + 1.0 + 1e-12);
  CHECK_THROWS_AS(mae(a, std::vector<double>{1.0}), Error);
  CHECK_THROWS_AS(mae({}, {}), Error);
}

TEST_CASE("auroc on the worked example") {
  std::vector<double> scores = {0.1, 0.4, 0.35, 0.8};
  std::vector<int> labels = {0, 0, 1, 1};
  CHECK(auroc(scores, labels) == doctest::Approx(0.75)); // 3 of 4 pairs ordered
}

TEST_CASE("auroc extremes and errors") {
  std::vector<double> sep = {0.1, 0.2, 0.8, 0.9};
  std::vector<int> labels = {0, 0, 1, 1};
  CHECK(auroc(sep, labels) == 1.0);
  std::vector<double> ties = {0.5, 0.5, 0.5, 0.5};
  CHECK(auroc(ties, labels) == 0.5);
  std::vector<int> mono = {1, 1, 1, 1};
  CHECK_THROWS_AS(auroc(sep, mono), Error);
}

TEST_CASE("auroc equals exhaustive pair counting exactly") {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const size_t n = 2 + rng.uniform_int(199);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    bool has0 = false, has1 = false;
    for (size_t i = 0; i < n; ++i) {
      // coarse grid forces plenty of ties
      scores[i] = static_cast<double>(rng.uniform_int(20)) / 4.0;
      labels[i] = static_cast<int>(rng.uniform_int(2));
      (labels[i] ? has1 : has0) = true;
    }
    if (!has0 || !has1) continue;
    CHECK(auroc(scores, labels) == auroc_pair_counting(scores, labels));
  }
}

TEST_CASE("auroc invariant under strictly increasing transforms") {
  Rng rng(55);
  std::vector<double> scores(80);
  std::vector<int> labels(80);
  for (size_t i = 0; i < 80; ++i) {
    scores[i] = rng.normal();
    labels[i] = static_cast<int>(rng.uniform_int(2));
  }
  labels[0] = 0;
  labels[1] = 1;
  std::vector<double> squashed(80);
  for (size_t i = 0; i < 80; ++i) squashed[i] = std::tanh(scores[i]) * 3.0 + 7.0;
  CHECK(auroc(scores, labels) == doctest::Approx(auroc(squashed, labels)).epsilon(1e-12));
}

TEST_CASE("ci95") {
  std::vector<double> same = {2.0, 2.0, 2.0};
  MetricResult r = ci95(same);
  CHECK(r.value == 2.0);
  CHECK(r.lo == 2.0);
  CHECK(r.hi == 2.0);
  CHECK(r.se == 0.0);

  std::vector<double> two = {0.0, 2.0};
  MetricResult r2 = ci95(two);
  CHECK(r2.value == doctest::Approx(1.0));
  CHECK(r2.se == doctest::Approx(1.0));

  // n=6 -> t multiplier 2.571 (df=5)
  CHECK(t_quantile_975(5) == doctest::Approx(2.571).epsilon(2e-4));
  std::vector<double> six = {1, 2, 3, 4, 5, 6};
  MetricResult r6 = ci95(six);
  const double se = r6.se;
  CHECK(r6.hi - r6.value == doctest::Approx(2.570582 * se).epsilon(1e-5));

  std::vector<double> one = {1.0};
  CHECK_THROWS_AS(ci95(one), Error);
}

TEST_CASE("normal cdf and chi2 sf sanity") {
  CHECK(normal_cdf(0.0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(normal_cdf(1.959963985) == doctest::Approx(0.975).epsilon(1e-9));
  // chi2 survival reference values (df=2: exp(-x/2))
  CHECK(chi2_sf(3.0, 2) == doctest::Approx(std::exp(-1.5)).epsilon(1e-10));
  CHECK(chi2_sf(7.2, 2) == doctest::Approx(std::exp(-3.6)).epsilon(1e-10));
  // df=1: 2(1-Phi(sqrt(x)))
  CHECK(chi2_sf(4.0, 1) == doctest::Approx(2.0 * (1.0 - normal_cdf(2.0))).epsilon(1e-10));
}

TEST_CASE("wilcoxon exact branch") {
  std::vector<double> all_pos = {0.3, 0.1, 0.25, 0.9, 0.4};
  CHECK(wilcoxon_signed_rank(all_pos) == doctest::Approx(0.0625).epsilon(1e-12)); // 2/32

  // antisymmetric differences sit at the distribution center: p = 1
  std::vector<double> anti = {-2.0, -1.0, 1.0, 2.0};
  CHECK(wilcoxon_signed_rank(anti) == doctest::Approx(1.0));

  std::vector<double> zeros = {0.0, 0.0};
  CHECK_THROWS_AS(wilcoxon_signed_rank(zeros), Error);
}

TEST_CASE("wilcoxon exact vs normal approximation at n=12") {
  // the exact branch runs at n=12; compare with a forced approximation by
  // replicating the statistic computation through n=13 minus one element
  // is awkward, so instead check the documented agreement: generate n=12
  // no-tie samples, compute both branches via the public API boundary.
  Rng rng(9);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> d12(12), d13(13);
    for (int i = 0; i < 12; ++i) d12[i] = rng.normal() + 0.4;
    const double p_exact = wilcoxon_signed_rank(d12);

    // normal-branch computation on the same data (mirror of the
    // implementation's approximation)
    std::vector<double> abs_d(12);
    for (int i = 0; i < 12; ++i) abs_d[i] = std::abs(d12[i]);
    auto ranks = midranks(abs_d);
    double w = 0;
    for (int i = 0; i < 12; ++i)
      if (d12[i] > 0) w += ranks[i];
    const double mu = 12.0 * 13.0 / 4.0, var = 12.0 * 13.0 * 25.0 / 24.0;
    double num = w - mu;
    num -= 0.5 * (num > 0 ? 1 : (num < 0 ? -1 : 0));
    const double p_norm = 2.0 * (1.0 - normal_cdf(std::abs(num) / std::sqrt(var)));
    worst = std::max(worst, std::abs(std::min(p_norm, 1.0) - p_exact));
  }
  CHECK(worst <= 0.02);
}

TEST_CASE("kruskal-wallis hand-computed case") {
  std::vector<std::vector<double>> groups = {{1, 2, 3}, {4, 5, 6}, {7, 8, 9}};
  KruskalResult r = kruskal_wallis(groups);
  CHECK(r.h == doctest::Approx(7.2).epsilon(1e-12));
  CHECK(r.p == doctest::Approx(chi2_sf(7.2, 2)).epsilon(1e-12));

  std::vector<std::vector<double>> flat = {{2, 2}, {2, 2}, {2, 2}};
  KruskalResult rf = kruskal_wallis(flat);
  CHECK(rf.h == 0.0);
  CHECK(rf.p == 1.0);

  std::vector<std::vector<double>> single = {{1, 2, 3}};
  CHECK_THROWS_AS(kruskal_wallis(single), Error);
}

TEST_CASE("kruskal-wallis invariant under increasing transforms") {
  Rng rng(31);
  std::vector<std::vector<double>> groups(3);
  for (auto& g : groups)
    for (int i = 0; i < 15; ++i) g.push_back(rng.normal());
  groups[2][3] = groups[0][5]; // inject a tie
  auto r1 = kruskal_wallis(groups);
  for (auto& g : groups)
    for (auto& v : g) v = std::exp(2.0 * v) + 5.0;
  auto r2 = kruskal_wallis(groups);
  CHECK(r1.h == doctest::Approx(r2.h).epsilon(1e-12));
}

TEST_CASE("delong: identical scores are degenerate") {
  std::vector<double> s = {0.1, 0.9, 0.3, 0.8, 0.2, 0.7, 0.15, 0.85};
  std::vector<int> y = {0, 1, 0, 1, 0, 1, 0, 1};
  CHECK_THROWS_WITH_AS(delong_test(s, s, y), doctest::Contains("degenerate-variance"), Error);
}

TEST_CASE("delong: symmetric in A and B") {
  Rng rng(4);
  const size_t n = 60;
  std::vector<double> a(n), b(n);
  std::vector<int> y(n);
  for (size_t i = 0; i < n; ++i) {
    y[i] = static_cast<int>(i % 2);
    a[i] = y[i] * 0.8 + rng.normal();
    b[i] = y[i] * 0.5 + rng.normal();
  }
  CHECK(delong_test(a, b, y) == doctest::Approx(delong_test(b, a, y)).epsilon(1e-12));
}

TEST_CASE("delong: perfect vs coin flip on n=40 is significant") {
  Rng rng(8);
  const size_t n = 40;
  std::vector<double> perfect(n), coin(n);
  std::vector<int> y(n);
  for (size_t i = 0; i < n; ++i) {
    y[i] = static_cast<int>(i < 20 ? 0 : 1);
    perfect[i] = static_cast<double>(y[i]) + 0.01 * rng.uniform();
    coin[i] = rng.uniform();
  }
  const double p = delong_test(perfect, coin, y);
  CHECK(p < 0.01);
  const double p_perm = delong_permutation_oracle(perfect, coin, y, 10000, 77);
  CHECK(p_perm < 0.01);
}

TEST_CASE("delong agrees with the permutation oracle on n=200") {
  Rng rng(600);
  double worst = 0.0;
  for (int trial = 0; trial < 6; ++trial) {
    const size_t n = 200;
    std::vector<double> a(n), b(n), base(n);
    std::vector<int> y(n);
    for (size_t i = 0; i < n; ++i) {
      y[i] = static_cast<int>(i % 2);
      base[i] = rng.normal();
      a[i] = base[i] + 0.9 * y[i] + 0.8 * rng.normal();
      b[i] = base[i] + 0.7 * y[i] + 0.9 * rng.normal();
    }
    const double p_delong = delong_test(a, b, y);
    const double p_perm = delong_permutation_oracle(a, b, y, 10000, 1000 + trial);
    worst = std::max(worst, std::abs(p_delong - p_perm));
  }
  CHECK(worst <= 0.02);
}

TEST_CASE("binned mae") {
  std::vector<double> truth = {40, 41, 50, 51, 60};
  std::vector<double> pred = {42, 41, 53, 51, 70};
  BinTable t = binned_mae(pred, truth, 10.0);
  REQUIRE(t.rows.size() == 3);
  CHECK(t.rows[0].count == 2);
  CHECK(t.rows[0].mae_years == doctest::Approx(1.0));
  CHECK(t.rows[1].mae_years == doctest::Approx(1.5));
  CHECK(t.rows[2].mae_years == doctest::Approx(10.0));
  CHECK(t.rows[2].normalized == 1.0); // max bin normalizes to exactly 1
  CHECK(t.rows[0].normalized == doctest::Approx(0.1));

  // single bin equals global mae
  BinTable g = binned_mae(pred, truth, 100.0);
  REQUIRE(g.rows.size() == 1);
  CHECK(g.rows[0].mae_years == doctest::Approx(mae(pred, truth)));

  // empty bin flagged and excluded
  std::vector<double> truth2 = {40, 40.5, 60};
  std::vector<double> pred2 = {41, 40.5, 62};
  BinTable e = binned_mae(pred2, truth2, 5.0);
  bool found_empty = false;
  for (const auto& row : e.rows)
    if (row.empty) {
      found_empty = true;
      CHECK(row.count == 0);
      CHECK(row.normalized == 0.0);
    }
  CHECK(found_empty);
  CHECK_THROWS_AS(binned_mae({}, {}, 2.0), Error);
}

TEST_CASE("pca2d") {
  Rng rng(13);
  // rank-2 data in 6 dims
  Eigen::MatrixXf basis(6, 2);
  for (Eigen::Index i = 0; i < basis.size(); ++i) basis.data()[i] = static_cast<float>(rng.normal());
  Eigen::MatrixXf coeff(2, 50);
  for (Eigen::Index i = 0; i < coeff.size(); ++i) coeff.data()[i] = static_cast<float>(rng.normal());
  coeff.row(0) *= 3.0f;
  Eigen::MatrixXf x = basis * coeff;

  Pca2dResult r = pca2d(x);
  CHECK(r.coords.rows() == 50);
  CHECK(r.explained[0] + r.explained[1] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(r.explained[0] >= r.explained[1]);

  // appending an exact copy leaves the components unchanged
  Eigen::MatrixXf xx(6, 100);
  xx << x, x;
  Pca2dResult r2 = pca2d(xx);
  CHECK(r2.explained[0] == doctest::Approx(r.explained[0]).epsilon(1e-9));
  for (int i = 0; i < 50; ++i) {
    CHECK(r2.coords(i, 0) == doctest::Approx(r.coords(i, 0)).epsilon(1e-6));
    CHECK(r2.coords(i, 1) == doctest::Approx(r.coords(i, 1)).epsilon(1e-6));
  }

  Eigen::MatrixXf flat = Eigen::MatrixXf::Constant(4, 10, 2.5f);
  CHECK_THROWS_AS(pca2d(flat), Error);
}

TEST_CASE("cohort probe: no signal, strong signal, determinism") {
  Rng rng(21);
  EmbeddingSet emb;
  emb.dim = 8;
  const size_t per = 60;
  emb.values.resize(8, 3 * per);
  for (size_t c = 0; c < 3; ++c)
    for (size_t i = 0; i < per; ++i) {
      const size_t col = c * per + i;
      for (int dd = 0; dd < 8; ++dd) emb.values(dd, static_cast<Eigen::Index>(col)) = static_cast<float>(rng.normal());
      emb.record_ids.push_back(col);
      emb.cohort_ids.push_back(static_cast<uint16_t>(c));
      emb.ages.push_back(50.0f);
      emb.sexes.push_back(0);
    }

  // identical distribution across cohorts: score near chance
  const double chance = cohort_probe(emb, 3);
  CHECK(chance > 0.40);
  CHECK(chance < 0.60);
  CHECK(cohort_probe(emb, 3) == chance); // deterministic

  // inject 10-sigma cluster separation (each cohort on its own axis)
  EmbeddingSet strong = emb;
  for (size_t col = 0; col < 3 * per; ++col)
    strong.values(strong.cohort_ids[col], static_cast<Eigen::Index>(col)) += 10.0f;
  CHECK(cohort_probe(strong, 3) > 0.99);

  // cohort below the 30-sample floor
  EmbeddingSet tiny = emb;
  tiny.cohort_ids.assign(tiny.cohort_ids.size(), 0);
  for (size_t i = 0; i < 10; ++i) tiny.cohort_ids[i] = 1;
  CHECK_THROWS_AS(cohort_probe(tiny, 3), Error);
}
