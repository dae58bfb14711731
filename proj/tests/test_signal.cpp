#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cape/signal.hpp>
#include <cape/syncohort.hpp>

#include <cmath>
#include <numbers>

using namespace cape;
using namespace cape::sig;
using std::numbers::pi;

namespace {

std::vector<double> sine(double freq, double fs, double seconds, double amp = 1.0) {
  const int n = static_cast<int>(seconds * fs);
  std::vector<double> x(n);
  for (int i = 0; i < n; ++i) x[i] = amp * std::sin(2.0 * pi * freq * i / fs);
  return x;
}

// amplitude of a sinusoid estimated by RMS over the interior
double interior_amplitude(std::span<const double> x, double fs) {
  const int skip = static_cast<int>(fs); // discard 1 s each side
  double ss = 0.0;
  int n = 0;
  for (size_t i = skip; i + skip < x.size(); ++i, ++n) ss += x[i] * x[i];
  return std::sqrt(2.0 * ss / n);
}

data::EcgRecord twelve_lead_record(double fs, double seconds) {
  data::EcgRecord r;
  r.record_id = 77;
  r.patient_id = 1;
  r.sampling_rate = static_cast<float>(fs);
  r.leads = {"I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6"};
  const int n = static_cast<int>(fs * seconds);
  r.samples.resize(12, n);
  for (int l = 0; l < 12; ++l)
    for (int t = 0; t < n; ++t)
      r.samples(l, t) = static_cast<float>(0.5 * std::sin(2.0 * pi * 7.0 * t / fs + 0.3 * l));
  r.age = 60.0f;
  r.sex = data::Sex::female;
  return r;
}

} // namespace

TEST_CASE("prefilter rejects DC") {
  PreprocessConfig cfg;
  const double fs = 400.0;
  std::vector<double> x(static_cast<size_t>(10 * fs), 1.0); // constant 1 mV
  auto y = prefilter(x, fs, cfg);
  REQUIRE(y.size() == x.size());
  double mean_abs = 0.0;
  size_t n = 0;
  for (size_t i = static_cast<size_t>(fs); i < y.size(); ++i, ++n) mean_abs += std::abs(y[i]);
  mean_abs /= static_cast<double>(n);
  CHECK(mean_abs < 0.01);
}

TEST_CASE("prefilter notch attenuates mains by 20 dB") {
  PreprocessConfig cfg;
  cfg.mains = 50.0;
  const double fs = 400.0;
  auto x = sine(50.0, fs, 12.0);
  auto y = prefilter(x, fs, cfg);
  const double amp = interior_amplitude(y, fs);
  CHECK(amp < std::pow(10.0, -20.0 / 20.0)); // >= 20 dB down

  // frequency-response oracle: the designed cascade itself is deep at the
  // notch center (filtfilt applies |H|^2)
  Cascade cascade = design_butter_highpass(4, cfg.band_lo, fs);
  Cascade lp = design_butter_lowpass(4, cfg.band_hi, fs);
  cascade.insert(cascade.end(), lp.begin(), lp.end());
  cascade.push_back(design_notch(cfg.mains, 30.0, fs));
  const double h2 = std::norm(cascade_response(cascade, 50.0, fs));
  CHECK(h2 < std::pow(10.0, -20.0 / 10.0));
}

TEST_CASE("prefilter passband flat within 1 dB at 10 Hz") {
  PreprocessConfig cfg;
  const double fs = 400.0;
  auto x = sine(10.0, fs, 12.0);
  auto y = prefilter(x, fs, cfg);
  const double amp = interior_amplitude(y, fs);
  const double db = 20.0 * std::log10(amp);
  CHECK(std::abs(db) < 1.0);

  Cascade cascade = design_butter_highpass(4, cfg.band_lo, fs);
  Cascade lp = design_butter_lowpass(4, cfg.band_hi, fs);
  cascade.insert(cascade.end(), lp.begin(), lp.end());
  cascade.push_back(design_notch(cfg.mains, 30.0, fs));
  const double h2 = std::norm(cascade_response(cascade, 10.0, fs));
  CHECK(amp == doctest::Approx(h2).epsilon(0.02));
}

TEST_CASE("prefilter is linear") {
  PreprocessConfig cfg;
  const double fs = 400.0;
  auto x1 = sine(8.0, fs, 6.0);
  auto x2 = sine(23.0, fs, 6.0, 0.7);
  std::vector<double> combo(x1.size());
  for (size_t i = 0; i < x1.size(); ++i) combo[i] = 2.5 * x1[i] - 1.25 * x2[i];

  auto y1 = prefilter(x1, fs, cfg);
  auto y2 = prefilter(x2, fs, cfg);
  auto yc = prefilter(combo, fs, cfg);
  double max_rel = 0.0, scale = 0.0;
  for (size_t i = 0; i < yc.size(); ++i) scale = std::max(scale, std::abs(yc[i]));
  for (size_t i = 0; i < yc.size(); ++i)
    max_rel = std::max(max_rel, std::abs(yc[i] - (2.5 * y1[i] - 1.25 * y2[i])) / scale);
  CHECK(max_rel < 1e-6);
}

TEST_CASE("prefilter is zero phase") {
  PreprocessConfig cfg;
  const double fs = 400.0;
  // band-limited input: sum of in-band tones
  auto x = sine(6.0, fs, 8.0);
  auto x2 = sine(17.0, fs, 8.0, 0.5);
  for (size_t i = 0; i < x.size(); ++i) x[i] += x2[i];
  auto y = prefilter(x, fs, cfg);

  // cross-correlation peak lag must be 0
  const int max_lag = 40;
  const int n = static_cast<int>(x.size());
  double best = -1e300;
  int best_lag = -999;
  for (int lag = -max_lag; lag <= max_lag; ++lag) {
    double c = 0.0;
    for (int i = max_lag; i + max_lag < n; ++i) c += x[i] * y[i + lag];
    if (c > best) {
      best = c;
      best_lag = lag;
    }
  }
  CHECK(best_lag == 0);
}

TEST_CASE("prefilter input validation") {
  PreprocessConfig cfg;
  std::vector<double> x(1000, 0.0);
  CHECK_THROWS_AS(prefilter(x, 150.0, cfg), Error); // fs too low for band_hi=100
  x[5] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(prefilter(x, 400.0, cfg), Error);
}

TEST_CASE("resample length arithmetic") {
  std::vector<double> x(3500, 0.25);
  auto y = resample(x, 500.0, 400.0);
  CHECK(y.size() == 2800);

  // floor(n * fs_out / fs_in) across assorted rates
  std::vector<double> z(999, 1.0);
  CHECK(resample(z, 250.0, 400.0).size() == static_cast<size_t>(999.0 * 400.0 / 250.0));
  CHECK(resample(z, 360.0, 400.0).size() == static_cast<size_t>(std::floor(999.0 * 400.0 / 360.0)));
  CHECK_THROWS_AS(resample(z, 0.0, 400.0), Error);
}

TEST_CASE("resample preserves DC") {
  std::vector<double> x(2000, 1.0);
  auto y = resample(x, 500.0, 400.0);
  for (size_t i = 10; i + 10 < y.size(); ++i) CHECK(std::abs(y[i] - 1.0) < 1e-6);
}

TEST_CASE("resample preserves a 10 Hz sine (analytic oracle)") {
  auto x = sine(10.0, 500.0, 7.0);
  auto y = resample(x, 500.0, 400.0);
  // RMS of a unit sine is 1/sqrt(2); skip 10 edge samples
  double ss = 0.0;
  int n = 0;
  for (size_t i = 10; i + 10 < y.size(); ++i, ++n) ss += y[i] * y[i];
  const double rms = std::sqrt(ss / n);
  CHECK(std::abs(rms - 1.0 / std::sqrt(2.0)) < 0.01 / std::sqrt(2.0));
}

TEST_CASE("resample round trip on band-limited signal") {
  auto x = sine(12.0, 400.0, 6.0);
  auto x2 = sine(37.0, 400.0, 6.0, 0.6);
  for (size_t i = 0; i < x.size(); ++i) x[i] += x2[i]; // < 40 Hz content
  auto up = resample(x, 400.0, 500.0);
  auto back = resample(up, 500.0, 400.0);
  REQUIRE(back.size() == x.size());
  double err = 0.0, ref = 0.0;
  for (size_t i = 10; i + 10 < x.size(); ++i) {
    err += (back[i] - x[i]) * (back[i] - x[i]);
    ref += x[i] * x[i];
  }
  CHECK(std::sqrt(err / ref) < 0.01);
}

TEST_CASE("preprocess_record shape and lead selection") {
  PreprocessConfig cfg;
  auto rec = twelve_lead_record(500.0, 10.0);
  EcgTensor t = preprocess_record(rec, cfg);
  CHECK(t.values.rows() == 2800);
  CHECK(t.values.cols() == 8);
  CHECK(t.record_id == 77);
  CHECK(t.values.allFinite());

  // too short: 5 s at 400 Hz = 2000 < 2800
  auto short_rec = twelve_lead_record(400.0, 5.0);
  CHECK_THROWS_WITH_AS(preprocess_record(short_rec, cfg), doctest::Contains("too-short"), Error);

  // missing lead
  auto missing = twelve_lead_record(500.0, 10.0);
  missing.leads[8] = "X3"; // was V3
  CHECK_THROWS_WITH_AS(preprocess_record(missing, cfg), doctest::Contains("missing-lead"), Error);
}

TEST_CASE("preprocess_record is deterministic (center crop)") {
  PreprocessConfig cfg;
  auto rec = twelve_lead_record(500.0, 10.0);
  EcgTensor a = preprocess_record(rec, cfg);
  EcgTensor b = preprocess_record(rec, cfg);
  CHECK((a.values - b.values).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("random_crop") {
  Rng rng(5);
  Eigen::MatrixXf x(4000, 8);
  for (int t = 0; t < 4000; ++t)
    for (int l = 0; l < 8; ++l) x(t, l) = static_cast<float>(t * 10 + l);

  auto c = random_crop(x, 2800, rng);
  CHECK(c.rows() == 2800);
  CHECK(c.cols() == 8);
  // a contiguous slice, identical across leads: row t equals source row start+t
  const int start = static_cast<int>(c(0, 0)) / 10;
  for (int l = 0; l < 8; ++l) CHECK(c(100, l) == x(start + 100, l));

  // T == crop_len is the identity
  Rng rng2(6);
  Eigen::MatrixXf small = x.topRows(2800);
  auto ident = random_crop(small, 2800, rng2);
  CHECK((ident - small).cwiseAbs().maxCoeff() == 0.0f);

  // same seed, same slice
  Rng r1(77), r2(77);
  auto c1 = random_crop(x, 2800, r1);
  auto c2 = random_crop(x, 2800, r2);
  CHECK((c1 - c2).cwiseAbs().maxCoeff() == 0.0f);

  CHECK_THROWS_AS(random_crop(small, 2900, rng), Error);

  // start index spans the full range [0, T-crop]
  Rng r3(123);
  int lo_seen = 1 << 30, hi_seen = -1;
  for (int k = 0; k < 400; ++k) {
    auto ck = random_crop(x, 3900, r3);
    const int s = static_cast<int>(ck(0, 0)) / 10;
    lo_seen = std::min(lo_seen, s);
    hi_seen = std::max(hi_seen, s);
  }
  CHECK(lo_seen == 0);
  CHECK(hi_seen == 100);
}

TEST_CASE("zero_mask") {
  Rng rng(9);
  Eigen::MatrixXf x = Eigen::MatrixXf::Constant(2800, 8, 1.0f);

  auto y = zero_mask(x, 0.1, 0.2, rng);
  for (int l = 0; l < 8; ++l) {
    int zeros = 0;
    int first = -1, last = -1;
    for (int t = 0; t < 2800; ++t)
      if (y(t, l) == 0.0f) {
        ++zeros;
        if (first < 0) first = t;
        last = t;
      }
    CHECK(zeros == 280);                 // exactly round(frac*T)
    CHECK(last - first + 1 == zeros);    // contiguous
  }

  auto ident = zero_mask(x, 0.0, 0.2, rng);
  CHECK((ident - x).cwiseAbs().maxCoeff() == 0.0f);

  CHECK_THROWS_AS(zero_mask(x, 0.5, 0.2, rng), Error);
}

TEST_CASE("zero_mask changes only the masked run") {
  Rng rng(31);
  Eigen::MatrixXf x(500, 3);
  for (int t = 0; t < 500; ++t)
    for (int l = 0; l < 3; ++l) x(t, l) = 1.0f + 0.001f * t + static_cast<float>(l);
  auto y = zero_mask(x, 0.25, 0.3, rng);
  for (int l = 0; l < 3; ++l) {
    int changed = 0;
    for (int t = 0; t < 500; ++t)
      if (y(t, l) != x(t, l)) {
        ++changed;
        CHECK(y(t, l) == 0.0f);
      }
    CHECK(changed == 125);
  }
}

TEST_CASE("make_view_pair") {
  AugmentConfig aug;
  aug.crop_len = 2800;
  aug.mask_frac_max = 0.0; // identity masks

  EcgTensor a, b;
  a.values = Eigen::MatrixXf::Random(2800, 8);
  a.record_id = 1;
  b.values = Eigen::MatrixXf::Random(2800, 8);
  b.record_id = 2;

  Rng rng(4);
  auto [va, vb] = make_view_pair(a, b, aug, rng);
  CHECK((va.values - a.values).cwiseAbs().maxCoeff() == 0.0f); // identity composition
  CHECK((vb.values - b.values).cwiseAbs().maxCoeff() == 0.0f);

  // longer inputs crop to crop_len; same seed gives identical views
  EcgTensor c, d;
  c.values = Eigen::MatrixXf::Random(3000, 8);
  d.values = Eigen::MatrixXf::Random(3000, 8);
  aug.mask_frac_max = 0.2;
  Rng r1(11), r2(11);
  auto [v1a, v1b] = make_view_pair(c, d, aug, r1);
  auto [v2a, v2b] = make_view_pair(c, d, aug, r2);
  CHECK(v1a.values.rows() == 2800);
  CHECK(v1b.values.rows() == 2800);
  CHECK((v1a.values - v2a.values).cwiseAbs().maxCoeff() == 0.0f);
  CHECK((v1b.values - v2b.values).cwiseAbs().maxCoeff() == 0.0f);
}
