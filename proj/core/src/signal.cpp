#include "cape/signal.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace cape::sig {

namespace {

using std::numbers::pi;
using cd = std::complex<double>;

// ---------------------------------------------------------------------------
// IIR design: Butterworth poles via bilinear transform, paired into biquads.

struct ZpkSection {
  // One conjugate pole pair (or a single real pole) with its zeros in z.
  std::vector<cd> zeros, poles;
};

Cascade sections_to_biquads(const std::vector<ZpkSection>& sections, double gain) {
  Cascade out;
  bool first = true;
  for (const auto& s : sections) {
    auto poly = [](const std::vector<cd>& roots) {
      // (z - r0)(z - r1) -> z^2 + c1 z + c2, real by conjugate pairing
      if (roots.size() == 2) {
        cd c1 = -(roots[0] + roots[1]);
        cd c2 = roots[0] * roots[1];
        return std::array<double, 3>{1.0, c1.real(), c2.real()};
      }
      return std::array<double, 3>{1.0, -roots[0].real(), 0.0};
    };
    auto b = poly(s.zeros);
    auto a = poly(s.poles);
    Biquad q;
    double g = first ? gain : 1.0;
    first = false;
    q.b0 = g * b[0];
    q.b1 = g * b[1];
    q.b2 = g * b[2];
    q.a1 = a[1];
    q.a2 = a[2];
    out.push_back(q);
  }
  return out;
}

cd bilinear(cd s) { return (1.0 + s) / (1.0 - s); } // with fs-normalized prewarp folded into s

Cascade design_butter(int order, double fc, double fs, bool highpass) {
  require(order >= 1, "filter: order must be >= 1");
  require(fc > 0 && fc < fs / 2, "filter: cutoff must be inside (0, fs/2)");
  const double warped = std::tan(pi * fc / fs); // analog prototype cutoff

  // Prototype poles on the unit circle, left half-plane; transform to
  // the requested edge, then map through the bilinear transform.
  const cd zero_z = highpass ? cd(1.0, 0.0) : cd(-1.0, 0.0);
  auto map_pole = [&](cd p) { return bilinear(highpass ? warped / p : warped * p); };

  std::vector<ZpkSection> sections;
  for (int k = 0; k < order / 2; ++k) {
    const double theta = pi / 2.0 + pi * (2.0 * k + 1.0) / (2.0 * order);
    const cd p(std::cos(theta), std::sin(theta));
    ZpkSection s;
    s.poles = {map_pole(p), map_pole(std::conj(p))};
    s.zeros = {zero_z, zero_z};
    sections.push_back(std::move(s));
  }
  if (order % 2 == 1) {
    ZpkSection s;
    s.poles = {map_pole(cd(-1.0, 0.0))};
    s.zeros = {zero_z};
    sections.push_back(std::move(s));
  }

  Cascade c = sections_to_biquads(sections, 1.0);
  // Normalize overall gain at the reference frequency.
  double fref = highpass ? fs / 2 : 0.0;
  double g = std::abs(cascade_response(c, fref, fs));
  require(g > 0, "filter: degenerate design");
  c.front().b0 /= g;
  c.front().b1 /= g;
  c.front().b2 /= g;
  return c;
}

// Direct-form II transposed, single section.
void biquad_forward(const Biquad& q, std::span<const double> x, std::vector<double>& y, double z1_init,
                    double z2_init) {
  y.resize(x.size());
  double z1 = z1_init, z2 = z2_init;
  for (size_t n = 0; n < x.size(); ++n) {
    double out = q.b0 * x[n] + z1;
    z1 = q.b1 * x[n] - q.a1 * out + z2;
    z2 = q.b2 * x[n] - q.a2 * out;
    y[n] = out;
  }
}

// Steady-state state for a unit step, scaled by the first sample at the
// call site; removes startup transients the way scipy's lfilter_zi does.
std::pair<double, double> biquad_zi(const Biquad& q) {
  const double denom = 1.0 + q.a1 + q.a2;
  if (std::abs(denom) < 1e-300) return {0.0, 0.0};
  const double k = (q.b0 + q.b1 + q.b2) / denom; // H(z=1)
  const double z2 = q.b2 - q.a2 * k;
  const double z1 = k - q.b0;
  return {z1, z2};
}

std::vector<double> cascade_pass(const Cascade& c, std::vector<double> x) {
  std::vector<double> y;
  for (const auto& q : c) {
    auto [z1, z2] = biquad_zi(q);
    const double x0 = x.empty() ? 0.0 : x.front();
    biquad_forward(q, x, y, z1 * x0, z2 * x0);
    x.swap(y);
  }
  return x;
}

// ---------------------------------------------------------------------------
// Kaiser window helpers for the polyphase resampler.

double bessel_i0(double x) {
  // Power series; converges quickly for the beta values used here.
  double sum = 1.0, term = 1.0;
  const double half_x = x / 2.0;
  for (int k = 1; k < 64; ++k) {
    term *= (half_x / k) * (half_x / k);
    sum += term;
    if (term < 1e-18 * sum) break;
  }
  return sum;
}

// Reduce fs_out / fs_in to a small rational L/M.
std::pair<int64_t, int64_t> rational_ratio(double fs_out, double fs_in) {
  require(fs_in > 0 && fs_out > 0, "resample: rates must be positive");
  // Continued-fraction approximation with bounded denominator.
  const double target = fs_out / fs_in;
  int64_t best_num = 1, best_den = 1;
  double best_err = std::abs(target - 1.0);
  int64_t p0 = 0, q0 = 1, p1 = 1, q1 = 0;
  double x = target;
  for (int it = 0; it < 64; ++it) {
    int64_t a = static_cast<int64_t>(std::floor(x));
    int64_t p2 = a * p1 + p0, q2 = a * q1 + q0;
    if (q2 > 4096 || p2 > 4096) break;
    if (q2 > 0) {
      double err = std::abs(target - static_cast<double>(p2) / static_cast<double>(q2));
      if (err < best_err) {
        best_err = err;
        best_num = p2;
        best_den = q2;
      }
      if (err < 1e-12) break;
    }
    p0 = p1;
    q0 = q1;
    p1 = p2;
    q1 = q2;
    double frac = x - static_cast<double>(a);
    if (frac < 1e-15) break;
    x = 1.0 / frac;
  }
  require(best_err <= 1e-9 * target,
          "resample: rate ratio not representable as a small rational: " + std::to_string(target));
  return {best_num, best_den};
}

} // namespace

void PreprocessConfig::validate() const {
  require(band_lo > 0 && band_lo < band_hi, "preprocess: need 0 < band_lo < band_hi");
  require(band_hi < target_rate / 2, "preprocess: band_hi must be below target Nyquist");
  require(mains > band_lo && mains < band_hi, "preprocess: mains must lie inside the passband");
  require(window_len > 0, "preprocess: window_len must be positive");
  require(!lead_subset.empty(), "preprocess: lead subset is empty");
}

Cascade design_butter_lowpass(int order, double fc, double fs) { return design_butter(order, fc, fs, false); }

Cascade design_butter_highpass(int order, double fc, double fs) { return design_butter(order, fc, fs, true); }

Biquad design_notch(double f0, double quality, double fs) {
  require(f0 > 0 && f0 < fs / 2, "filter: notch frequency must be inside (0, fs/2)");
  require(quality > 0, "filter: notch quality must be positive");
  const double w0 = 2.0 * pi * f0 / fs;
  const double alpha = std::sin(w0) / (2.0 * quality);
  const double a0 = 1.0 + alpha;
  Biquad q;
  q.b0 = 1.0 / a0;
  q.b1 = -2.0 * std::cos(w0) / a0;
  q.b2 = 1.0 / a0;
  q.a1 = -2.0 * std::cos(w0) / a0;
  q.a2 = (1.0 - alpha) / a0;
  return q;
}

std::complex<double> cascade_response(const Cascade& c, double f, double fs) {
  const cd z = std::exp(cd(0.0, -2.0 * pi * f / fs));
  cd h(1.0, 0.0);
  for (const auto& q : c) {
    cd num = q.b0 + q.b1 * z + q.b2 * z * z;
    cd den = 1.0 + q.a1 * z + q.a2 * z * z;
    h *= num / den;
  }
  return h;
}

std::vector<double> filtfilt(const Cascade& c, std::span<const double> x, int pad_len) {
  require(!x.empty(), "filter: empty input");
  const int n = static_cast<int>(x.size());
  pad_len = std::clamp(pad_len, 0, n - 1);

  // Odd reflection about the end points.
  std::vector<double> ext;
  ext.reserve(x.size() + 2 * pad_len);
  for (int i = pad_len; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (int i = 1; i <= pad_len; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

  ext = cascade_pass(c, std::move(ext));
  std::reverse(ext.begin(), ext.end());
  ext = cascade_pass(c, std::move(ext));
  std::reverse(ext.begin(), ext.end());

  return std::vector<double>(ext.begin() + pad_len, ext.begin() + pad_len + n);
}

std::vector<double> prefilter(std::span<const double> x, double fs, const PreprocessConfig& cfg) {
  cfg.validate();
  require(fs > 2.0 * cfg.band_hi, "prefilter: sampling rate too low for band_hi");
  for (double v : x) require(std::isfinite(v), "prefilter: non-finite input sample");

  Cascade cascade = design_butter_highpass(4, cfg.band_lo, fs);
  Cascade lp = design_butter_lowpass(4, cfg.band_hi, fs);
  cascade.insert(cascade.end(), lp.begin(), lp.end());
  cascade.push_back(design_notch(cfg.mains, 30.0, fs));

  // Generous padding keeps the low-frequency edge transients away from
  // the retained samples.
  const int pad = static_cast<int>(std::min<double>(static_cast<double>(x.size()) - 1, 2.0 * fs));
  return filtfilt(cascade, x, pad);
}

std::vector<double> resample(std::span<const double> x, double fs_in, double fs_out) {
  require(fs_in > 0 && fs_out > 0, "resample: rates must be positive");
  require(!x.empty(), "resample: empty input");
  const auto [up, down] = rational_ratio(fs_out, fs_in);
  const int64_t n_in = static_cast<int64_t>(x.size());
  const int64_t n_out = static_cast<int64_t>(
      std::floor(static_cast<double>(n_in) * fs_out / fs_in));
  if (up == down) return std::vector<double>(x.begin(), x.begin() + n_out);

  // Odd length keeps the group delay an integer number of input samples
  // (zero net shift); 32 taps per phase.
  const int taps_per_phase = 32;
  const int64_t n_taps = taps_per_phase * up + 1;
  const int64_t delay = (n_taps - 1) / 2;
  const double beta = 8.6;
  const double cutoff = 0.5 / static_cast<double>(std::max(up, down)); // cycles/sample at rate L*fs_in

  // Kaiser-windowed sinc, then per-phase normalization so DC passes
  // exactly.
  std::vector<double> h(n_taps);
  const double i0_beta = bessel_i0(beta);
  for (int64_t i = 0; i < n_taps; ++i) {
    const double m = static_cast<double>(i) - static_cast<double>(n_taps - 1) / 2.0;
    const double t = 2.0 * m / static_cast<double>(n_taps - 1); // in [-1, 1]
    const double window = bessel_i0(beta * std::sqrt(std::max(0.0, 1.0 - t * t))) / i0_beta;
    const double arg = 2.0 * cutoff * m;
    const double sinc = arg == 0.0 ? 1.0 : std::sin(pi * arg) / (pi * arg);
    h[i] = 2.0 * cutoff * sinc * window;
  }
  std::vector<double> phase_sum(up, 0.0);
  for (int64_t i = 0; i < n_taps; ++i) phase_sum[i % up] += h[i];
  for (int64_t i = 0; i < n_taps; ++i) h[i] /= phase_sum[i % up];

  std::vector<double> y(n_out);
  for (int64_t m = 0; m < n_out; ++m) {
    const int64_t center = m * down + delay; // index in the upsampled stream
    double acc = 0.0;
    // x_up[q] = x[q / up] when q % up == 0; edges replicate.
    int64_t q_lo = center - (n_taps - 1);
    int64_t q0 = q_lo + ((up - (q_lo % up)) % up + up) % up;
    for (int64_t q = q0; q <= center; q += up) {
      int64_t src = q / up;
      src = std::clamp<int64_t>(src, 0, n_in - 1);
      acc += h[center - q] * x[static_cast<size_t>(src)];
    }
    y[m] = acc;
  }
  return y;
}

EcgTensor preprocess_record(const data::EcgRecord& record, const PreprocessConfig& cfg) {
  cfg.validate();
  const int n_leads = static_cast<int>(cfg.lead_subset.size());

  std::vector<int> rows(n_leads, -1);
  for (int l = 0; l < n_leads; ++l) {
    for (size_t r = 0; r < record.leads.size(); ++r)
      if (record.leads[r] == cfg.lead_subset[l]) rows[l] = static_cast<int>(r);
    require(rows[l] >= 0, "missing-lead: record " + std::to_string(record.record_id) + " lacks lead " +
                              cfg.lead_subset[l]);
  }

  EcgTensor out;
  out.record_id = record.record_id;
  out.values.resize(cfg.window_len, n_leads);

  const int n = record.n_samples();
  std::vector<double> lead(n);
  for (int l = 0; l < n_leads; ++l) {
    for (int t = 0; t < n; ++t) lead[t] = static_cast<double>(record.samples(rows[l], t));
    std::vector<double> filtered = prefilter(lead, record.sampling_rate, cfg);
    std::vector<double> resampled = resample(filtered, record.sampling_rate, cfg.target_rate);
    const int m = static_cast<int>(resampled.size());
    require(m >= cfg.window_len, "too-short: record " + std::to_string(record.record_id) + " has " +
                                     std::to_string(m) + " samples at target rate, needs " +
                                     std::to_string(cfg.window_len));
    const int start = (m - cfg.window_len) / 2;
    for (int t = 0; t < cfg.window_len; ++t) {
      const double v = resampled[start + t];
      require(std::isfinite(v), "preprocess: non-finite output sample");
      out.values(t, l) = static_cast<float>(v);
    }
  }
  return out;
}

Eigen::MatrixXf random_crop(const Eigen::MatrixXf& x, int crop_len, Rng& rng) {
  const int t_in = static_cast<int>(x.rows());
  require(crop_len >= 1, "crop: crop_len must be positive");
  require(t_in >= crop_len, "crop: input length " + std::to_string(t_in) + " shorter than crop_len " +
                                std::to_string(crop_len));
  const int start = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(t_in - crop_len) + 1));
  return x.middleRows(start, crop_len);
}

Eigen::MatrixXf zero_mask(const Eigen::MatrixXf& x, double frac, double frac_max, Rng& rng) {
  require(frac >= 0.0 && frac <= frac_max, "mask: fraction " + std::to_string(frac) +
                                               " outside [0, " + std::to_string(frac_max) + "]");
  Eigen::MatrixXf out = x;
  const int t = static_cast<int>(x.rows());
  const int run = static_cast<int>(std::llround(frac * t));
  if (run == 0) return out;
  for (int l = 0; l < x.cols(); ++l) {
    const int start = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(t - run) + 1));
    out.col(l).segment(start, run).setZero();
  }
  return out;
}

std::pair<EcgTensor, EcgTensor> make_view_pair(const EcgTensor& a, const EcgTensor& b,
                                               const AugmentConfig& aug, Rng& rng) {
  auto view = [&](const EcgTensor& src) {
    EcgTensor v;
    v.record_id = src.record_id;
    Eigen::MatrixXf cropped = random_crop(src.values, aug.crop_len, rng);
    const double frac = rng.uniform(0.0, aug.mask_frac_max);
    v.values = zero_mask(cropped, frac, aug.mask_frac_max, rng);
    return v;
  };
  EcgTensor va = view(a);
  EcgTensor vb = view(b);
  return {std::move(va), std::move(vb)};
}

} // namespace cape::sig
