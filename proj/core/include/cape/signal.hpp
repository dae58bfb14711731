#pragma once

#include <Eigen/Core>
#include <complex>
#include <span>
#include <string>
#include <vector>

#include "cape/datamodel.hpp"
#include "cape/rng.hpp"

namespace cape::sig {

struct PreprocessConfig {
  double band_lo = 0.5;   // Hz
  double band_hi = 100.0; // Hz
  double mains = 50.0;    // Hz, 50 or 60
  double target_rate = 400.0;
  int window_len = 2800;
  std::vector<std::string> lead_subset = {"I", "II", "V1", "V2", "V3", "V4", "V5", "V6"};

  void validate() const;
};

/// Preprocessed fixed-shape input, [window_len x n_leads], millivolts.
struct EcgTensor {
  Eigen::MatrixXf values;
  uint64_t record_id = 0;
};

struct AugmentConfig {
  int crop_len = 2800;
  double mask_frac_max = 0.2; // mask fraction drawn uniformly in [0, max] per view
};

/// One second-order section, coefficients normalized so a0 = 1.
struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0, a1 = 0, a2 = 0;
};
using Cascade = std::vector<Biquad>;

Cascade design_butter_lowpass(int order, double fc, double fs);
Cascade design_butter_highpass(int order, double fc, double fs);
Biquad design_notch(double f0, double quality, double fs);

/// H(e^{i 2 pi f / fs}) of the cascade.
std::complex<double> cascade_response(const Cascade& c, double f, double fs);

/// Zero-phase (forward-backward) filtering with odd-reflection padding and
/// steady-state initial conditions per section.
std::vector<double> filtfilt(const Cascade& c, std::span<const double> x, int pad_len);

/// Bandpass (band_lo..band_hi, 4th-order Butterworth edges) plus mains
/// notch (Q=30), applied forward-backward. Same length as input.
std::vector<double> prefilter(std::span<const double> x, double fs, const PreprocessConfig& cfg);

/// Polyphase rational resampler (Kaiser beta=8.6, 32 taps per phase).
/// Output length is floor(n * fs_out / fs_in). Replicate edge padding.
std::vector<double> resample(std::span<const double> x, double fs_in, double fs_out);

/// Lead selection -> prefilter -> resample -> deterministic center crop.
EcgTensor preprocess_record(const data::EcgRecord& record, const PreprocessConfig& cfg);

/// Contiguous time slice [crop_len x L], start uniform on [0, T-crop_len].
Eigen::MatrixXf random_crop(const Eigen::MatrixXf& x, int crop_len, Rng& rng);

/// Per lead independently, one contiguous run of round(frac*T) samples set
/// to exactly zero. frac must be within [0, frac_max].
Eigen::MatrixXf zero_mask(const Eigen::MatrixXf& x, double frac, double frac_max, Rng& rng);

/// Two augmented views: zero_mask(random_crop(.)) with independent draws,
/// mask fraction ~ U[0, mask_frac_max] per view.
std::pair<EcgTensor, EcgTensor> make_view_pair(const EcgTensor& a, const EcgTensor& b,
                                               const AugmentConfig& aug, Rng& rng);

} // namespace cape::sig
