#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cape/datamodel.hpp"
#include "cape/rng.hpp"

namespace cape::syn {

/// Acquisition-hardware signature applied to every record of a cohort.
struct DeviceArtifact {
  double gain = 1.0;
  double wander_amp_mv = 0.0;
  double wander_freq_hz = 0.3;
  double mains_amp_mv = 0.0;
  double mains_freq_hz = 50.0;
  double lowpass_knee_hz = 150.0;
  double quant_step_mv = 0.0;
};

/// One Gaussian wave component: amplitude, width, and offset from the
/// R-peak center.
struct WaveParams {
  double amp_mv = 0.0;
  double width_s = 0.01;
  double offset_s = 0.0;
};

struct Morphology {
  WaveParams p, q, r, s, t;
};

struct CohortSpec {
  uint16_t cohort_id = 0;
  uint16_t device_id = 0;
  std::string name;
  int n_patients = 1;
  int ecgs_min = 2, ecgs_max = 2;
  double age_mean = 55.0, age_sd = 15.0, age_lo = 18.0, age_hi = 95.0;
  double female_frac = 0.5;
  double health_severity = 0.5; // in [0,1], scales morphology variability
  DeviceArtifact device;
  double sampling_rate = 400.0;
  double duration_s = 8.0;
  uint64_t seed = 0;

  // Explicit physiological mappings (synthetic by design, all
  // configurable). Age enters through heart rate and T-wave shape; sex
  // through QRS/T scaling.
  double hr_at_40_bpm = 80.0;
  double hr_slope_per_year = -0.3;
  double hr_noise_sd_bpm = 2.5;
  double male_qrs_amp_factor = 1.12;
  double male_qrs_width_factor = 1.10;
  double male_t_amp_factor = 0.92;
  double t_amp_age_slope = -0.004;  // relative per year from age 55
  double t_width_age_slope = 0.002; // relative per year from age 55

  void validate() const;
};

/// Per-patient generative state; both ECGs of a patient share it.
struct PatientLatent {
  uint64_t patient_id = 0;
  double age = 0.0;
  data::Sex sex = data::Sex::unknown;
  double heart_rate_bpm = 0.0;
  Morphology waves;                       // cohort baseline jittered by severity
  std::array<double, 8> lead_scales{};    // per-patient signature
};

/// Cohort-baseline wave template shared by all patients.
Morphology baseline_morphology();

PatientLatent sample_patient(const CohortSpec& spec, Rng& rng);

data::EcgRecord synth_ecg(const PatientLatent& latent, const CohortSpec& spec, uint64_t record_id,
                          Rng& rng);

/// Generates the cohort and writes it as an ECGC container; returns the
/// opened store. Deterministic given spec.seed.
data::Store generate_cohort(const CohortSpec& spec, const std::filesystem::path& path);

/// Three cohorts that differ in device signature, demographics, and
/// health mix. Patient/record ids are globally unique across the bundle.
std::vector<CohortSpec> paperlike3(uint64_t seed, int n_patients = 300);

} // namespace cape::syn
