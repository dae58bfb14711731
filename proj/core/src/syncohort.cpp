#include "cape/syncohort.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cape/parallel.hpp"

namespace cape::syn {

namespace {

using std::numbers::pi;

// Fixed 8x5 mixing of the P/Q/R/S/T source components into leads
// I, II, V1..V6. Rough precordial progression: V1 dominated by the
// S component, V5/V6 by R, limb leads in between.
constexpr double kLeadMix[8][5] = {
    // P     Q      R      S      T
    {0.7, 0.8, 0.75, 0.55, 0.70}, // I
    {1.0, 1.0, 1.00, 0.70, 1.00}, // II
    {0.3, 0.2, 0.25, 1.60, -0.4}, // V1
    {0.4, 0.3, 0.45, 1.40, 0.55}, // V2
    {0.5, 0.5, 0.70, 1.00, 0.85}, // V3
    {0.6, 0.7, 1.00, 0.70, 1.00}, // V4
    {0.7, 0.9, 1.10, 0.40, 0.90}, // V5
    {0.7, 0.9, 1.00, 0.30, 0.80}, // V6
};

const char* kLeadNames[8] = {"I", "II", "V1", "V2", "V3", "V4", "V5", "V6"};

void render_wave(std::vector<double>& dst, double beat_t, const WaveParams& w, double fs) {
  const double center = beat_t + w.offset_s;
  const double half_support = 4.0 * w.width_s;
  const int lo = std::max(0, static_cast<int>(std::ceil((center - half_support) * fs)));
  const int hi = std::min(static_cast<int>(dst.size()) - 1,
                          static_cast<int>(std::floor((center + half_support) * fs)));
  const double inv2w2 = 1.0 / (2.0 * w.width_s * w.width_s);
  for (int i = lo; i <= hi; ++i) {
    const double dt = static_cast<double>(i) / fs - center;
    dst[i] += w.amp_mv * std::exp(-dt * dt * inv2w2);
  }
}

WaveParams jitter_wave(const WaveParams& base, double severity, Rng& rng) {
  // Multiplicative jitter on amplitude/width, additive on offset; all
  // scaled by health_severity so severity 0 reproduces the baseline
  // exactly.
  WaveParams w = base;
  w.amp_mv *= std::exp(0.25 * severity * rng.normal());
  w.width_s *= std::exp(0.20 * severity * rng.normal());
  w.offset_s += 0.012 * severity * rng.normal();
  return w;
}

} // namespace

void CohortSpec::validate() const {
  require(n_patients >= 1, "cohort: n_patients must be >= 1");
  require(ecgs_min >= 1 && ecgs_max >= ecgs_min, "cohort: bad ecgs_per_patient range");
  require(age_lo >= 18.0 && age_hi <= 100.0 && age_lo < age_hi, "cohort: age clip range must lie in [18, 100]");
  require(health_severity >= 0.0 && health_severity <= 1.0, "cohort: severity must be in [0, 1]");
  require(female_frac >= 0.0 && female_frac <= 1.0, "cohort: sex ratio must be in [0, 1]");
  require(device.gain > 0.0, "cohort: device gain must be positive");
  require(device.wander_amp_mv >= 0.0 && device.mains_amp_mv >= 0.0 && device.quant_step_mv >= 0.0,
          "cohort: device amplitudes must be non-negative");
  require(sampling_rate > 0.0 && duration_s > 0.0, "cohort: rate and duration must be positive");
}

Morphology baseline_morphology() {
  Morphology m;
  m.p = {0.12, 0.025, -0.18};
  m.q = {-0.10, 0.010, -0.035};
  m.r = {1.10, 0.012, 0.0};
  m.s = {-0.18, 0.010, 0.035};
  m.t = {0.30, 0.060, 0.28};
  return m;
}

PatientLatent sample_patient(const CohortSpec& spec, Rng& rng) {
  PatientLatent p;
  p.age = std::clamp(rng.normal(spec.age_mean, spec.age_sd), spec.age_lo, spec.age_hi);
  p.sex = rng.uniform() < spec.female_frac ? data::Sex::female : data::Sex::male;
  const double hr = spec.hr_at_40_bpm + spec.hr_slope_per_year * (p.age - 40.0) +
                    spec.hr_noise_sd_bpm * rng.normal();
  p.heart_rate_bpm = std::clamp(hr, 40.0, 160.0);

  const Morphology base = baseline_morphology();
  p.waves.p = jitter_wave(base.p, spec.health_severity, rng);
  p.waves.q = jitter_wave(base.q, spec.health_severity, rng);
  p.waves.r = jitter_wave(base.r, spec.health_severity, rng);
  p.waves.s = jitter_wave(base.s, spec.health_severity, rng);
  p.waves.t = jitter_wave(base.t, spec.health_severity, rng);

  for (auto& s : p.lead_scales) s = std::exp(0.04 * rng.normal());
  return p;
}

data::EcgRecord synth_ecg(const PatientLatent& latent, const CohortSpec& spec, uint64_t record_id,
                          Rng& rng) {
  const double fs = spec.sampling_rate;
  const int n = static_cast<int>(std::llround(spec.duration_s * fs));

  // Sex and age modifiers are applied here, not stored in the latent, so
  // the latent template stays the severity-jittered cohort baseline.
  Morphology waves = latent.waves;
  const double age_delta = latent.age - 55.0;
  if (latent.sex == data::Sex::male) {
    waves.q.amp_mv *= spec.male_qrs_amp_factor;
    waves.r.amp_mv *= spec.male_qrs_amp_factor;
    waves.s.amp_mv *= spec.male_qrs_amp_factor;
    waves.q.width_s *= spec.male_qrs_width_factor;
    waves.r.width_s *= spec.male_qrs_width_factor;
    waves.s.width_s *= spec.male_qrs_width_factor;
    waves.t.amp_mv *= spec.male_t_amp_factor;
  }
  waves.t.amp_mv *= std::max(0.2, 1.0 + spec.t_amp_age_slope * age_delta);
  waves.t.width_s *= std::max(0.5, 1.0 + spec.t_width_age_slope * age_delta);

  // Beat times with +-3% RR jitter.
  const double rr_mean = 60.0 / latent.heart_rate_bpm;
  std::vector<double> beats;
  double t = rr_mean * rng.uniform(0.3, 0.7);
  while (t < spec.duration_s + 0.5) {
    beats.push_back(t);
    t += rr_mean * (1.0 + 0.03 * rng.uniform(-1.0, 1.0));
  }

  // Per-record electrode placement variation: a small overall amplitude
  // scale shared by all leads, so two ECGs of one patient stay closer
  // than ECGs of different patients.
  const double placement_scale = std::exp(0.03 * rng.normal());

  // Render the five source components once, then mix into leads.
  const WaveParams* comps[5] = {&waves.p, &waves.q, &waves.r, &waves.s, &waves.t};
  std::array<std::vector<double>, 5> sources;
  for (int c = 0; c < 5; ++c) {
    sources[c].assign(n, 0.0);
    for (double beat : beats) render_wave(sources[c], beat, *comps[c], fs);
  }

  const DeviceArtifact& dev = spec.device;
  const double wander_phase = rng.uniform(0.0, 2.0 * pi);
  const double mains_phase = rng.uniform(0.0, 2.0 * pi);
  const double lp_alpha = 1.0 - std::exp(-2.0 * pi * dev.lowpass_knee_hz / fs);

  data::EcgRecord rec;
  rec.record_id = record_id;
  rec.patient_id = latent.patient_id;
  rec.cohort_id = spec.cohort_id;
  rec.device_id = spec.device_id;
  rec.age = static_cast<float>(latent.age);
  rec.sex = latent.sex;
  rec.sampling_rate = static_cast<float>(fs);
  rec.leads.assign(kLeadNames, kLeadNames + 8);
  rec.samples.resize(8, n);

  std::vector<double> lead(n);
  for (int l = 0; l < 8; ++l) {
    for (int i = 0; i < n; ++i) {
      double physio = 0.0;
      for (int c = 0; c < 5; ++c) physio += kLeadMix[l][c] * sources[c][i];
      physio *= latent.lead_scales[l] * placement_scale;

      const double ts = static_cast<double>(i) / fs;
      double v = dev.gain * physio;
      v += dev.wander_amp_mv * std::sin(2.0 * pi * dev.wander_freq_hz * ts + wander_phase);
      v += dev.mains_amp_mv * std::sin(2.0 * pi * dev.mains_freq_hz * ts + mains_phase);
      lead[i] = v;
    }
    // Single-pole lowpass at the device knee, then quantization.
    double y = lead[0];
    for (int i = 0; i < n; ++i) {
      y += lp_alpha * (lead[i] - y);
      double q = y;
      if (dev.quant_step_mv > 0.0)
        q = static_cast<double>(std::llround(q / dev.quant_step_mv)) * dev.quant_step_mv;
      rec.samples(l, i) = static_cast<float>(q);
    }
  }
  return rec;
}

data::Store generate_cohort(const CohortSpec& spec, const std::filesystem::path& path) {
  spec.validate();

  struct PatientJob {
    PatientLatent latent;
    int n_ecgs = 0;
    std::vector<data::EcgRecord> records;
  };
  std::vector<PatientJob> jobs(spec.n_patients);

  // Ids are globally unique as long as cohort_id is unique in the bundle.
  const uint64_t patient_base = static_cast<uint64_t>(spec.cohort_id) * 1000000ull;
  const uint64_t record_base = static_cast<uint64_t>(spec.cohort_id) * 100000000ull;

  // Per-patient streams derived from (seed, patient ordinal) keep the
  // output independent of scheduling.
  std::vector<uint64_t> record_offset(spec.n_patients, 0);
  {
    uint64_t next = 0;
    for (int i = 0; i < spec.n_patients; ++i) {
      Rng rng(mix_seed({spec.seed, 0x70617469656e74ull, static_cast<uint64_t>(i)}));
      jobs[i].latent = sample_patient(spec, rng);
      jobs[i].latent.patient_id = patient_base + static_cast<uint64_t>(i);
      jobs[i].n_ecgs = spec.ecgs_min +
                       static_cast<int>(rng.uniform_int(static_cast<uint64_t>(spec.ecgs_max - spec.ecgs_min) + 1));
      record_offset[i] = next;
      next += static_cast<uint64_t>(jobs[i].n_ecgs);
    }
  }

  parallel_for(jobs.size(), [&](size_t i) {
    auto& job = jobs[i];
    job.records.reserve(job.n_ecgs);
    for (int e = 0; e < job.n_ecgs; ++e) {
      Rng rng(mix_seed({spec.seed, 0x65636700ull, record_offset[i] + static_cast<uint64_t>(e)}));
      job.records.push_back(synth_ecg(job.latent, spec, record_base + record_offset[i] + e, rng));
    }
  });

  std::vector<data::EcgRecord> all;
  for (auto& job : jobs)
    for (auto& r : job.records) all.push_back(std::move(r));
  data::write_store(all, path);
  return data::open_store(path);
}

std::vector<CohortSpec> paperlike3(uint64_t seed, int n_patients) {
  // Three cohorts sharing the physiological model but differing in
  // demographics, health mix, and above all device signature: distinct
  // gains, mains leakage at 50 vs 60 Hz, different analog bandwidth and
  // quantization. The 60 Hz leakage survives the default 50 Hz notch.
  std::vector<CohortSpec> bundle(3);

  CohortSpec& a = bundle[0];
  a.cohort_id = 0;
  a.device_id = 0;
  a.name = "alpha";
  a.n_patients = n_patients;
  a.ecgs_min = 2;
  a.ecgs_max = 4;
  a.age_mean = 58;
  a.age_sd = 14;
  a.female_frac = 0.50;
  a.health_severity = 0.7;
  a.device = {1.0, 0.05, 0.25, 0.03, 50.0, 150.0, 0.005};
  a.sampling_rate = 500.0;
  a.seed = mix_seed({seed, 0});

  CohortSpec& b = bundle[1];
  b.cohort_id = 1;
  b.device_id = 1;
  b.name = "bravo";
  b.n_patients = n_patients;
  b.ecgs_min = 2;
  b.ecgs_max = 4;
  b.age_mean = 52;
  b.age_sd = 16;
  b.female_frac = 0.61;
  b.health_severity = 0.3;
  b.device = {1.6, 0.15, 0.33, 0.12, 60.0, 40.0, 0.02};
  b.sampling_rate = 400.0;
  b.seed = mix_seed({seed, 1});

  CohortSpec& c = bundle[2];
  c.cohort_id = 2;
  c.device_id = 2;
  c.name = "charlie";
  c.n_patients = n_patients;
  c.ecgs_min = 2;
  c.ecgs_max = 4;
  c.age_mean = 54;
  c.age_sd = 12;
  c.female_frac = 0.44;
  c.health_severity = 0.4;
  c.device = {0.6, 0.02, 0.40, 0.0, 50.0, 100.0, 0.01};
  c.sampling_rate = 250.0;
  c.seed = mix_seed({seed, 2});

  return bundle;
}

} // namespace cape::syn
