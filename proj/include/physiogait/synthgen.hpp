#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "physiogait/core.hpp"
#include "physiogait/ingest.hpp"
#include "physiogait/scdecomp.hpp"

namespace physiogait::synthgen {

/// Latent per-subject parameters. Cohort sampling places the identity-bearing
/// ones (resting HR, tonic level, gesture speed, HRV, SCR rate, wearing
/// orientation) on evenly spaced slots with bounded jitter, so any two
/// subjects differ by at least half a slot width in each of those dimensions
/// (see kMinSlotSeparation).
struct SubjectProfile {
  std::string subject_id;
  double resting_hr_bpm = 70.0;       // [55, 90]
  double hrv_sd_s = 0.02;             // beat interval jitter, seconds
  double ppg_systolic_width_s = 0.09; // Gaussian width of systolic wave
  double ppg_dicrotic_offset_s = 0.30;
  double ppg_dicrotic_amp = 0.35;     // relative to systolic amplitude
  double scr_rate_per_min = 3.0;      // resting spike rate
  double scr_amp_us = 0.3;            // typical SCR peak height, microsiemens
  double tau_rise_s = 0.7;
  double tau_decay_s = 3.0;           // always > tau_rise_s
  double tonic_level_us = 2.0;        // baseline skin conductance
  double gesture_speed_scale = 1.0;   // [0.7, 1.3]; duration divides by this
  double gesture_amp_scale = 1.0;     // [0.7, 1.3]
  // How the device sits on the wrist: yaw of the sensor frame about the
  // vertical, applied to every gesture's acceleration. Rotations preserve the
  // magnitude signal, so onset detection is orientation-blind while per-axis
  // views (images, features) leak the wearer.
  double orientation_rad = 0.0;       // [-0.7, 0.7]
  // Tremor texture: strap coupling and micro-movement differ per wearer, so
  // the accelerometer noise floor scales and smooths per subject. Texture is
  // present in every window independent of which gesture it holds.
  double acc_noise_scale = 1.0;       // [0.6, 1.6], multiplies cohort noise_sd
  double acc_noise_rho = 0.85;        // [0.75, 0.92], AR(1) smoothness
};

struct CohortSpec {
  int n_subjects = 8;
  int episodes_per_subject = 60;
  // Lead-in/tail leave room for estimators with warm-up (the breathing-rate
  // stream loses 15 s at each end) to still cover every gesture window.
  double rest_gap_min_s = 3.0;
  double lead_in_s = 20.0;
  double tail_s = 18.0;
  double noise_sd_acc_g = 0.012;
  double noise_sd_ppg = 0.04;
  double noise_sd_eda_us = 0.01;
  uint64_t seed = 42;
};

/// Everything the generator knows that downstream estimators must recover.
/// hr is the realized beat-to-beat rate (held between beats), not the latent
/// mean, so pulse detectors are scored against what was actually rendered.
struct GroundTruth {
  std::vector<GestureWindow> windows;       // sorted, disjoint, on 32 Hz grid
  SensorStream driver;                      // 4 Hz SCR driver (impulse train)
  std::vector<std::size_t> spike_samples;   // indices of nonzero driver bins
  SensorStream hr;                          // 4 Hz realized instantaneous HR
  SensorStream tonic;                       // 4 Hz noise-free tonic
  SensorStream phasic;                      // 4 Hz noise-free phasic
};

/// Guaranteed pairwise spacing of slotted profile parameters, as a fraction
/// of each parameter's sampling range divided by n_subjects.
inline constexpr double kMinSlotSeparation = 0.5;

inline constexpr int kNumGestures = 12;

const std::vector<std::string>& gesture_names();

std::vector<SubjectProfile> sample_profiles(const CohortSpec& spec, Rng& rng);

/// Renders one subject's session: ACC 32 Hz, PPG 64 Hz, EDA 4 Hz, TEMP 4 Hz.
/// Pass an rng already split per subject; two calls with equal profile, spec
/// and rng state produce bitwise-identical output.
std::pair<Recording, GroundTruth> render_recording(const SubjectProfile& profile,
                                                   const CohortSpec& spec,
                                                   Rng rng);

/// Cuts every channel of `rec` to the wall-clock span of `w` and stores the
/// slices in w.modality_slices.
void materialize_slices(const Recording& rec, GestureWindow& w);

struct CohortData {
  std::vector<SubjectProfile> profiles;
  std::vector<Recording> recordings;
  std::vector<GroundTruth> truths;
};

/// Profiles come from root.split(1), subject i from root.split(1000 + i),
/// where root = Rng(spec.seed) with no draws taken; rendering therefore
/// parallelizes over subjects without changing results.
CohortData render_cohort(const CohortSpec& spec);

}  // namespace physiogait::synthgen
