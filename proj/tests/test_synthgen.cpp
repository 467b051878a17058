#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "physiogait/physio.hpp"
#include "physiogait/synthgen.hpp"

using namespace physiogait;
using namespace physiogait::synthgen;

TEST_CASE("single-subject cohort is reproducible") {
  CohortSpec spec;
  spec.n_subjects = 1;
  spec.episodes_per_subject = 3;
  spec.seed = 5;
  auto a = render_cohort(spec);
  auto b = render_cohort(spec);
  REQUIRE(a.profiles.size() == 1);
  CHECK(a.profiles[0].resting_hr_bpm == b.profiles[0].resting_hr_bpm);
  CHECK(a.recordings[0].at(Channel::AccX).values ==
        b.recordings[0].at(Channel::AccX).values);
}

TEST_CASE("same seed gives identical profiles, different seeds differ") {
  CohortSpec spec;
  spec.n_subjects = 8;
  spec.episodes_per_subject = 1;
  Rng r1(42), r2(42), r3(43);
  auto p1 = sample_profiles(spec, r1);
  auto p2 = sample_profiles(spec, r2);
  auto p3 = sample_profiles(spec, r3);
  REQUIRE(p1.size() == 8);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(p1[i].resting_hr_bpm == p2[i].resting_hr_bpm);
    CHECK(p1[i].gesture_speed_scale == p2[i].gesture_speed_scale);
    CHECK(p1[i].orientation_rad == p2[i].orientation_rad);
    bool differs = p1[i].resting_hr_bpm != p3[i].resting_hr_bpm ||
                   p1[i].tonic_level_us != p3[i].tonic_level_us ||
                   p1[i].hrv_sd_s != p3[i].hrv_sd_s;
    CHECK(differs);
  }
}

TEST_CASE("slotted parameters keep subjects separated") {
  CohortSpec spec;
  spec.n_subjects = 8;
  Rng rng(7);
  auto profiles = sample_profiles(spec, rng);
  std::vector<double> hr;
  for (const auto& p : profiles) hr.push_back(p.resting_hr_bpm);
  std::sort(hr.begin(), hr.end());
  const double slot = (90.0 - 55.0) / 8.0;
  for (std::size_t i = 1; i < hr.size(); ++i)
    CHECK(hr[i] - hr[i - 1] >= kMinSlotSeparation * slot - 1e-9);
}

TEST_CASE("episode count and label range") {
  CohortSpec spec;
  spec.n_subjects = 2;
  spec.episodes_per_subject = 5;
  spec.seed = 11;
  auto cohort = render_cohort(spec);
  for (const auto& truth : cohort.truths) {
    REQUIRE(truth.windows.size() == 5);
    for (const auto& w : truth.windows) {
      CHECK(w.gesture_label >= 0);
      CHECK(w.gesture_label < 12);
      CHECK(w.end_sample > w.start_sample);
    }
    // sorted and disjoint
    for (std::size_t i = 1; i < truth.windows.size(); ++i)
      CHECK(truth.windows[i].start_sample >= truth.windows[i - 1].end_sample);
  }
}

TEST_CASE("degenerate noise and spike rate give pure tonic EDA") {
  CohortSpec spec;
  spec.n_subjects = 1;
  spec.episodes_per_subject = 2;
  spec.noise_sd_acc_g = 0.0;
  spec.noise_sd_ppg = 0.0;
  spec.noise_sd_eda_us = 0.0;
  spec.seed = 3;
  Rng rng(spec.seed);
  auto profiles = sample_profiles(spec, rng);
  profiles[0].scr_rate_per_min = 0.0;
  profiles[0].acc_noise_scale = 0.0;
  auto [rec, truth] = render_recording(profiles[0], spec, Rng(77));

  for (double v : truth.phasic.values) CHECK(v == doctest::Approx(0.0));
  CHECK(truth.spike_samples.empty());
  const auto& eda = rec.at(Channel::Eda);
  for (std::size_t i = 0; i < eda.size(); ++i)
    CHECK(eda.values[i] == doctest::Approx(truth.tonic.values[i]).epsilon(1e-9));
}

TEST_CASE("resting heart rate is recovered from the rendered PPG") {
  CohortSpec spec;
  spec.n_subjects = 1;
  spec.episodes_per_subject = 0;
  Rng rng(21);
  auto profiles = sample_profiles(spec, rng);
  profiles[0].resting_hr_bpm = 60.0;
  profiles[0].hrv_sd_s = 0.005;
  auto [rec, truth] = render_recording(profiles[0], spec, Rng(9));
  PulseTrain pulses = detect_pulses(rec.at(Channel::Ppg));
  REQUIRE(pulses.ibis_s.size() > 10);
  double mean = 0.0;
  for (double v : pulses.ibis_s) mean += v;
  mean /= static_cast<double>(pulses.ibis_s.size());
  CHECK(mean == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("ground-truth hr stays near the profile's resting rate") {
  CohortSpec spec;
  spec.n_subjects = 1;
  spec.episodes_per_subject = 4;
  Rng rng(31);
  auto profiles = sample_profiles(spec, rng);
  auto [rec, truth] = render_recording(profiles[0], spec, Rng(13));
  REQUIRE(!truth.hr.empty());
  double mean = 0.0;
  for (double v : truth.hr.values) mean += v;
  mean /= static_cast<double>(truth.hr.size());
  CHECK(mean >= profiles[0].resting_hr_bpm - 1.0);
  CHECK(mean <= profiles[0].resting_hr_bpm + 4.0);  // activity coupling
}

TEST_CASE("channel rates follow the device layout") {
  CohortSpec spec;
  spec.n_subjects = 1;
  spec.episodes_per_subject = 1;
  auto cohort = render_cohort(spec);
  const auto& rec = cohort.recordings[0];
  CHECK(rec.at(Channel::AccX).sample_rate_hz == doctest::Approx(32.0));
  CHECK(rec.at(Channel::Ppg).sample_rate_hz == doctest::Approx(64.0));
  CHECK(rec.at(Channel::Eda).sample_rate_hz == doctest::Approx(4.0));
  CHECK(rec.at(Channel::Temp).sample_rate_hz == doctest::Approx(4.0));
}

TEST_CASE("gesture windows carry elevated in-window acceleration energy") {
  CohortSpec spec;
  spec.n_subjects = 1;
  spec.episodes_per_subject = 6;
  spec.seed = 17;
  auto cohort = render_cohort(spec);
  const auto& acc = cohort.recordings[0].at(Channel::AccX);
  const auto& truth = cohort.truths[0];

  auto var_of = [&](std::size_t lo, std::size_t hi) {
    double mean = 0.0, var = 0.0;
    for (std::size_t i = lo; i < hi; ++i) mean += acc.values[i];
    mean /= static_cast<double>(hi - lo);
    for (std::size_t i = lo; i < hi; ++i)
      var += (acc.values[i] - mean) * (acc.values[i] - mean);
    return var / static_cast<double>(hi - lo);
  };

  // rest segment: before the first window
  double rest_var = var_of(0, truth.windows[0].start_sample);
  for (const auto& w : truth.windows)
    CHECK(var_of(w.start_sample, w.end_sample) > 3.0 * rest_var);
}

TEST_CASE("materialize_slices cuts every channel to the window span") {
  CohortSpec spec;
  spec.n_subjects = 1;
  spec.episodes_per_subject = 2;
  spec.seed = 23;
  auto cohort = render_cohort(spec);
  GestureWindow w = cohort.truths[0].windows[0];
  materialize_slices(cohort.recordings[0], w);
  REQUIRE(w.modality_slices.count(Channel::AccX) == 1);
  REQUIRE(w.modality_slices.count(Channel::Ppg) == 1);
  REQUIRE(w.modality_slices.count(Channel::Eda) == 1);
  const auto& acc = cohort.recordings[0].at(Channel::AccX);
  const double t0 = acc.time_at(w.start_sample);
  const double span = static_cast<double>(w.length()) / 32.0;
  for (const auto& [ch, s] : w.modality_slices) {
    CHECK(std::abs(s.start_time_s - t0) <= 1.0 / s.sample_rate_hz + 1e-9);
    CHECK(std::abs(s.duration_s() - span) <= 2.0 / s.sample_rate_hz);
  }
}

TEST_CASE("driver spikes rise during gestures") {
  CohortSpec spec;
  spec.n_subjects = 1;
  spec.episodes_per_subject = 20;
  spec.seed = 29;
  auto cohort = render_cohort(spec);
  const auto& truth = cohort.truths[0];
  REQUIRE(!truth.spike_samples.empty());
  // each spike index lands inside the driver stream
  for (std::size_t idx : truth.spike_samples) {
    REQUIRE(idx < truth.driver.size());
    CHECK(truth.driver.values[idx] > 0.0);
  }
}
