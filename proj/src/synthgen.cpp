#include "physiogait/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace physiogait::synthgen {

namespace {

constexpr double kAccRate = 32.0;
constexpr double kPpgRate = 64.0;
constexpr double kEdaRate = 4.0;
constexpr double kStartTime = 1600000000.0;
constexpr double kHalfWindowS = 1.25;  // ground-truth window = center ± 1.25 s

struct GestureTemplate {
  const char* name;
  double duration_s;  // before speed scaling
  double fx, fy, fz;  // cycles over the gesture, per axis
  double ax, ay, az;  // relative amplitudes
  double px, py, pz;  // phase offsets, radians
};

// Durations sit in a narrow band so that an 80-sample analysis window can
// always contain a whole gesture but never two; distinctness for the
// classifier comes from the frequency/amplitude/phase mix per axis.
const GestureTemplate kTemplates[kNumGestures] = {
    {"circle", 2.00, 2.0, 2.0, 1.0, 1.00, 1.00, 0.35, 0.0, 1.5707963, 0.0},
    {"swipe-left", 1.90, 1.0, 2.0, 1.0, -1.10, 0.20, 0.30, 0.0, 0.5, 0.7},
    {"swipe-right", 1.90, 1.0, 2.0, 1.0, 1.10, 0.20, 0.30, 0.0, 0.5, 0.7},
    {"swipe-up", 1.92, 2.0, 1.0, 1.0, 0.15, 0.20, 1.10, 0.0, 1.0, 0.0},
    {"swipe-down", 1.92, 1.0, 2.0, 1.0, 0.20, 0.15, -1.10, 1.0, 0.0, 0.0},
    {"tap", 1.90, 3.0, 1.5, 3.0, 0.15, 0.10, 0.90, 0.4, 0.0, 0.0},
    {"twist-cw", 1.98, 2.5, 2.5, 2.5, 0.80, 0.80, 0.30, 0.0, 1.5707963, 0.3},
    {"twist-ccw", 1.98, 2.5, 2.5, 2.5, 0.80, -0.80, 0.30, 0.0, 1.5707963, -0.3},
    {"zigzag", 2.00, 3.5, 1.75, 3.5, 0.90, 0.50, 0.30, 0.0, 0.0, 0.9},
    {"push", 1.94, 1.0, 2.0, 1.0, 0.15, 0.50, 1.00, 0.4, 0.0, 0.0},
    {"pull", 1.94, 1.0, 2.0, 1.0, 0.15, 0.50, -1.00, -0.4, 0.2, 0.0},
    {"shake", 1.96, 5.0, 2.5, 5.0, 0.90, 0.30, 0.40, 0.0, 0.0, 1.2},
};

double hann(double u) { return 0.5 * (1.0 - std::cos(2.0 * M_PI * u)); }

void template_accel(const GestureTemplate& g, double u, double amp, double& x,
                    double& y, double& z) {
  double e = amp * hann(u);
  x = e * g.ax * std::sin(2.0 * M_PI * g.fx * u + g.px);
  y = e * g.ay * std::sin(2.0 * M_PI * g.fy * u + g.py);
  z = e * g.az * std::sin(2.0 * M_PI * g.fz * u + g.pz);
}

// Evenly spaced slot with ±0.25-slot jitter: pairwise separation of a slotted
// parameter is at least kMinSlotSeparation * (hi-lo)/n.
double slot_value(double lo, double hi, int slot, int n, double u) {
  double width = (hi - lo) / n;
  return lo + width * (slot + 0.5 + 0.5 * (u - 0.5));
}

double bateman_peak(const BatemanParams& p) {
  double g = p.tau_decay_s, d = p.tau_rise_s;
  double t_star = std::log(g / d) * g * d / (g - d);
  return (std::exp(-t_star / g) - std::exp(-t_star / d)) / (g - d);
}

struct Schedule {
  std::vector<double> starts_s;
  std::vector<double> durations_s;
  std::vector<int> labels;
  double total_s = 0.0;
};

Schedule make_schedule(const SubjectProfile& prof, const CohortSpec& spec,
                       Rng& rng) {
  Schedule sch;
  sch.labels.resize(spec.episodes_per_subject);
  for (int e = 0; e < spec.episodes_per_subject; ++e)
    sch.labels[e] = e % kNumGestures;
  rng.shuffle(sch.labels);

  double t = spec.lead_in_s;
  for (int e = 0; e < spec.episodes_per_subject; ++e) {
    double dur = kTemplates[sch.labels[e]].duration_s / prof.gesture_speed_scale;
    sch.starts_s.push_back(t);
    sch.durations_s.push_back(dur);
    t += dur + spec.rest_gap_min_s + 2.0 * rng.uniform();
  }
  sch.total_s = std::ceil(t + spec.tail_s);
  return sch;
}

SensorStream make_stream(std::vector<double> vals, double rate, Channel ch) {
  SensorStream s;
  s.values = std::move(vals);
  s.sample_rate_hz = rate;
  s.start_time_s = kStartTime;
  s.channel = ch;
  return s;
}

}  // namespace

const std::vector<std::string>& gesture_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& t : kTemplates) v.emplace_back(t.name);
    return v;
  }();
  return names;
}

std::vector<SubjectProfile> sample_profiles(const CohortSpec& spec, Rng& rng) {
  int n = spec.n_subjects;
  if (n < 2) {
    // A cohort of one still gets a well-formed profile.
    n = std::max(n, 1);
  }

  // Identity-bearing parameters live on per-parameter shuffled slots so that
  // subjects are far apart in each dimension without the dimensions being
  // correlated with one another.
  std::vector<int> slot_hr(n), slot_tonic(n), slot_speed(n), slot_hrv(n),
      slot_scr(n), slot_orient(n), slot_nscale(n), slot_nrho(n);
  for (auto* s : {&slot_hr, &slot_tonic, &slot_speed, &slot_hrv, &slot_scr,
                  &slot_orient, &slot_nscale, &slot_nrho}) {
    std::iota(s->begin(), s->end(), 0);
    rng.shuffle(*s);
  }

  std::vector<SubjectProfile> profiles(n);
  for (int i = 0; i < n; ++i) {
    SubjectProfile& p = profiles[i];
    char buf[16];
    std::snprintf(buf, sizeof(buf), "S%02d", i + 1);
    p.subject_id = buf;
    p.resting_hr_bpm = slot_value(55.0, 90.0, slot_hr[i], n, rng.uniform());
    p.tonic_level_us = slot_value(1.5, 6.0, slot_tonic[i], n, rng.uniform());
    p.gesture_speed_scale =
        slot_value(0.93, 1.07, slot_speed[i], n, rng.uniform());
    p.hrv_sd_s = slot_value(0.008, 0.030, slot_hrv[i], n, rng.uniform());
    p.scr_rate_per_min = slot_value(2.0, 5.0, slot_scr[i], n, rng.uniform());
    p.ppg_systolic_width_s = 0.07 + 0.04 * rng.uniform();
    p.ppg_dicrotic_offset_s = 0.24 + 0.10 * rng.uniform();
    p.ppg_dicrotic_amp = 0.20 + 0.25 * rng.uniform();
    p.scr_amp_us = 0.25 + 0.30 * rng.uniform();
    p.tau_rise_s = 0.55 + 0.40 * rng.uniform();
    p.tau_decay_s = 2.3 + 1.4 * rng.uniform();
    p.gesture_amp_scale = 0.8 + 0.4 * rng.uniform();
    p.orientation_rad = slot_value(-0.7, 0.7, slot_orient[i], n, rng.uniform());
    p.acc_noise_scale = slot_value(0.6, 1.6, slot_nscale[i], n, rng.uniform());
    p.acc_noise_rho = slot_value(0.75, 0.92, slot_nrho[i], n, rng.uniform());
  }
  return profiles;
}

std::pair<Recording, GroundTruth> render_recording(const SubjectProfile& profile,
                                                   const CohortSpec& spec,
                                                   Rng rng) {
  // Child streams per signal block: noise amplitudes can change without
  // perturbing the schedule, beat train, or spike train.
  Rng rng_sched = rng.split(1);
  Rng rng_acc = rng.split(2);
  Rng rng_ppg = rng.split(3);
  Rng rng_eda = rng.split(4);
  Rng rng_temp = rng.split(5);

  Schedule sch = make_schedule(profile, spec, rng_sched);
  const double T = sch.total_s;
  const auto n_acc = static_cast<std::size_t>(std::lround(T * kAccRate));
  const auto n_ppg = static_cast<std::size_t>(std::lround(T * kPpgRate));
  const auto n_eda = static_cast<std::size_t>(std::lround(T * kEdaRate));

  // --- accelerometer: gravity + AR(1) wobble + white dither + gestures ---
  std::vector<double> ax(n_acc, 0.0), ay(n_acc, 0.0), az(n_acc, 1.0);
  {
    double sx = 0.0, sy = 0.0, sz = 0.0;
    const double rho = profile.acc_noise_rho;
    const double base_sd = spec.noise_sd_acc_g * profile.acc_noise_scale;
    const double sd_ar = base_sd * std::sqrt(1.0 - rho * rho);
    const double sd_white = 0.5 * base_sd;
    for (std::size_t i = 0; i < n_acc; ++i) {
      sx = rho * sx + sd_ar * rng_acc.normal();
      sy = rho * sy + sd_ar * rng_acc.normal();
      sz = rho * sz + sd_ar * rng_acc.normal();
      ax[i] += sx + sd_white * rng_acc.normal();
      ay[i] += sy + sd_white * rng_acc.normal();
      az[i] += sz + sd_white * rng_acc.normal();
    }
    const double amp = 0.75 * profile.gesture_amp_scale;
    const double cth = std::cos(profile.orientation_rad);
    const double sth = std::sin(profile.orientation_rad);
    for (std::size_t e = 0; e < sch.starts_s.size(); ++e) {
      const auto& tpl = kTemplates[sch.labels[e]];
      auto first = static_cast<std::size_t>(std::ceil(sch.starts_s[e] * kAccRate));
      auto last = static_cast<std::size_t>(
          std::floor((sch.starts_s[e] + sch.durations_s[e]) * kAccRate));
      for (std::size_t i = first; i <= last && i < n_acc; ++i) {
        double u = (i / kAccRate - sch.starts_s[e]) / sch.durations_s[e];
        double gx, gy, gz;
        template_accel(tpl, std::clamp(u, 0.0, 1.0), amp, gx, gy, gz);
        ax[i] += cth * gx - sth * gy;
        ay[i] += sth * gx + cth * gy;
        az[i] += gz;
      }
    }
  }

  GroundTruth truth;
  for (std::size_t e = 0; e < sch.starts_s.size(); ++e) {
    GestureWindow w;
    w.subject_id = profile.subject_id;
    w.gesture_label = sch.labels[e];
    double center = sch.starts_s[e] + 0.5 * sch.durations_s[e];
    auto start = static_cast<long>(std::lround((center - kHalfWindowS) * kAccRate));
    w.start_sample = static_cast<std::size_t>(std::max(0L, start));
    w.end_sample = w.start_sample +
                   static_cast<std::size_t>(std::lround(2.0 * kHalfWindowS * kAccRate));
    truth.windows.push_back(std::move(w));
  }

  // --- PPG: beat train with activity-coupled rate, HRV, breathing AM ---
  auto in_span = [&](double t, double pad) {
    for (std::size_t e = 0; e < sch.starts_s.size(); ++e) {
      if (t >= sch.starts_s[e] && t < sch.starts_s[e] + sch.durations_s[e] + pad)
        return true;
      if (sch.starts_s[e] > t) break;
    }
    return false;
  };

  std::vector<double> ppg(n_ppg, 0.0);
  std::vector<double> beat_times;
  const double br_hz = profile.resting_hr_bpm / 240.0;  // 4:1 HR:BR ratio
  {
    double drift_phase = 2.0 * M_PI * rng_ppg.uniform();
    double t = 0.25 + 0.5 * rng_ppg.uniform();
    while (t < T - 0.3) {
      beat_times.push_back(t);
      double hr = profile.resting_hr_bpm + (in_span(t, 1.0) ? 3.0 : 0.0);
      double gap = 60.0 / hr + profile.hrv_sd_s * rng_ppg.normal();
      t += std::clamp(gap, 0.35, 1.6);
    }
    const double w = profile.ppg_systolic_width_s;
    const double wd = 1.4 * w;
    for (double tb : beat_times) {
      double am = 1.0 + 0.30 * std::sin(2.0 * M_PI * br_hz * tb);
      double t_sys = tb + 0.18;
      double t_dic = t_sys + profile.ppg_dicrotic_offset_s;
      auto first = static_cast<std::size_t>(std::max(0.0, std::floor(tb * kPpgRate)));
      auto last = static_cast<std::size_t>(
          std::min<double>(static_cast<double>(n_ppg) - 1.0, std::ceil((t_dic + 5.0 * wd) * kPpgRate)));
      for (std::size_t i = first; i <= last; ++i) {
        double ti = i / kPpgRate;
        double v = std::exp(-0.5 * (ti - t_sys) * (ti - t_sys) / (w * w)) +
                   profile.ppg_dicrotic_amp *
                       std::exp(-0.5 * (ti - t_dic) * (ti - t_dic) / (wd * wd));
        ppg[i] += am * v;
      }
    }
    for (std::size_t i = 0; i < n_ppg; ++i) {
      double ti = i / kPpgRate;
      ppg[i] += 0.15 * std::sin(2.0 * M_PI * 0.05 * ti + drift_phase) +
                spec.noise_sd_ppg * rng_ppg.normal();
    }
  }

  // Realized (not latent) instantaneous HR: downstream estimators are scored
  // against the beat intervals that were actually rendered.
  {
    std::vector<double> hr(n_eda, 0.0);
    for (std::size_t i = 0, k = 0; i < n_eda; ++i) {
      double t = i / kEdaRate;
      while (k + 2 < beat_times.size() && beat_times[k + 1] <= t) ++k;
      hr[i] = 60.0 / (beat_times[k + 1] - beat_times[k]);
    }
    truth.hr = make_stream(std::move(hr), kEdaRate, Channel::DerivedHr);
  }

  // --- EDA: slotted tonic level + slow drift + sparse driver spikes ---
  std::vector<double> eda(n_eda, 0.0);
  {
    double tonic_phase = 2.0 * M_PI * rng_eda.uniform();
    std::vector<double> tonic(n_eda), driver(n_eda, 0.0);
    for (std::size_t i = 0; i < n_eda; ++i) {
      double t = i / kEdaRate;
      tonic[i] = profile.tonic_level_us +
                 0.25 * std::sin(2.0 * M_PI * t / 240.0 + tonic_phase) +
                 0.30 * (t / T);
    }
    BatemanParams taus{profile.tau_rise_s, profile.tau_decay_s};
    const double mass_unit = profile.scr_amp_us / (bateman_peak(taus) / kEdaRate);
    const double p_rest = profile.scr_rate_per_min / 60.0 / kEdaRate;
    double last_spike = -10.0;
    for (std::size_t i = 0; i < n_eda; ++i) {
      double t = i / kEdaRate;
      double p = p_rest * (in_span(t, 1.5) ? 4.0 : 1.0);
      double roll = rng_eda.uniform();
      if (roll < p && t - last_spike >= 2.0) {
        driver[i] = mass_unit * (0.75 + 0.5 * rng_eda.uniform());
        truth.spike_samples.push_back(i);
        last_spike = t;
      }
    }
    std::vector<double> phasic =
        phasic_from_driver(driver, taus, kEdaRate, 0.0);
    for (std::size_t i = 0; i < n_eda; ++i)
      eda[i] = tonic[i] + phasic[i] + spec.noise_sd_eda_us * rng_eda.normal();
    truth.driver = make_stream(std::move(driver), kEdaRate, Channel::Phasic);
    truth.tonic = make_stream(std::move(tonic), kEdaRate, Channel::Tonic);
    truth.phasic = make_stream(std::move(phasic), kEdaRate, Channel::Phasic);
  }

  // --- skin temperature: slow, subject-shifted, nearly noiseless ---
  std::vector<double> temp(n_eda, 0.0);
  {
    double phase = 2.0 * M_PI * rng_temp.uniform();
    for (std::size_t i = 0; i < n_eda; ++i) {
      double t = i / kEdaRate;
      temp[i] = 32.0 + 0.25 * profile.tonic_level_us +
                0.3 * std::sin(2.0 * M_PI * t / 600.0 + phase) +
                0.01 * rng_temp.normal();
    }
  }

  Recording rec;
  rec.subject_id = profile.subject_id;
  rec.source_path = "synthgen";
  rec.streams[Channel::AccX] = make_stream(std::move(ax), kAccRate, Channel::AccX);
  rec.streams[Channel::AccY] = make_stream(std::move(ay), kAccRate, Channel::AccY);
  rec.streams[Channel::AccZ] = make_stream(std::move(az), kAccRate, Channel::AccZ);
  rec.streams[Channel::Ppg] = make_stream(std::move(ppg), kPpgRate, Channel::Ppg);
  rec.streams[Channel::Eda] = make_stream(std::move(eda), kEdaRate, Channel::Eda);
  rec.streams[Channel::Temp] = make_stream(std::move(temp), kEdaRate, Channel::Temp);
  return {std::move(rec), std::move(truth)};
}

CohortData render_cohort(const CohortSpec& spec) {
  Rng root(spec.seed);
  Rng prof_rng = root.split(1);
  CohortData data;
  data.profiles = sample_profiles(spec, prof_rng);
  for (std::size_t i = 0; i < data.profiles.size(); ++i) {
    auto [rec, truth] =
        render_recording(data.profiles[i], spec, root.split(1000 + i));
    data.recordings.push_back(std::move(rec));
    data.truths.push_back(std::move(truth));
  }
  return data;
}

void materialize_slices(const Recording& rec, GestureWindow& w) {
  const auto& acc = rec.streams.at(Channel::AccX);
  double t0 = acc.time_at(w.start_sample);
  double t1 = acc.time_at(w.end_sample);
  w.modality_slices.clear();
  for (const auto& [ch, stream] : rec.streams)
    w.modality_slices[ch] = slice_by_time(stream, t0, t1);
}

}  // namespace physiogait::synthgen
