#include "physiogait/physio.hpp"

#include <algorithm>
#include <cmath>

namespace physiogait {

namespace {

// Centered moving mean, window clamped at the edges.
std::vector<double> moving_mean(const std::vector<double>& v,
                                std::size_t half_window) {
  std::vector<double> prefix(v.size() + 1, 0.0);
  for (std::size_t i = 0; i < v.size(); ++i) prefix[i + 1] = prefix[i] + v[i];
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::size_t lo = i > half_window ? i - half_window : 0;
    std::size_t hi = std::min(v.size(), i + half_window + 1);
    out[i] = (prefix[hi] - prefix[lo]) / static_cast<double>(hi - lo);
  }
  return out;
}

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::size_t k = static_cast<std::size_t>(q * static_cast<double>(v.size() - 1));
  std::nth_element(v.begin(), v.begin() + k, v.end());
  return v[k];
}

}  // namespace

PulseTrain detect_pulses(const SensorStream& ppg) {
  check_stream(ppg);
  if (ppg.duration_s() < 5.0)
    fail(ErrorCode::SignalTooShort, "detect_pulses needs >= 5 s of PPG");

  const double rate = ppg.sample_rate_hz;
  const std::size_t half = static_cast<std::size_t>(0.5 * rate);
  std::vector<double> base = moving_mean(ppg.values, half);
  std::vector<double> d(ppg.values.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = ppg.values[i] - base[i];

  const double threshold = 0.5 * percentile(d, 0.90);
  const double refractory_s = 0.33;

  PulseTrain train;
  double last_peak_t = -1e300;
  double last_peak_v = 0.0;
  for (std::size_t i = 1; i + 1 < d.size(); ++i) {
    if (!(d[i] > threshold)) continue;
    if (!(d[i] >= d[i - 1] && d[i] > d[i + 1])) continue;

    // Parabolic vertex through the three samples around the maximum.
    double denom = d[i - 1] - 2.0 * d[i] + d[i + 1];
    double offset = denom != 0.0 ? 0.5 * (d[i - 1] - d[i + 1]) / denom : 0.0;
    if (offset > 0.5) offset = 0.5;
    if (offset < -0.5) offset = -0.5;
    double t = ppg.time_at(i) + offset / rate;
    double v = d[i] - 0.25 * (d[i - 1] - d[i + 1]) * offset;

    if (t - last_peak_t < refractory_s) {
      // Within the refractory window the taller candidate wins.
      if (v > last_peak_v && !train.peak_times_s.empty()) {
        train.peak_times_s.back() = t;
        last_peak_t = t;
        last_peak_v = v;
      }
      continue;
    }
    train.peak_times_s.push_back(t);
    last_peak_t = t;
    last_peak_v = v;
  }

  // IBIs outside the physiological band are dropped, not emitted. The lower
  // edge is 1/3 s so that 60/IBI stays within [30, 180] BPM exactly.
  for (std::size_t i = 1; i < train.peak_times_s.size(); ++i) {
    double ibi = train.peak_times_s[i] - train.peak_times_s[i - 1];
    if (ibi >= 1.0 / 3.0 && ibi <= 2.0) {
      train.ibis_s.push_back(ibi);
    } else {
      ++train.dropped_ibis;
    }
  }
  return train;
}

namespace {

// Step function over in-band beats: the IBI starting at peak i takes effect
// at peak_times[i] and holds until the next in-band interval begins. Leading
// out-of-band intervals are back-filled from the first valid one.
SensorStream held_beat_stream(const PulseTrain& pulses, double rate_hz,
                              Channel ch, bool as_rate) {
  if (pulses.peak_times_s.size() < 2)
    fail(ErrorCode::TooFewPeaks, "need >= 2 peaks");

  const auto& pt = pulses.peak_times_s;
  std::vector<double> step_t;
  std::vector<double> step_v;
  for (std::size_t i = 0; i + 1 < pt.size(); ++i) {
    double ibi = pt[i + 1] - pt[i];
    if (ibi < 1.0 / 3.0 || ibi > 2.0) continue;
    step_t.push_back(pt[i]);
    step_v.push_back(as_rate ? 60.0 / ibi : ibi);
  }
  if (step_t.empty())
    fail(ErrorCode::TooFewPeaks, "no in-band inter-beat intervals");

  SensorStream out;
  out.sample_rate_hz = rate_hz;
  out.start_time_s = pt.front();
  out.channel = ch;
  std::size_t n =
      static_cast<std::size_t>(std::floor((pt.back() - pt.front()) * rate_hz)) +
      1;
  out.values.resize(n);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double t = out.time_at(i);
    while (k + 1 < step_t.size() && step_t[k + 1] <= t) ++k;
    out.values[i] = step_v[k];
  }
  return out;
}

}  // namespace

SensorStream hr_stream(const PulseTrain& pulses, double rate_hz) {
  return held_beat_stream(pulses, rate_hz, Channel::DerivedHr, true);
}

SensorStream ibi_stream(const PulseTrain& pulses, double rate_hz) {
  return held_beat_stream(pulses, rate_hz, Channel::DerivedIbi, false);
}

BrEstimate br_stream(const SensorStream& ppg, const PulseTrain& pulses) {
  check_stream(ppg);
  if (ppg.duration_s() < 30.0)
    fail(ErrorCode::SignalTooShort, "br_stream needs >= 30 s of PPG");
  if (pulses.peak_times_s.size() < 2)
    fail(ErrorCode::TooFewPeaks, "br_stream needs >= 2 peaks");

  // Per-beat amplitude of the detrended signal at each peak.
  const double rate = ppg.sample_rate_hz;
  std::vector<double> base =
      moving_mean(ppg.values, static_cast<std::size_t>(0.5 * rate));
  const auto& pt = pulses.peak_times_s;
  std::vector<double> amp(pt.size());
  for (std::size_t i = 0; i < pt.size(); ++i) {
    double idx = (pt[i] - ppg.start_time_s) * rate;
    std::size_t k = static_cast<std::size_t>(
        std::clamp(idx, 0.0, static_cast<double>(ppg.values.size() - 1)));
    amp[i] = ppg.values[k] - base[k];
  }

  // Envelope at 4 Hz by previous-value hold over the beat grid.
  const double env_rate = 4.0;
  SensorStream env;
  env.sample_rate_hz = env_rate;
  env.start_time_s = pt.front();
  env.channel = Channel::DerivedBvp;
  std::size_t n_env =
      static_cast<std::size_t>(std::floor((pt.back() - pt.front()) * env_rate)) +
      1;
  env.values.resize(n_env);
  {
    std::size_t beat = 0;
    for (std::size_t i = 0; i < n_env; ++i) {
      double t = env.time_at(i);
      while (beat + 1 < pt.size() && pt[beat + 1] <= t) ++beat;
      env.values[i] = amp[beat];
    }
  }

  const std::size_t win = static_cast<std::size_t>(30.0 * env_rate);
  if (env.values.size() < win)
    fail(ErrorCode::SignalTooShort, "envelope shorter than one 30 s window");

  BrEstimate result;
  result.stream.sample_rate_hz = 1.0;
  result.stream.start_time_s = env.start_time_s + 15.0;  // window centers
  result.stream.channel = Channel::DerivedBr;

  const std::size_t hop = static_cast<std::size_t>(env_rate);  // 1 s
  for (std::size_t start = 0; start + win <= env.values.size(); start += hop) {
    double mean = 0.0;
    for (std::size_t i = 0; i < win; ++i) mean += env.values[start + i];
    mean /= static_cast<double>(win);

    // Dense DFT scan of the respiratory band; direct evaluation doubles as
    // zero-padded spectral resolution well under 1 breath/min.
    const double f_lo = 0.1, f_hi = 0.5, f_step = 0.002;
    double best_f = f_lo, best_mag = -1.0;
    std::vector<double> mags;
    for (double f = f_lo; f <= f_hi + 1e-12; f += f_step) {
      double re = 0.0, im = 0.0;
      for (std::size_t i = 0; i < win; ++i) {
        // Hann window tames leakage from the band edges.
        double w = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) /
                                        static_cast<double>(win - 1));
        double x = (env.values[start + i] - mean) * w;
        double ph = 2.0 * M_PI * f * static_cast<double>(i) / env_rate;
        re += x * std::cos(ph);
        im -= x * std::sin(ph);
      }
      double mag = std::sqrt(re * re + im * im);
      mags.push_back(mag);
      if (mag > best_mag) {
        best_mag = mag;
        best_f = f;
      }
    }
    std::nth_element(mags.begin(), mags.begin() + mags.size() / 2, mags.end());
    double band_median = mags[mags.size() / 2];

    // A Hann-windowed tone of fractional depth d against the mean beat
    // amplitude peaks near d*mean*win/4. Depths under 2% are sampling dust,
    // not respiration, so they flag alongside peaks the band floor rivals.
    double depth = 4.0 * best_mag / (static_cast<double>(win) *
                                     std::max(std::fabs(mean), 1e-12));
    result.stream.values.push_back(best_f * 60.0);
    result.low_confidence.push_back(best_mag < 2.0 * band_median ||
                                    depth < 0.02);
  }
  if (result.stream.values.empty())
    fail(ErrorCode::SignalTooShort, "no complete 30 s window");
  return result;
}

SensorStream bvp_stream(const SensorStream& ppg) {
  check_stream(ppg);
  SensorStream out = ppg;
  out.channel = Channel::DerivedBvp;
  std::vector<double> base =
      moving_mean(ppg.values, static_cast<std::size_t>(0.5 * ppg.sample_rate_hz));
  for (std::size_t i = 0; i < out.values.size(); ++i)
    out.values[i] = ppg.values[i] - base[i];
  return out;
}

}  // namespace physiogait
