#pragma once

#include <vector>

#include "physiogait/core.hpp"

namespace physiogait {

/// Detected heartbeats. Peak times are strictly increasing; inter-beat
/// intervals outside [0.33, 2.0] s are dropped (and counted) rather than
/// propagated into derived channels.
struct PulseTrain {
  std::vector<double> peak_times_s;
  std::vector<double> ibis_s;  // consecutive differences of kept peaks
  std::size_t dropped_ibis = 0;
};

/// Peak picking on 1 s moving-mean-detrended PPG: local maxima above half the
/// 90th percentile of the detrended signal, 0.33 s refractory, peak time
/// refined by parabolic interpolation.
PulseTrain detect_pulses(const SensorStream& ppg);

/// Instantaneous heart rate 60/IBI, previous-value held between beats.
SensorStream hr_stream(const PulseTrain& pulses, double rate_hz = 4.0);

struct BrEstimate {
  SensorStream stream;  // breaths/min at 1 Hz
  std::vector<bool> low_confidence;
};

/// Breathing rate from the amplitude-modulation envelope of the pulse train:
/// per-beat peak amplitudes resampled to 4 Hz, dominant spectral frequency in
/// [0.1, 0.5] Hz over 30 s sliding windows, emitted at 1 Hz. A window whose
/// band peak is under twice the band median is flagged low-confidence.
BrEstimate br_stream(const SensorStream& ppg, const PulseTrain& pulses);

/// Detrended PPG (1 s moving-mean subtraction) at the input rate.
SensorStream bvp_stream(const SensorStream& ppg);

/// Inter-beat intervals as a uniform stream (previous-value held).
SensorStream ibi_stream(const PulseTrain& pulses, double rate_hz = 4.0);

}  // namespace physiogait
