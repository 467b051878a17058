#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace physiogait {

enum class Channel {
  AccX,
  AccY,
  AccZ,
  Ppg,
  Eda,
  Temp,
  DerivedHr,
  DerivedBr,
  DerivedBvp,
  DerivedIbi,
  Tonic,
  Phasic,
};

const char* channel_name(Channel c);
Channel channel_from_name(const std::string& name);

enum class ErrorCode {
  EmptyStream,
  NonFiniteSample,
  NoOverlap,
  MissingFile,
  MalformedHeader,
  NoCommonInterval,
  WindowTooShort,
  StreamTooShort,
  DegenerateTrainingSet,
  InvalidTaus,
  NegativeInput,
  SignalTooShort,
  SignalTooLong,
  TooFewPeaks,
  ShapeMismatch,
  TapeConsumed,
  ModalityMismatch,
  InsufficientWindows,
  NonFiniteLoss,
  InsufficientData,
  LengthMismatch,
  InvalidArgument,
  IoError,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

/// Uniformly sampled single-channel signal. Timestamps are implicit:
/// sample i lives at start_time_s + i / sample_rate_hz.
struct SensorStream {
  std::vector<double> values;
  double sample_rate_hz = 0.0;
  double start_time_s = 0.0;
  Channel channel = Channel::AccX;

  std::size_t size() const { return values.size(); }
  bool empty() const { return values.empty(); }
  double time_at(std::size_t i) const {
    return start_time_s + static_cast<double>(i) / sample_rate_hz;
  }
  // Wall-clock time of the last sample.
  double end_time_s() const {
    return empty() ? start_time_s : time_at(values.size() - 1);
  }
  double duration_s() const {
    return empty() ? 0.0
                   : static_cast<double>(values.size() - 1) / sample_rate_hz;
  }
};

void check_stream(const SensorStream& s);

struct GestureConfig {
  int window_len_samples = 80;
  double overlap_fraction = 0.8;
  double acc_rate_hz = 32.0;
  int n_classes = 12;

  int hop_samples() const {
    int hop = static_cast<int>(
        std::lround(window_len_samples * (1.0 - overlap_fraction)));
    return hop < 1 ? 1 : hop;
  }
};

/// One localized gesture episode. start/end index the 32 Hz accelerometer
/// stream; modality_slices hold every channel cut to the same wall-clock
/// span (within one sample period of the coarsest channel).
struct GestureWindow {
  std::string subject_id;
  int gesture_label = -1;  // in [0, 11]
  std::size_t start_sample = 0;
  std::size_t end_sample = 0;
  std::map<Channel, SensorStream> modality_slices;

  std::size_t length() const { return end_sample - start_sample; }
};

// ---------------------------------------------------------------------------
// Deterministic RNG.
//
// SplitMix64: the output at step k is a finalizing hash of
// seed + (k+1)*0x9E3779B97F4A7C15, so the sequence is a pure function of
// (seed, k) and bitwise identical on every platform. split() derives an
// independent stream by hashing (seed, stream_id) through the same mixer.
// ---------------------------------------------------------------------------
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1), 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t next_below(std::uint64_t n) {
    // Multiply-shift with rejection keeps the draw unbiased.
    std::uint64_t x = next_u64();
    __uint128_t m = static_cast<__uint128_t>(x) * n;
    std::uint64_t lo = static_cast<std::uint64_t>(m);
    if (lo < n) {
      std::uint64_t t = (0 - n) % n;
      while (lo < t) {
        x = next_u64();
        m = static_cast<__uint128_t>(x) * n;
        lo = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  /// Standard normal via Box-Muller (second value cached).
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    double u2 = uniform();
    // Avoid log(0).
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  /// Independent child stream keyed by stream_id.
  Rng split(std::uint64_t stream_id) const {
    Rng h(state_ ^ (0xD1B54A32D192ED03ULL * (stream_id + 1)));
    std::uint64_t s = h.next_u64();
    return Rng(s);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

// ---------------------------------------------------------------------------
// Signal operations
// ---------------------------------------------------------------------------

/// Linear-interpolation resample onto the grid start_time + j/target_rate.
/// Output duration equals input duration within one target sample period.
SensorStream resample(const SensorStream& stream, double target_rate_hz);

/// Samples with timestamps in [t0_s, t1_s). Throws NoOverlap when empty.
SensorStream slice_by_time(const SensorStream& stream, double t0_s,
                           double t1_s);

// ---------------------------------------------------------------------------
// Logging (stderr, level-gated)
// ---------------------------------------------------------------------------
enum class LogLevel { Error = 0, Warn = 1, Info = 2, Debug = 3 };

void set_log_level(LogLevel level);
LogLevel log_level();
void log_message(LogLevel level, const std::string& msg);

inline void log_warn(const std::string& msg) {
  log_message(LogLevel::Warn, msg);
}
inline void log_info(const std::string& msg) {
  log_message(LogLevel::Info, msg);
}
inline void log_debug(const std::string& msg) {
  log_message(LogLevel::Debug, msg);
}

}  // namespace physiogait
