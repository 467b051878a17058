#include "physiogait/core.hpp"

#include <cstdio>
#include <mutex>

namespace physiogait {

namespace {

constexpr const char* kChannelNames[] = {
    "acc_x", "acc_y", "acc_z",  "ppg",  "eda",   "temp",
    "hr",    "br",    "bvp",    "ibi",  "tonic", "phasic",
};

LogLevel g_log_level = LogLevel::Warn;
std::mutex g_log_mutex;

}  // namespace

const char* channel_name(Channel c) {
  return kChannelNames[static_cast<int>(c)];
}

Channel channel_from_name(const std::string& name) {
  for (int i = 0; i < 12; ++i) {
    if (name == kChannelNames[i]) return static_cast<Channel>(i);
  }
  fail(ErrorCode::InvalidArgument, "unknown channel name: " + name);
}

void check_stream(const SensorStream& s) {
  if (s.values.empty()) fail(ErrorCode::EmptyStream, "stream has no samples");
  if (!(s.sample_rate_hz > 0.0))
    fail(ErrorCode::InvalidArgument, "sample rate must be positive");
  for (double v : s.values) {
    if (!std::isfinite(v))
      fail(ErrorCode::NonFiniteSample, "non-finite sample in stream");
  }
}

SensorStream resample(const SensorStream& stream, double target_rate_hz) {
  check_stream(stream);
  if (stream.values.size() < 2)
    fail(ErrorCode::EmptyStream, "resample needs at least 2 samples");
  if (!(target_rate_hz > 0.0))
    fail(ErrorCode::InvalidArgument, "target rate must be positive");

  const std::size_t n = stream.values.size();
  const double duration = static_cast<double>(n - 1) / stream.sample_rate_hz;
  const std::size_t m =
      static_cast<std::size_t>(std::floor(duration * target_rate_hz)) + 1;

  SensorStream out;
  out.sample_rate_hz = target_rate_hz;
  out.start_time_s = stream.start_time_s;
  out.channel = stream.channel;
  out.values.resize(m);

  const double ratio = stream.sample_rate_hz / target_rate_hz;
  for (std::size_t j = 0; j < m; ++j) {
    double pos = static_cast<double>(j) * ratio;
    std::size_t i = static_cast<std::size_t>(pos);
    if (i >= n - 1) {
      out.values[j] = stream.values[n - 1];
      continue;
    }
    double frac = pos - static_cast<double>(i);
    if (frac == 0.0) {
      out.values[j] = stream.values[i];  // exact grid hit stays bitwise
    } else {
      out.values[j] =
          stream.values[i] + frac * (stream.values[i + 1] - stream.values[i]);
    }
  }
  return out;
}

SensorStream slice_by_time(const SensorStream& stream, double t0_s,
                           double t1_s) {
  check_stream(stream);
  if (!(t0_s < t1_s))
    fail(ErrorCode::InvalidArgument, "slice needs t0 < t1");

  const double rate = stream.sample_rate_hz;
  const std::size_t n = stream.values.size();

  double first_f = std::ceil((t0_s - stream.start_time_s) * rate);
  std::size_t first = first_f <= 0.0 ? 0 : static_cast<std::size_t>(first_f);
  // Samples strictly before t1.
  // ceil() makes a sample landing exactly on t1 exclusive.
  double last_f = (t1_s - stream.start_time_s) * rate;
  std::size_t end = n;
  if (last_f < static_cast<double>(n)) {
    double c = std::ceil(last_f);
    end = c <= 0.0 ? 0 : static_cast<std::size_t>(c);
  }
  if (first >= end)
    fail(ErrorCode::NoOverlap, "slice interval does not overlap stream");

  SensorStream out;
  out.sample_rate_hz = rate;
  out.start_time_s =
      stream.start_time_s + static_cast<double>(first) / rate;
  out.channel = stream.channel;
  out.values.assign(stream.values.begin() + first, stream.values.begin() + end);
  return out;
}

void set_log_level(LogLevel level) { g_log_level = level; }

LogLevel log_level() { return g_log_level; }

void log_message(LogLevel level, const std::string& msg) {
  if (static_cast<int>(level) > static_cast<int>(g_log_level)) return;
  static const char* names[] = {"error", "warn", "info", "debug"};
  std::lock_guard<std::mutex> lock(g_log_mutex);
  std::fprintf(stderr, "[%s] %s\n", names[static_cast<int>(level)],
               msg.c_str());
}

}  // namespace physiogait
