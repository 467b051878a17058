#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "physiogait/core.hpp"

using namespace physiogait;

TEST_CASE("rng is a pure function of seed") {
  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("rng uniform stays in [0,1)") {
  Rng rng(3);
  for (int i = 0; i < 10000; ++i) {
    double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("rng uniform range endpoints") {
  Rng rng(9);
  for (int i = 0; i < 1000; ++i) {
    double u = rng.uniform(-2.0, 5.0);
    CHECK(u >= -2.0);
    CHECK(u < 5.0);
  }
}

TEST_CASE("rng normal moments") {
  Rng rng(11);
  double sum = 0.0, sq = 0.0;
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    double x = rng.normal();
    sum += x;
    sq += x * x;
  }
  CHECK(std::abs(sum / n) < 0.02);
  CHECK(std::abs(sq / n - 1.0) < 0.03);
}

TEST_CASE("rng next_below is bounded and hits all residues") {
  Rng rng(5);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 1000; ++i) {
    std::uint64_t v = rng.next_below(7);
    CHECK(v < 7);
    seen.insert(v);
  }
  CHECK(seen.size() == 7);
}

TEST_CASE("rng split streams differ from parent and from each other") {
  Rng root(42);
  Rng a = root.split(1), b = root.split(2);
  CHECK(a.next_u64() != b.next_u64());
  // split is const: the parent stream is unaffected
  Rng root2(42);
  CHECK(root.next_u64() == root2.next_u64());
}

TEST_CASE("rng shuffle is a permutation and seed-stable") {
  std::vector<int> v(20);
  std::iota(v.begin(), v.end(), 0);
  Rng rng(123);
  rng.shuffle(v);
  std::vector<int> w = v;
  std::sort(w.begin(), w.end());
  for (int i = 0; i < 20; ++i) CHECK(w[i] == i);

  std::vector<int> v2(20);
  std::iota(v2.begin(), v2.end(), 0);
  Rng rng2(123);
  rng2.shuffle(v2);
  CHECK(v == v2);
}

TEST_CASE("channel names round-trip") {
  for (Channel c : {Channel::AccX, Channel::AccY, Channel::AccZ, Channel::Ppg,
                    Channel::Eda, Channel::Temp, Channel::DerivedHr,
                    Channel::DerivedBr, Channel::DerivedBvp, Channel::DerivedIbi,
                    Channel::Tonic, Channel::Phasic}) {
    CHECK(channel_from_name(channel_name(c)) == c);
  }
}

TEST_CASE("gesture config defaults and hop") {
  GestureConfig gcfg;
  CHECK(gcfg.window_len_samples == 80);
  CHECK(gcfg.overlap_fraction == doctest::Approx(0.8));
  CHECK(gcfg.acc_rate_hz == doctest::Approx(32.0));
  CHECK(gcfg.n_classes == 12);
  CHECK(gcfg.hop_samples() == 16);

  gcfg.overlap_fraction = 0.999;
  CHECK(gcfg.hop_samples() == 1);  // never zero
}

TEST_CASE("sensor stream timestamp helpers") {
  SensorStream s;
  s.values = {1.0, 2.0, 3.0, 4.0};
  s.sample_rate_hz = 4.0;
  s.start_time_s = 100.0;
  CHECK(s.time_at(0) == doctest::Approx(100.0));
  CHECK(s.time_at(3) == doctest::Approx(100.75));
  CHECK(s.end_time_s() == doctest::Approx(100.75));
  CHECK(s.duration_s() == doctest::Approx(0.75));
}

TEST_CASE("check_stream rejects bad streams") {
  SensorStream s;
  CHECK_THROWS_AS(check_stream(s), Error);
  s.values = {1.0};
  s.sample_rate_hz = 0.0;
  CHECK_THROWS_AS(check_stream(s), Error);
  s.sample_rate_hz = 4.0;
  CHECK_NOTHROW(check_stream(s));
  s.values.push_back(std::nan(""));
  try {
    check_stream(s);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonFiniteSample);
  }
}

TEST_CASE("resample keeps a constant stream constant") {
  SensorStream s;
  s.values = {5.0, 5.0, 5.0, 5.0};
  s.sample_rate_hz = 4.0;
  SensorStream r = resample(s, 8.0);
  CHECK(r.sample_rate_hz == doctest::Approx(8.0));
  CHECK(r.size() >= 7);
  CHECK(r.size() <= 8);
  for (double v : r.values) CHECK(v == doctest::Approx(5.0));
}

TEST_CASE("resample is linear on a ramp") {
  SensorStream s;
  s.values = {0.0, 1.0, 2.0, 3.0};
  s.sample_rate_hz = 1.0;
  SensorStream r = resample(s, 2.0);
  REQUIRE(r.size() == 7);
  for (std::size_t i = 0; i < r.size(); ++i)
    CHECK(r.values[i] == doctest::Approx(0.5 * static_cast<double>(i)));
}

TEST_CASE("resample tracks a slow sine analytically") {
  const double rate = 32.0, f = 1.0;
  SensorStream s;
  s.sample_rate_hz = rate;
  for (int i = 0; i < 320; ++i)
    s.values.push_back(std::sin(2.0 * M_PI * f * i / rate));
  SensorStream r = resample(s, 4.0);
  double worst = 0.0;
  for (std::size_t j = 0; j < r.size(); ++j) {
    double t = r.time_at(j);
    worst = std::max(worst, std::abs(r.values[j] - std::sin(2.0 * M_PI * f * t)));
  }
  CHECK(worst < 0.05);
}

TEST_CASE("slice full span returns the identical stream") {
  SensorStream s;
  s.values = {1.0, 2.0, 3.0, 4.0};
  s.sample_rate_hz = 4.0;
  s.start_time_s = 10.0;
  SensorStream r = slice_by_time(s, 10.0, 11.0);
  CHECK(r.values == s.values);
  CHECK(r.start_time_s == doctest::Approx(10.0));
}

TEST_CASE("slice sample count matches the window") {
  SensorStream s;
  s.sample_rate_hz = 4.0;
  s.values.assign(40, 1.0);  // 10 s at 4 Hz
  SensorStream r = slice_by_time(s, 2.0, 4.5);
  CHECK(r.size() == 10);  // floor(2.5 * 4)
  CHECK(r.start_time_s == doctest::Approx(2.0));
}

TEST_CASE("slice outside the stream throws NoOverlap") {
  SensorStream s;
  s.sample_rate_hz = 4.0;
  s.values.assign(8, 1.0);
  try {
    slice_by_time(s, 100.0, 101.0);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NoOverlap);
  }
}
