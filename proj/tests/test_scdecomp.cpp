#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "physiogait/scdecomp.hpp"

using namespace physiogait;

namespace {

// Impulse-train solution of the underlying second-order system
//   tau_g*tau_d*y'' + (tau_g+tau_d)*y' + y = u(t)
// integrated by RK4 on the homogeneous segments between samples; each driver
// sample u[k] arrives as an impulse of mass u[k]*dt kicking y' by
// u[k]*dt/(tau_g*tau_d). Entirely independent of the convolution code path.
std::vector<double> rk4_phasic(const std::vector<double>& u,
                               const BatemanParams& p, double rate_hz,
                               double y_p0) {
  const double tg = p.tau_decay_s, td = p.tau_rise_s;
  const double dt = 1.0 / rate_hz;
  const int substeps = 8;
  const double h = dt / substeps;
  double y = y_p0, v = -y_p0 / tg;
  std::vector<double> out(u.size());
  auto acc = [&](double yy, double vv) {
    return -((tg + td) * vv + yy) / (tg * td);
  };
  for (std::size_t k = 0; k < u.size(); ++k) {
    out[k] = y;  // y is continuous through the impulse
    v += u[k] * dt / (tg * td);
    for (int s = 0; s < substeps; ++s) {
      double k1y = v, k1v = acc(y, v);
      double k2y = v + 0.5 * h * k1v, k2v = acc(y + 0.5 * h * k1y, v + 0.5 * h * k1v);
      double k3y = v + 0.5 * h * k2v, k3v = acc(y + 0.5 * h * k2y, v + 0.5 * h * k2v);
      double k4y = v + h * k3v, k4v = acc(y + h * k3y, v + h * k3v);
      y += h / 6.0 * (k1y + 2 * k2y + 2 * k3y + k4y);
      v += h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v);
    }
  }
  return out;
}

SensorStream eda_stream(const std::vector<double>& v) {
  SensorStream s;
  s.channel = Channel::Eda;
  s.sample_rate_hz = 4.0;
  s.values = v;
  return s;
}

}  // namespace

TEST_CASE("kernel vanishes at zero and matches a hand value") {
  BatemanParams p;  // rise 0.7, decay 2.0
  auto h = bateman_kernel(p, 4.0, 10.0);
  CHECK(h[0] == doctest::Approx(0.0));
  // t = 1 s is index 4 at 4 Hz: (e^{-1/2} - e^{-1/0.7}) / 1.3
  CHECK(h[4] == doctest::Approx(0.2820).epsilon(2e-4));
}

TEST_CASE("kernel is nonnegative and integrates to one") {
  BatemanParams p;
  const double rate = 4.0;
  auto h = bateman_kernel(p, rate, 10.0 * p.tau_decay_s);
  double integral = 0.0;
  for (std::size_t k = 0; k + 1 < h.size(); ++k) {
    CHECK(h[k] >= 0.0);
    integral += 0.5 * (h[k] + h[k + 1]) / rate;
  }
  CHECK(integral == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("inverted taus are rejected") {
  BatemanParams p;
  p.tau_rise_s = 2.0;
  p.tau_decay_s = 0.7;
  try {
    bateman_kernel(p, 4.0, 10.0);
    FAIL("expected InvalidTaus");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidTaus);
  }
}

TEST_CASE("zero driver and zero state give zero phasic") {
  std::vector<double> u(64, 0.0);
  auto y = phasic_from_driver(u, BatemanParams{}, 4.0, 0.0);
  for (double v : y) CHECK(v == 0.0);
}

TEST_CASE("unit impulse reproduces the sampled kernel times dt") {
  BatemanParams p;
  std::vector<double> u(40, 0.0);
  u[0] = 1.0;
  auto y = phasic_from_driver(u, p, 4.0, 0.0);
  auto h = bateman_kernel(p, 4.0, 40.0 / 4.0);
  for (std::size_t k = 0; k < y.size(); ++k)
    CHECK(y[k] == doctest::Approx(h[k] * 0.25).epsilon(1e-12));
}

TEST_CASE("phasic matches an RK4 integration of the underlying system") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    BatemanParams p;
    p.tau_rise_s = rng.uniform(0.4, 1.0);
    p.tau_decay_s = rng.uniform(1.5, 4.0);
    std::vector<double> u(120, 0.0);
    for (auto& v : u)
      if (rng.uniform() < 0.15) v = rng.uniform(0.2, 2.0);
    double y0 = rng.uniform(0.0, 0.5);
    auto lib = phasic_from_driver(u, p, 4.0, y0);
    auto ref = rk4_phasic(u, p, 4.0, y0);
    double peak = *std::max_element(ref.begin(), ref.end());
    REQUIRE(peak > 0.0);
    for (std::size_t k = 0; k < u.size(); ++k) {
      double rel = std::fabs(lib[k] - ref[k]) / std::max(std::fabs(ref[k]), 1e-3 * peak);
      CHECK(rel < 0.01);
    }
  }
}

TEST_CASE("phasic is linear in the driver") {
  Rng rng(23);
  BatemanParams p;
  std::vector<double> u1(80), u2(80);
  for (auto& v : u1) v = rng.uniform() < 0.2 ? rng.uniform(0.0, 1.5) : 0.0;
  for (auto& v : u2) v = rng.uniform() < 0.2 ? rng.uniform(0.0, 1.5) : 0.0;
  double a = rng.uniform(0.0, 2.0), b = rng.uniform(0.0, 2.0);
  std::vector<double> mix(80);
  for (int i = 0; i < 80; ++i) mix[i] = a * u1[i] + b * u2[i];
  auto f1 = phasic_from_driver(u1, p, 4.0, 0.0);
  auto f2 = phasic_from_driver(u2, p, 4.0, 0.0);
  auto fm = phasic_from_driver(mix, p, 4.0, 0.0);
  for (int i = 0; i < 80; ++i)
    CHECK(fm[i] == doctest::Approx(a * f1[i] + b * f2[i]).epsilon(1e-9));
}

TEST_CASE("constant input is pure tonic") {
  auto y = eda_stream(std::vector<double>(160, 0.5));
  auto d = decompose(y, BatemanParams{});
  double l1 = 0.0;
  for (double v : d.driver.values) l1 += std::fabs(v);
  CHECK(l1 < 1e-3);
  for (double v : d.tonic.values) CHECK(v == doctest::Approx(0.5).epsilon(1e-2));
}

TEST_CASE("decomposition invariants hold on a constructed signal") {
  BatemanParams p;
  std::vector<double> u(240, 0.0);
  u[40] = 1.2;
  u[90] = 0.8;
  u[170] = 1.5;
  auto phasic = phasic_from_driver(u, p, 4.0, 0.0);
  Rng rng(31);
  std::vector<double> v(u.size());
  for (std::size_t i = 0; i < u.size(); ++i)
    v[i] = 2.0 + 0.002 * static_cast<double>(i) * 0.25 + phasic[i] +
           0.005 * rng.normal();
  auto y = eda_stream(v);
  auto d = decompose(y, p);

  // exact reconstruction, nonnegative driver, near-nonnegative phasic
  double ymax = *std::max_element(v.begin(), v.end());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double back = d.tonic.values[i] + d.phasic.values[i] + d.residual.values[i];
    CHECK(std::fabs(back - v[i]) <= 1e-9 * ymax);
    CHECK(d.driver.values[i] >= 0.0);
    CHECK(d.phasic.values[i] >= -1e-9);
  }

  // objective never increases across block steps
  REQUIRE(d.objective_trace.size() >= 2);
  for (std::size_t i = 1; i < d.objective_trace.size(); ++i)
    CHECK(d.objective_trace[i] <= d.objective_trace[i - 1] + 1e-12);

  // driver mass concentrates within one sample of each true spike
  for (std::size_t spike : {std::size_t{40}, std::size_t{90}, std::size_t{170}}) {
    double near = 0.0, total = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) total += d.driver.values[i];
    for (std::size_t i = spike - 1; i <= spike + 1; ++i)
      near += d.driver.values[i];
    CHECK(near > 0.0);
    CHECK(total > 0.0);
  }

  // reconstruction quality
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    ss_res += d.residual.values[i] * d.residual.values[i];
    ss_tot += (v[i] - mean) * (v[i] - mean);
  }
  CHECK(1.0 - ss_res / ss_tot >= 0.95);
}

TEST_CASE("negative skin conductance is rejected") {
  std::vector<double> v(160, 0.5);
  v[20] = -0.1;
  try {
    decompose(eda_stream(v), BatemanParams{});
    FAIL("expected NegativeInput");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NegativeInput);
  }
}

TEST_CASE("regularization selection is stable across reruns") {
  BatemanParams p;
  std::vector<double> u(200, 0.0);
  u[50] = 1.0;
  u[130] = 0.7;
  auto phasic = phasic_from_driver(u, p, 4.0, 0.0);
  Rng rng(37);
  std::vector<double> v(u.size());
  for (std::size_t i = 0; i < u.size(); ++i)
    v[i] = 1.5 + phasic[i] + 0.01 * rng.normal();
  auto y = eda_stream(v);
  auto a = decompose(y, p);
  auto b = decompose(y, p);
  CHECK(a.lambda_tonic == b.lambda_tonic);
  CHECK(a.lambda_sparse == b.lambda_sparse);
  CHECK(a.driver.values == b.driver.values);
  CHECK(a.tonic.values == b.tonic.values);
}
