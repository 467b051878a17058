#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "physiogait/gesture.hpp"
#include "physiogait/synthgen.hpp"

using namespace physiogait;
using namespace physiogait::gesture;

namespace {

// Independent RQA implementation: explicit embedding, full recurrence matrix,
// diagonal scan over both triangles. Conventions mirror the documented
// algorithm but none of the library code.
RqaMeasures brute_rqa(const std::vector<double>& w, const RqaParams& p) {
  const int m = p.embed_dim, tau = p.delay;
  const int n = static_cast<int>(w.size()) - (m - 1) * tau;
  std::vector<std::vector<double>> pts(n, std::vector<double>(m));
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < m; ++k) pts[i][k] = w[i + k * tau];
  auto dist = [&](int i, int j) {
    double s = 0;
    for (int k = 0; k < m; ++k) {
      double d = pts[i][k] - pts[j][k];
      s += d * d;
    }
    return std::sqrt(s);
  };
  std::vector<double> all;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) all.push_back(dist(i, j));
  std::sort(all.begin(), all.end());
  std::size_t qi =
      std::min(all.size() - 1,
               static_cast<std::size_t>(p.epsilon_quantile *
                                        static_cast<double>(all.size())));
  const double eps = all[qi];
  std::vector<std::vector<int>> R(n, std::vector<int>(n, 0));
  long recurrent = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i != j && dist(i, j) <= eps) {
        R[i][j] = 1;
        if (i < j) ++recurrent;
      }
    }
  RqaMeasures out;
  out.recurrence_rate = static_cast<double>(recurrent) / (0.5 * n * (n - 1));
  if (recurrent == 0) return out;
  long on = 0;
  for (int off = 1; off < n; ++off) {
    int run = 0;
    for (int i = 0; i + off < n; ++i) {
      if (R[i][i + off]) {
        ++run;
      } else {
        if (run >= p.l_min) on += run;
        run = 0;
      }
    }
    if (run >= p.l_min) on += run;
  }
  out.determinism = static_cast<double>(on) / recurrent;
  return out;
}

SensorStream const_stream(int n, Channel ch, double v) {
  SensorStream s;
  s.channel = ch;
  s.sample_rate_hz = 32.0;
  s.values.assign(n, v);
  return s;
}

GestureWindow window_from_axes(const std::vector<double>& x,
                               const std::vector<double>& y,
                               const std::vector<double>& z) {
  GestureWindow w;
  w.start_sample = 0;
  w.end_sample = x.size();
  SensorStream sx{x, 32.0, 0.0, Channel::AccX};
  SensorStream sy{y, 32.0, 0.0, Channel::AccY};
  SensorStream sz{z, 32.0, 0.0, Channel::AccZ};
  w.modality_slices[Channel::AccX] = sx;
  w.modality_slices[Channel::AccY] = sy;
  w.modality_slices[Channel::AccZ] = sz;
  return w;
}

// Reference statistics with the documented estimator conventions.
struct RefStats {
  double mean, median, rms, sd, var, skew, kurt;
};

RefStats ref_stats(std::vector<double> v) {
  const double n = static_cast<double>(v.size());
  RefStats r{};
  for (double x : v) r.mean += x;
  r.mean /= n;
  double m2 = 0, m3 = 0, m4 = 0, ss = 0;
  for (double x : v) {
    double d = x - r.mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
    ss += x * x;
  }
  r.rms = std::sqrt(ss / n);
  r.var = v.size() > 1 ? m2 / (n - 1) : 0.0;
  r.sd = std::sqrt(r.var);
  double vp = m2 / n;
  r.skew = vp > 0 ? (m3 / n) / std::pow(vp, 1.5) : 0.0;
  r.kurt = vp > 0 ? (m4 / n) / (vp * vp) : 0.0;
  std::sort(v.begin(), v.end());
  std::size_t mid = v.size() / 2;
  r.median = v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
  return r;
}

}  // namespace

TEST_CASE("constant window recurs everywhere") {
  std::vector<double> w(80, 3.0);
  auto m = rqa_measures(w, RqaParams{});
  CHECK(m.recurrence_rate == doctest::Approx(1.0));
  CHECK(m.determinism == doctest::Approx(1.0));
}

TEST_CASE("rqa matches an independent brute-force implementation") {
  Rng rng(99);
  RqaParams defaults;
  for (int trial = 0; trial < 8; ++trial) {
    std::vector<double> w(80);
    for (auto& v : w) v = rng.normal();
    auto a = rqa_measures(w, defaults);
    auto b = brute_rqa(w, defaults);
    CHECK(a.recurrence_rate == doctest::Approx(b.recurrence_rate).epsilon(1e-12));
    CHECK(a.determinism == doctest::Approx(b.determinism).epsilon(1e-12));
  }
  RqaParams other{4, 3, 0.2, 3};
  std::vector<double> w(100);
  for (int i = 0; i < 100; ++i) w[i] = std::sin(0.3 * i) + 0.3 * rng.normal();
  auto a = rqa_measures(w, other);
  auto b = brute_rqa(w, other);
  CHECK(a.recurrence_rate == doctest::Approx(b.recurrence_rate).epsilon(1e-12));
  CHECK(a.determinism == doctest::Approx(b.determinism).epsilon(1e-12));
}

TEST_CASE("periodic motion is deterministic, noise is not") {
  std::vector<double> sine(80), noise(80);
  Rng rng(7);
  for (int i = 0; i < 80; ++i) {
    sine[i] = std::sin(2.0 * M_PI * i / 20.0);
    noise[i] = rng.normal();
  }
  auto ms = rqa_measures(sine, RqaParams{});
  auto mn = rqa_measures(noise, RqaParams{});
  CHECK(ms.determinism >= 0.9);
  CHECK(mn.determinism < ms.determinism);
}

TEST_CASE("rqa rejects windows shorter than the embedding") {
  std::vector<double> w(7, 1.0);
  try {
    rqa_measures(w, RqaParams{});
    FAIL("expected WindowTooShort");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::WindowTooShort);
  }
}

TEST_CASE("all-rest stream detects nothing") {
  auto x = const_stream(2000, Channel::AccX, 0.0);
  auto y = const_stream(2000, Channel::AccY, 0.2);
  auto z = const_stream(2000, Channel::AccZ, 1.0);
  auto r = detect_onsets(x, y, z, RqaParams{}, GestureConfig{});
  CHECK(r.empty());
}

TEST_CASE("sub-hop gaps merge, wide gaps stay separate") {
  GestureConfig gcfg;
  gcfg.window_len_samples = 32;
  gcfg.overlap_fraction = 0.5;  // hop 16
  auto render = [&](int gap) {
    auto x = const_stream(1200, Channel::AccX, 0.0);
    auto y = const_stream(1200, Channel::AccY, 0.2);
    auto z = const_stream(1200, Channel::AccZ, 1.0);
    Rng rng(11);
    auto burst = [&](int s, int e) {
      for (int i = s; i < e; ++i) {
        x.values[i] += 0.8 * rng.normal();
        y.values[i] += 0.8 * rng.normal();
      }
    };
    burst(600, 624);
    burst(624 + gap, 648 + gap);
    return detect_onsets(x, y, z, RqaParams{}, gcfg);
  };

  auto merged = render(8);  // gap below one hop
  REQUIRE(merged.size() == 1);
  CHECK(merged[0].first <= 600);
  CHECK(merged[0].second >= 648 + 8);

  auto split = render(160);
  REQUIRE(split.size() == 2);
  CHECK(split[0].second <= split[1].first);
}

TEST_CASE("five rendered gestures are localized with IoU >= 0.5") {
  synthgen::CohortSpec spec;
  spec.n_subjects = 1;
  spec.episodes_per_subject = 5;
  spec.noise_sd_acc_g = 0.005;
  spec.seed = 3;
  auto cohort = synthgen::render_cohort(spec);
  const auto& rec = cohort.recordings[0];

  GestureConfig gcfg;
  gcfg.window_len_samples = 44;
  gcfg.overlap_fraction = 0.45;
  RqaParams rp;
  rp.delay = 2;
  rp.l_min = 4;
  auto pred = detect_onsets(rec.at(Channel::AccX), rec.at(Channel::AccY),
                            rec.at(Channel::AccZ), rp, gcfg);
  const auto& truth = cohort.truths[0].windows;
  REQUIRE(pred.size() == truth.size());

  std::vector<char> used(pred.size(), 0);
  for (const auto& t : truth) {
    double best = 0;
    int bi = -1;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (used[i]) continue;
      double lo = std::max<double>(t.start_sample, pred[i].first);
      double hi = std::min<double>(t.end_sample, pred[i].second);
      double inter = std::max(0.0, hi - lo);
      double uni = static_cast<double>(t.end_sample - t.start_sample) +
                   static_cast<double>(pred[i].second - pred[i].first) - inter;
      if (inter / uni > best) {
        best = inter / uni;
        bi = static_cast<int>(i);
      }
    }
    REQUIRE(bi >= 0);
    CHECK(best >= 0.5);
    used[bi] = 1;
  }
}

TEST_CASE("constant axis degenerates to zero spread") {
  std::vector<double> c(32, 2.0), zeros(32, 0.0);
  auto f = extract_features(window_from_axes(c, zeros, zeros), GestureConfig{});
  CHECK(f.values[0] == doctest::Approx(2.0));  // mean
  CHECK(f.values[1] == doctest::Approx(2.0));  // median
  CHECK(f.values[2] == doctest::Approx(2.0));  // rms
  CHECK(f.values[3] == doctest::Approx(0.0));  // std
  CHECK(f.values[4] == doctest::Approx(0.0));  // variance
  CHECK(f.values[5] == doctest::Approx(0.0));  // skewness, zero-variance rule
  CHECK(f.values[6] == doctest::Approx(0.0));  // kurtosis, zero-variance rule
  for (int i = 0; i < 32; ++i)
    CHECK(f.values[21 + i] == doctest::Approx(2.0));
}

TEST_CASE("statistics follow the documented estimators") {
  // Reference helper self-check against hand-computed values for [1,2,3,4]:
  // mean 2.5, unbiased variance 5/3, rms sqrt(7.5).
  RefStats hand = ref_stats({1, 2, 3, 4});
  CHECK(hand.mean == doctest::Approx(2.5));
  CHECK(hand.var == doctest::Approx(5.0 / 3.0));
  CHECK(hand.rms == doctest::Approx(std::sqrt(7.5)));
  CHECK(hand.median == doctest::Approx(2.5));
  CHECK(hand.skew == doctest::Approx(0.0));

  Rng rng(5);
  std::vector<double> x(48), y(48), z(48);
  for (int i = 0; i < 48; ++i) {
    x[i] = rng.normal() * 2.0 + 1.0;
    y[i] = rng.uniform(-1.0, 3.0);
    z[i] = std::sin(0.4 * i) + 0.1 * rng.normal();
  }
  auto f = extract_features(window_from_axes(x, y, z), GestureConfig{});
  const std::vector<double>* axes[3] = {&x, &y, &z};
  for (int a = 0; a < 3; ++a) {
    RefStats r = ref_stats(*axes[a]);
    CHECK(f.values[a * 7 + 0] == doctest::Approx(r.mean).epsilon(1e-12));
    CHECK(f.values[a * 7 + 1] == doctest::Approx(r.median).epsilon(1e-12));
    CHECK(f.values[a * 7 + 2] == doctest::Approx(r.rms).epsilon(1e-12));
    CHECK(f.values[a * 7 + 3] == doctest::Approx(r.sd).epsilon(1e-12));
    CHECK(f.values[a * 7 + 4] == doctest::Approx(r.var).epsilon(1e-12));
    CHECK(f.values[a * 7 + 5] == doctest::Approx(r.skew).epsilon(1e-10));
    CHECK(f.values[a * 7 + 6] == doctest::Approx(r.kurt).epsilon(1e-10));
  }
}

TEST_CASE("axes resample to exactly 32 points by linear interpolation") {
  std::vector<double> ramp(64), zeros(64, 0.0);
  for (int i = 0; i < 64; ++i) ramp[i] = static_cast<double>(i);
  auto f = extract_features(window_from_axes(ramp, zeros, zeros),
                            GestureConfig{});
  for (int i = 0; i < 32; ++i) {
    double expect = 63.0 * i / 31.0;  // endpoints preserved
    CHECK(f.values[21 + i] == doctest::Approx(expect).epsilon(1e-12));
  }
  CHECK(f.values[21 + 0] == doctest::Approx(0.0));
  CHECK(f.values[21 + 31] == doctest::Approx(63.0));
}

TEST_CASE("feature extraction needs 16 samples") {
  std::vector<double> tiny(8, 1.0);
  try {
    extract_features(window_from_axes(tiny, tiny, tiny), GestureConfig{});
    FAIL("expected WindowTooShort");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::WindowTooShort);
  }
}

namespace {

GestureFeatures blob_point(Rng& rng, double cx, double cy) {
  GestureFeatures f;
  f.values[0] = cx + 0.1 * rng.normal();
  f.values[7] = cy + 0.1 * rng.normal();
  return f;
}

}  // namespace

TEST_CASE("separable blobs train to 100% and recall their own labels") {
  Rng rng(1);
  std::vector<GestureFeatures> feats;
  std::vector<int> labels;
  for (int i = 0; i < 20; ++i) {
    feats.push_back(blob_point(rng, 0.0, 0.0));
    labels.push_back(0);
    feats.push_back(blob_point(rng, 4.0, 4.0));
    labels.push_back(3);
  }
  auto model = svm_train(feats, labels, 10.0, 0.0, rng);
  CHECK(model.classes == std::vector<int>{0, 3});
  REQUIRE(model.pairs.size() == 1);
  CHECK(model.pairs[0].kkt_gap <= 1e-3);
  for (double ay : model.pairs[0].alpha_y) CHECK(std::fabs(ay) <= 10.0 + 1e-9);
  for (std::size_t i = 0; i < feats.size(); ++i)
    CHECK(svm_predict(model, feats[i]).first == labels[i]);
}

TEST_CASE("single-class training set is rejected") {
  Rng rng(2);
  std::vector<GestureFeatures> feats;
  std::vector<int> labels;
  for (int i = 0; i < 6; ++i) {
    feats.push_back(blob_point(rng, 0.0, 0.0));
    labels.push_back(5);
  }
  try {
    svm_train(feats, labels, 10.0, 0.0, rng);
    FAIL("expected DegenerateTrainingSet");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateTrainingSet);
  }
}

TEST_CASE("xor arrangement needs the kernel and resolves at gamma 1") {
  Rng rng(3);
  std::vector<GestureFeatures> feats;
  std::vector<int> labels;
  const double corners[4][3] = {
      {0, 0, 0}, {1, 1, 0}, {0, 1, 1}, {1, 0, 1}};
  for (int rep = 0; rep < 8; ++rep) {
    for (const auto& c : corners) {
      feats.push_back(blob_point(rng, c[0], c[1]));
      labels.push_back(static_cast<int>(c[2]));
    }
  }
  auto model = svm_train(feats, labels, 10.0, 1.0, rng);
  CHECK(model.gamma == doctest::Approx(1.0));
  int correct = 0;
  for (std::size_t i = 0; i < feats.size(); ++i)
    if (svm_predict(model, feats[i]).first == labels[i]) ++correct;
  CHECK(correct == static_cast<int>(feats.size()));
}

TEST_CASE("vote ties resolve to the lowest label") {
  SvmModel m;
  m.gamma = 1.0;
  m.classes = {2, 5, 9};
  m.feat_mean.assign(kFeatureDim, 0.0);
  m.feat_std.assign(kFeatureDim, 1.0);
  SvmModel::PairClassifier p25, p29, p59;
  p25.class_a = 2;
  p25.class_b = 5;
  p25.bias = 1.0;  // votes 2
  p29.class_a = 2;
  p29.class_b = 9;
  p29.bias = -1.0;  // votes 9
  p59.class_a = 5;
  p59.class_b = 9;
  p59.bias = 1.0;  // votes 5
  m.pairs = {p25, p29, p59};
  auto [label, votes] = svm_predict(m, GestureFeatures{});
  CHECK(votes[2] == 1);
  CHECK(votes[5] == 1);
  CHECK(votes[9] == 1);
  CHECK(label == 2);
}

TEST_CASE("svm containers round-trip") {
  Rng rng(4);
  std::vector<GestureFeatures> feats;
  std::vector<int> labels;
  for (int i = 0; i < 12; ++i) {
    feats.push_back(blob_point(rng, 0.0, 0.0));
    labels.push_back(1);
    feats.push_back(blob_point(rng, 3.0, 0.0));
    labels.push_back(4);
    feats.push_back(blob_point(rng, 0.0, 3.0));
    labels.push_back(7);
  }
  auto model = svm_train(feats, labels, 10.0, 0.0, rng);
  auto path = (std::filesystem::temp_directory_path() / "svm_rt.bin").string();
  save_svm(model, path);
  auto loaded = load_svm(path);
  std::filesystem::remove(path);

  CHECK(loaded.c == model.c);
  CHECK(loaded.gamma == model.gamma);
  CHECK(loaded.classes == model.classes);
  CHECK(loaded.feat_mean == model.feat_mean);
  CHECK(loaded.feat_std == model.feat_std);
  REQUIRE(loaded.pairs.size() == model.pairs.size());
  for (std::size_t p = 0; p < model.pairs.size(); ++p) {
    CHECK(loaded.pairs[p].alpha_y == model.pairs[p].alpha_y);
    CHECK(loaded.pairs[p].support == model.pairs[p].support);
    CHECK(loaded.pairs[p].bias == model.pairs[p].bias);
  }
  for (const auto& f : feats)
    CHECK(svm_predict(loaded, f).first == svm_predict(model, f).first);
}
