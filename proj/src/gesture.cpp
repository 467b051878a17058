#include "physiogait/gesture.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "physiogait/container.hpp"

namespace physiogait::gesture {

using nlohmann::json;

namespace {

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  double lo = *std::max_element(v.begin(), v.begin() + mid);
  return 0.5 * (lo + hi);
}

}  // namespace

RqaMeasures rqa_measures(const std::vector<double>& window,
                         const RqaParams& params) {
  const int m = params.embed_dim;
  const int tau = params.delay;
  if (m < 1 || tau < 1 || params.epsilon_quantile <= 0.0 ||
      params.epsilon_quantile >= 1.0)
    fail(ErrorCode::InvalidArgument, "bad RQA parameters");
  const auto len = static_cast<long>(window.size());
  if (len < static_cast<long>(m) * tau + 2)
    fail(ErrorCode::WindowTooShort,
         "RQA needs at least embed_dim*delay + 2 samples, got " +
             std::to_string(len));

  const auto n = static_cast<std::size_t>(len - (m - 1) * tau);
  auto dist = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (int k = 0; k < m; ++k) {
      double d = window[i + static_cast<std::size_t>(k) * tau] -
                 window[j + static_cast<std::size_t>(k) * tau];
      s += d * d;
    }
    return std::sqrt(s);
  };

  std::vector<double> dists;
  dists.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) dists.push_back(dist(i, j));
  std::size_t qi = std::min(
      dists.size() - 1,
      static_cast<std::size_t>(params.epsilon_quantile *
                               static_cast<double>(dists.size())));
  std::nth_element(dists.begin(), dists.begin() + qi, dists.end());
  const double eps = dists[qi];

  // Upper triangle of the recurrence matrix; symmetry makes it representative.
  std::vector<std::uint8_t> rec(n * n, 0);
  std::size_t recurrent = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (dist(i, j) <= eps) {
        rec[i * n + j] = 1;
        ++recurrent;
      }
    }
  }

  RqaMeasures out;
  const double total_pairs = 0.5 * static_cast<double>(n) * (n - 1);
  out.recurrence_rate = recurrent / total_pairs;

  if (recurrent == 0) return out;
  std::size_t on_lines = 0;
  for (std::size_t off = 1; off < n; ++off) {
    std::size_t run = 0;
    for (std::size_t i = 0; i + off < n; ++i) {
      if (rec[i * n + i + off]) {
        ++run;
      } else {
        if (run >= static_cast<std::size_t>(params.l_min)) on_lines += run;
        run = 0;
      }
    }
    if (run >= static_cast<std::size_t>(params.l_min)) on_lines += run;
  }
  out.determinism = static_cast<double>(on_lines) / recurrent;
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> detect_onsets(
    const SensorStream& acc_x, const SensorStream& acc_y,
    const SensorStream& acc_z, const RqaParams& params,
    const GestureConfig& gcfg) {
  check_stream(acc_x);
  check_stream(acc_y);
  check_stream(acc_z);
  const std::size_t n = acc_x.values.size();
  if (acc_y.values.size() != n || acc_z.values.size() != n)
    fail(ErrorCode::LengthMismatch, "accelerometer axes differ in length");

  const auto win = static_cast<std::size_t>(gcfg.window_len_samples);
  const auto hop = static_cast<std::size_t>(gcfg.hop_samples());
  if (n < win + hop)
    fail(ErrorCode::StreamTooShort, "need at least two analysis windows");

  std::vector<double> mag(n);
  for (std::size_t i = 0; i < n; ++i)
    mag[i] = std::sqrt(acc_x.values[i] * acc_x.values[i] +
                       acc_y.values[i] * acc_y.values[i] +
                       acc_z.values[i] * acc_z.values[i]);

  const std::size_t n_win = (n - win) / hop + 1;
  std::vector<double> det(n_win);
  for (std::size_t t = 0; t < n_win; ++t) {
    std::vector<double> w(mag.begin() + t * hop, mag.begin() + t * hop + win);
    det[t] = rqa_measures(w, params).determinism;
  }

  // Trailing median/MAD over up to 20 prior windows; the first few windows
  // cannot flag until enough history exists.
  constexpr std::size_t kHistory = 20;
  constexpr std::size_t kMinHistory = 8;
  std::vector<char> flagged(n_win, 0);
  for (std::size_t t = kMinHistory; t < n_win; ++t) {
    std::size_t h0 = t > kHistory ? t - kHistory : 0;
    std::vector<double> hist(det.begin() + h0, det.begin() + t);
    double med = median_of(hist);
    for (double& v : hist) v = std::fabs(v - med);
    double mad = std::max(median_of(hist), 1e-3);
    if (std::fabs(det[t] - med) > 3.0 * mad) flagged[t] = 1;
  }

  const auto min_span = static_cast<std::size_t>(std::lround(0.5 * acc_x.sample_rate_hz));
  const auto max_span = static_cast<std::size_t>(std::lround(3.0 * acc_x.sample_rate_hz));
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t t = 0; t < n_win;) {
    if (!flagged[t]) {
      ++t;
      continue;
    }
    std::size_t t_end = t;
    while (t_end + 1 < n_win && flagged[t_end + 1]) ++t_end;
    std::size_t start = t * hop;
    std::size_t end = t_end * hop + win;

    std::size_t span = end - start;
    if (span < min_span) {
      end = std::min(n, start + min_span);
      span = end - start;
    }
    if (span > max_span) {
      auto pieces = (span + max_span - 1) / max_span;
      for (std::size_t p = 0; p < pieces; ++p) {
        std::size_t a = start + span * p / pieces;
        std::size_t b = start + span * (p + 1) / pieces;
        out.emplace_back(a, b);
      }
    } else {
      out.emplace_back(start, end);
    }
    t = t_end + 1;
  }
  return out;
}

GestureFeatures extract_features(const GestureWindow& window,
                                 const GestureConfig& gcfg) {
  (void)gcfg;
  const Channel axes[3] = {Channel::AccX, Channel::AccY, Channel::AccZ};
  GestureFeatures out;
  for (int a = 0; a < 3; ++a) {
    auto it = window.modality_slices.find(axes[a]);
    if (it == window.modality_slices.end())
      fail(ErrorCode::InvalidArgument,
           std::string("window lacks ") + channel_name(axes[a]));
    const std::vector<double>& v = it->second.values;
    const std::size_t n = v.size();
    if (n < 16)
      fail(ErrorCode::WindowTooShort,
           "feature extraction needs >= 16 samples, got " + std::to_string(n));

    double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double m2 = 0.0, m3 = 0.0, m4 = 0.0, sumsq = 0.0;
    for (double x : v) {
      double d = x - mean;
      m2 += d * d;
      m3 += d * d * d;
      m4 += d * d * d * d;
      sumsq += x * x;
    }
    double var_pop = m2 / n;
    m3 /= n;
    m4 /= n;
    double var = n > 1 ? m2 / (n - 1) : 0.0;  // unbiased

    double* s = &out.values[a * 7];
    s[0] = mean;
    s[1] = median_of(v);
    s[2] = std::sqrt(sumsq / n);
    s[3] = std::sqrt(var);
    s[4] = var;
    if (var_pop > 1e-24) {
      s[5] = m3 / std::pow(var_pop, 1.5);
      s[6] = m4 / (var_pop * var_pop);  // non-excess
    } else {
      s[5] = 0.0;
      s[6] = 0.0;
    }

    double* r = &out.values[21 + a * 32];
    for (int i = 0; i < 32; ++i) {
      double pos = static_cast<double>(i) * (n - 1) / 31.0;
      auto lo = static_cast<std::size_t>(pos);
      double frac = pos - static_cast<double>(lo);
      r[i] = frac == 0.0 ? v[lo] : v[lo] * (1.0 - frac) + v[lo + 1] * frac;
    }
  }
  for (double x : out.values)
    if (!std::isfinite(x)) fail(ErrorCode::NonFiniteSample, "non-finite feature");
  return out;
}

namespace {

constexpr double kKktTol = 1e-3;

struct PairProblem {
  std::vector<std::size_t> rows;  // indices into the standardized matrix
  std::vector<double> y;          // +1 for class_a, -1 for class_b
};

// SMO with maximal-violating-pair working-set selection on the dual
//   min 1/2 sum a_i a_j y_i y_j K_ij - sum a_i,  0 <= a <= C, sum a_i y_i = 0.
void solve_pair(const std::vector<std::vector<double>>& x,
                const PairProblem& prob, double c, double gamma,
                SvmModel::PairClassifier& out) {
  const std::size_t n = prob.rows.size();
  std::vector<double> gram(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& xi = x[prob.rows[i]];
    for (std::size_t j = i; j < n; ++j) {
      const auto& xj = x[prob.rows[j]];
      double d2 = 0.0;
      for (std::size_t k = 0; k < xi.size(); ++k) {
        double d = xi[k] - xj[k];
        d2 += d * d;
      }
      gram[i * n + j] = gram[j * n + i] = std::exp(-gamma * d2);
    }
  }

  std::vector<double> alpha(n, 0.0), g(n, 0.0);  // g_i = sum_j a_j y_j K_ij
  double gap = std::numeric_limits<double>::infinity();
  const std::size_t max_steps = 200000;
  for (std::size_t step = 0; step < max_steps; ++step) {
    // -E_t = y_t - g_t; i maximizes it over I_up, j minimizes over I_low.
    double best_up = -std::numeric_limits<double>::infinity();
    double best_low = std::numeric_limits<double>::infinity();
    std::size_t i = n, j = n;
    for (std::size_t t = 0; t < n; ++t) {
      double v = prob.y[t] - g[t];
      bool in_up = prob.y[t] > 0 ? alpha[t] < c : alpha[t] > 0;
      bool in_low = prob.y[t] > 0 ? alpha[t] > 0 : alpha[t] < c;
      if (in_up && v > best_up) {
        best_up = v;
        i = t;
      }
      if (in_low && v < best_low) {
        best_low = v;
        j = t;
      }
    }
    gap = best_up - best_low;
    if (i == n || j == n || gap <= kKktTol) break;

    double eta = gram[i * n + i] + gram[j * n + j] - 2.0 * gram[i * n + j];
    eta = std::max(eta, 1e-12);
    double yi = prob.y[i], yj = prob.y[j];
    double ei = g[i] - yi, ej = g[j] - yj;
    double aj_old = alpha[j], ai_old = alpha[i];
    double lo, hi;
    if (yi != yj) {
      lo = std::max(0.0, aj_old - ai_old);
      hi = std::min(c, c + aj_old - ai_old);
    } else {
      lo = std::max(0.0, ai_old + aj_old - c);
      hi = std::min(c, ai_old + aj_old);
    }
    double aj = std::clamp(aj_old + yj * (ei - ej) / eta, lo, hi);
    double ai = ai_old + yi * yj * (aj_old - aj);
    alpha[i] = ai;
    alpha[j] = aj;
    double di = yi * (ai - ai_old), dj = yj * (aj - aj_old);
    for (std::size_t t = 0; t < n; ++t) g[t] += di * gram[i * n + t] + dj * gram[j * n + t];
  }
  out.kkt_gap = std::min(gap, 1e9);

  // Bias from free support vectors when any exist, else the bound midpoint.
  double b = 0.0;
  std::size_t free_count = 0;
  for (std::size_t t = 0; t < n; ++t) {
    if (alpha[t] > 1e-9 && alpha[t] < c - 1e-9) {
      b += prob.y[t] - g[t];
      ++free_count;
    }
  }
  if (free_count > 0) {
    b /= static_cast<double>(free_count);
  } else {
    double up = -std::numeric_limits<double>::infinity();
    double low = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < n; ++t) {
      double v = prob.y[t] - g[t];
      bool in_up = prob.y[t] > 0 ? alpha[t] < c : alpha[t] > 0;
      bool in_low = prob.y[t] > 0 ? alpha[t] > 0 : alpha[t] < c;
      if (in_up) up = std::max(up, v);
      if (in_low) low = std::min(low, v);
    }
    b = 0.5 * (up + low);
  }
  out.bias = b;

  for (std::size_t t = 0; t < n; ++t) {
    if (alpha[t] > 1e-9) {
      out.support.push_back(x[prob.rows[t]]);
      out.alpha_y.push_back(alpha[t] * prob.y[t]);
    }
  }
}

double pair_decision(const SvmModel& model, const SvmModel::PairClassifier& pc,
                     const std::vector<double>& z) {
  double f = pc.bias;
  for (std::size_t s = 0; s < pc.support.size(); ++s) {
    double d2 = 0.0;
    const auto& sv = pc.support[s];
    for (std::size_t k = 0; k < sv.size(); ++k) {
      double d = sv[k] - z[k];
      d2 += d * d;
    }
    f += pc.alpha_y[s] * std::exp(-model.gamma * d2);
  }
  return f;
}

std::vector<double> standardize(const SvmModel& model,
                                const GestureFeatures& f) {
  std::vector<double> z(kFeatureDim);
  for (int k = 0; k < kFeatureDim; ++k)
    z[k] = (f.values[k] - model.feat_mean[k]) / model.feat_std[k];
  return z;
}

}  // namespace

SvmModel svm_train(const std::vector<GestureFeatures>& features,
                   const std::vector<int>& labels, double c, double gamma,
                   Rng& rng) {
  (void)rng;  // deterministic; kept for interface stability
  if (features.size() != labels.size())
    fail(ErrorCode::LengthMismatch, "features/labels size mismatch");
  const std::size_t n = features.size();

  std::vector<int> classes;
  for (int l : labels) {
    if (l < 0 || l > 11) fail(ErrorCode::InvalidArgument, "label out of [0,11]");
    if (std::find(classes.begin(), classes.end(), l) == classes.end())
      classes.push_back(l);
  }
  std::sort(classes.begin(), classes.end());
  if (classes.size() < 2)
    fail(ErrorCode::DegenerateTrainingSet, "need at least two classes");
  for (int cl : classes) {
    auto cnt = std::count(labels.begin(), labels.end(), cl);
    if (cnt < 2)
      fail(ErrorCode::DegenerateTrainingSet,
           "class " + std::to_string(cl) + " has fewer than 2 samples");
  }

  SvmModel model;
  model.c = c;
  model.classes = classes;
  model.feat_mean.assign(kFeatureDim, 0.0);
  model.feat_std.assign(kFeatureDim, 1.0);
  for (const auto& f : features)
    for (int k = 0; k < kFeatureDim; ++k) model.feat_mean[k] += f.values[k];
  for (int k = 0; k < kFeatureDim; ++k) model.feat_mean[k] /= static_cast<double>(n);
  for (int k = 0; k < kFeatureDim; ++k) {
    double ss = 0.0;
    for (const auto& f : features) {
      double d = f.values[k] - model.feat_mean[k];
      ss += d * d;
    }
    double sd = std::sqrt(ss / static_cast<double>(n));
    model.feat_std[k] = sd > 1e-12 ? sd : 1.0;
  }

  std::vector<std::vector<double>> x(n, std::vector<double>(kFeatureDim));
  double total_var = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (int k = 0; k < kFeatureDim; ++k)
      x[i][k] = (features[i].values[k] - model.feat_mean[k]) / model.feat_std[k];
  {
    double mean_all = 0.0;
    for (const auto& row : x)
      for (double v : row) mean_all += v;
    mean_all /= static_cast<double>(n * kFeatureDim);
    for (const auto& row : x)
      for (double v : row) total_var += (v - mean_all) * (v - mean_all);
    total_var /= static_cast<double>(n * kFeatureDim);
  }
  model.gamma = gamma > 0.0 ? gamma
                            : 1.0 / (kFeatureDim * std::max(total_var, 1e-12));

  for (std::size_t a = 0; a < classes.size(); ++a) {
    for (std::size_t b = a + 1; b < classes.size(); ++b) {
      PairProblem prob;
      for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] == classes[a]) {
          prob.rows.push_back(i);
          prob.y.push_back(1.0);
        } else if (labels[i] == classes[b]) {
          prob.rows.push_back(i);
          prob.y.push_back(-1.0);
        }
      }
      SvmModel::PairClassifier pc;
      pc.class_a = classes[a];
      pc.class_b = classes[b];
      solve_pair(x, prob, c, model.gamma, pc);
      model.pairs.push_back(std::move(pc));
    }
  }
  return model;
}

std::pair<int, std::array<int, 12>> svm_predict(const SvmModel& model,
                                                const GestureFeatures& features) {
  if (model.pairs.empty()) fail(ErrorCode::InvalidArgument, "untrained model");
  std::vector<double> z = standardize(model, features);
  std::array<int, 12> votes{};
  for (const auto& pc : model.pairs) {
    double f = pair_decision(model, pc, z);
    votes[f >= 0.0 ? pc.class_a : pc.class_b] += 1;
  }
  int best = 0;
  for (int l = 1; l < 12; ++l)
    if (votes[l] > votes[best]) best = l;  // ties keep the lowest label
  return {best, votes};
}

void save_svm(const SvmModel& model, const std::string& path) {
  json header;
  header["format_version"] = 1;
  header["kind"] = "svm";
  header["c"] = model.c;
  header["gamma"] = model.gamma;
  header["classes"] = model.classes;
  json pairs = json::array();
  for (const auto& pc : model.pairs)
    pairs.push_back({{"class_a", pc.class_a},
                     {"class_b", pc.class_b},
                     {"n_sv", pc.support.size()},
                     {"bias", pc.bias},
                     {"kkt_gap", pc.kkt_gap}});
  header["pairs"] = pairs;

  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  out << header.dump() << "\n";
  container::write_f64(out, model.feat_mean.data(), model.feat_mean.size());
  container::write_f64(out, model.feat_std.data(), model.feat_std.size());
  for (const auto& pc : model.pairs) {
    container::write_f64(out, pc.alpha_y.data(), pc.alpha_y.size());
    for (const auto& sv : pc.support)
      container::write_f64(out, sv.data(), sv.size());
  }
  if (!out) fail(ErrorCode::IoError, "write failed: " + path);
}

SvmModel load_svm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::MissingFile, "cannot open " + path);
  std::string line;
  std::getline(in, line);
  json header = json::parse(line, nullptr, false);
  if (header.is_discarded() || header.value("format_version", 0) != 1 ||
      header.value("kind", "") != "svm")
    fail(ErrorCode::MalformedHeader, "bad svm container header");

  SvmModel model;
  model.c = header["c"].get<double>();
  model.gamma = header["gamma"].get<double>();
  model.classes = header["classes"].get<std::vector<int>>();
  model.feat_mean.resize(kFeatureDim);
  model.feat_std.resize(kFeatureDim);
  container::read_f64(in, model.feat_mean.data(), kFeatureDim);
  container::read_f64(in, model.feat_std.data(), kFeatureDim);
  for (const auto& p : header["pairs"]) {
    SvmModel::PairClassifier pc;
    pc.class_a = p["class_a"].get<int>();
    pc.class_b = p["class_b"].get<int>();
    pc.bias = p["bias"].get<double>();
    pc.kkt_gap = p.value("kkt_gap", 0.0);
    auto n_sv = p["n_sv"].get<std::size_t>();
    pc.alpha_y.resize(n_sv);
    container::read_f64(in, pc.alpha_y.data(), n_sv);
    pc.support.assign(n_sv, std::vector<double>(kFeatureDim));
    for (auto& sv : pc.support) container::read_f64(in, sv.data(), kFeatureDim);
    model.pairs.push_back(std::move(pc));
  }
  return model;
}

}  // namespace physiogait::gesture
