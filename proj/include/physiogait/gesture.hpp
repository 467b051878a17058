#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "physiogait/core.hpp"

namespace physiogait::gesture {

struct RqaParams {
  int embed_dim = 3;
  int delay = 2;               // samples between embedding coordinates
  double epsilon_quantile = 0.10;
  int l_min = 2;               // minimum diagonal line length
};

struct RqaMeasures {
  double recurrence_rate = 0.0;
  double determinism = 0.0;
};

inline constexpr int kFeatureDim = 117;  // 7 stats x 3 axes + 32 samples x 3

/// Layout: axis-major. values[a*7 + k] for axis a in {x,y,z} holds
/// {mean, median, rms, std, variance, skewness, kurtosis}; values[21 + a*32 + i]
/// holds axis a linearly resampled to 32 samples.
struct GestureFeatures {
  std::array<double, kFeatureDim> values{};
};

/// One-vs-one RBF SVM. Features are standardized with the training-set
/// mean/std stored here; predict applies the same pipeline.
struct SvmModel {
  struct PairClassifier {
    int class_a = 0, class_b = 0;       // a < b; decision > 0 votes a
    std::vector<std::vector<double>> support;  // standardized feature rows
    std::vector<double> alpha_y;               // alpha_i * y_i, |alpha_i| <= C
    double bias = 0.0;
    double kkt_gap = 0.0;               // final SMO violation, <= tolerance
  };

  double c = 10.0;
  double gamma = 0.0;
  std::vector<int> classes;             // present labels, ascending
  std::vector<double> feat_mean, feat_std;
  std::vector<PairClassifier> pairs;
};

/// RR and DET of the delay-embedded window. The recurrence threshold is the
/// epsilon_quantile-th smallest pairwise distance, so RR self-tunes to about
/// that quantile and DET carries the dynamics signal.
RqaMeasures rqa_measures(const std::vector<double>& window,
                         const RqaParams& params);

/// Slides DET over the acceleration magnitude (window/hop from gcfg), flags
/// windows deviating from the trailing-20 median by more than 3 MAD, merges
/// consecutive flags and emits each run's sample extent, clamped to
/// [0.5 s, 3 s] (longer runs split into equal pieces). Returns sorted,
/// disjoint half-open [start, end) sample intervals on the 32 Hz grid.
std::vector<std::pair<std::size_t, std::size_t>> detect_onsets(
    const SensorStream& acc_x, const SensorStream& acc_y,
    const SensorStream& acc_z, const RqaParams& params,
    const GestureConfig& gcfg);

GestureFeatures extract_features(const GestureWindow& window,
                                 const GestureConfig& gcfg);

/// SMO to KKT tolerance 1e-3, one binary machine per class pair. gamma <= 0
/// selects 1/(dim * variance of the standardized matrix). rng is accepted for
/// interface stability; training is deterministic and never draws.
SvmModel svm_train(const std::vector<GestureFeatures>& features,
                   const std::vector<int>& labels, double c, double gamma,
                   Rng& rng);

/// Majority vote over the pairwise decisions; ties go to the lowest label.
/// votes is indexed by label 0..11.
std::pair<int, std::array<int, 12>> svm_predict(const SvmModel& model,
                                                const GestureFeatures& features);

void save_svm(const SvmModel& model, const std::string& path);
SvmModel load_svm(const std::string& path);

}  // namespace physiogait::gesture
