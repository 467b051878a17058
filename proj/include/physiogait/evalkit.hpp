#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "physiogait/core.hpp"
#include "physiogait/mmsnn.hpp"
#include "physiogait/synthgen.hpp"

// Metrics, cross-validated ablations, and the episode sweep.
namespace physiogait::evalkit {

struct EvalReport {
  std::uint64_t config_hash = 0;
  std::vector<std::vector<int>> confusion;  // [truth][predicted]
  double top1_accuracy = 0.0;
  double paper_accuracy = 0.0;  // micro one-vs-rest (TP+TN)/(TP+TN+FP+FN)
  double std_dev = 0.0;         // across folds; 0 for a single split
  double runtime_s = 0.0;
};

EvalReport accuracy_metrics(const std::vector<int>& predictions,
                            const std::vector<int>& truths, int n_classes);

// Summed confusion, fold-mean metrics, std_dev = sample std of fold top-1.
EvalReport aggregate_reports(const std::vector<EvalReport>& folds);

// Per-class accuracy conf[c][c]/rowsum; classes with no support get -1.
std::vector<double> per_class_accuracy(const EvalReport& report);

nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);

// Derives HR/BR from PPG and packages each subject's streams with its
// ground-truth gesture windows; class index = subject position.
std::vector<mmsnn::SubjectStreams> prepare_subjects(
    const synthgen::CohortData& cohort);

// All subjects' windows encoded once for a given encoder list,
// subject-major order.
struct EncodedCohort {
  std::vector<mmsnn::EncodedWindow> windows;
  int n_classes = 0;
};

EncodedCohort encode_cohort(const std::vector<mmsnn::SubjectStreams>& subjects,
                            const std::vector<mmsnn::EncoderSpec>& encoders);

// Round-robin per-subject fold assignment after a seeded shuffle; result[s][w]
// is the fold of subject s's w-th window. Every subject lands in every
// train split.
std::vector<std::vector<int>> fold_assignment(
    const std::vector<mmsnn::SubjectStreams>& subjects, int folds, Rng& rng);

// Trains on !is_test windows, evaluates on the rest. is_test is parallel to
// cohort.windows.
EvalReport evaluate_split(const EncodedCohort& cohort,
                          const mmsnn::ExperimentConfig& cfg,
                          const std::vector<char>& is_test, Rng& rng);

struct AblationRow {
  std::string name;
  std::uint64_t config_hash = 0;
  std::vector<EvalReport> folds;
  EvalReport summary;
};

std::vector<AblationRow> run_ablation(
    const std::vector<mmsnn::SubjectStreams>& subjects,
    const std::vector<mmsnn::ExperimentConfig>& configs, int folds, Rng& rng);

struct SweepPoint {
  int episodes = 0;
  double mean_top1 = 0.0;
  double std_top1 = 0.0;  // across subjects of the single model
};

std::vector<SweepPoint> episode_sweep(
    const std::vector<mmsnn::SubjectStreams>& subjects,
    const mmsnn::ExperimentConfig& config, const std::vector<int>& episode_grid,
    Rng& rng);

inline const std::vector<int>& default_episode_grid() {
  static const std::vector<int> grid{50, 100, 200, 300, 400, 600};
  return grid;
}

// One row per config x fold.
std::string ablation_csv(const std::vector<AblationRow>& rows);
nlohmann::json ablation_json(const std::vector<AblationRow>& rows);
// episodes,mean_top1,std_top1 rows (x, y, err triples for plotting).
std::string sweep_csv(const std::vector<SweepPoint>& points);
nlohmann::json sweep_json(const std::vector<SweepPoint>& points);

}  // namespace physiogait::evalkit
