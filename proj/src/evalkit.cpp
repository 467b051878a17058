#include "physiogait/evalkit.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "physiogait/physio.hpp"

namespace physiogait::evalkit {

namespace {

double sample_std(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / (xs.size() - 1));
}

double now_s() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

}  // namespace

EvalReport accuracy_metrics(const std::vector<int>& predictions,
                            const std::vector<int>& truths, int n_classes) {
  if (predictions.size() != truths.size() || predictions.empty())
    fail(ErrorCode::LengthMismatch,
         "predictions and truths must have equal nonzero length");
  if (n_classes < 1) fail(ErrorCode::InvalidArgument, "n_classes must be >= 1");

  EvalReport report;
  report.confusion.assign(n_classes, std::vector<int>(n_classes, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    int t = truths[i], p = predictions[i];
    if (t < 0 || t >= n_classes || p < 0 || p >= n_classes)
      fail(ErrorCode::InvalidArgument, "label outside [0, n_classes)");
    ++report.confusion[t][p];
    if (t == p) ++correct;
  }
  const double total = static_cast<double>(truths.size());
  report.top1_accuracy = static_cast<double>(correct) / total;

  // Micro one-vs-rest: each class contributes a binary confusion table;
  // paper_accuracy = sum(TP+TN) / sum(all four cells).
  long tp_tn = 0;
  for (int c = 0; c < n_classes; ++c) {
    long tp = report.confusion[c][c];
    long fn = 0, fp = 0;
    for (int k = 0; k < n_classes; ++k) {
      if (k == c) continue;
      fn += report.confusion[c][k];
      fp += report.confusion[k][c];
    }
    long tn = static_cast<long>(total) - tp - fn - fp;
    tp_tn += tp + tn;
  }
  report.paper_accuracy = static_cast<double>(tp_tn) / (n_classes * total);
  return report;
}

EvalReport aggregate_reports(const std::vector<EvalReport>& folds) {
  if (folds.empty()) fail(ErrorCode::InvalidArgument, "no fold reports");
  EvalReport out;
  out.config_hash = folds.front().config_hash;
  const int k = static_cast<int>(folds.front().confusion.size());
  out.confusion.assign(k, std::vector<int>(k, 0));
  std::vector<double> top1s;
  for (const EvalReport& r : folds) {
    if (static_cast<int>(r.confusion.size()) != k)
      fail(ErrorCode::ShapeMismatch, "fold confusion sizes differ");
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) out.confusion[i][j] += r.confusion[i][j];
    out.top1_accuracy += r.top1_accuracy;
    out.paper_accuracy += r.paper_accuracy;
    out.runtime_s += r.runtime_s;
    top1s.push_back(r.top1_accuracy);
  }
  out.top1_accuracy /= folds.size();
  out.paper_accuracy /= folds.size();
  out.std_dev = sample_std(top1s);
  return out;
}

std::vector<double> per_class_accuracy(const EvalReport& report) {
  std::vector<double> out;
  for (const auto& row : report.confusion) {
    long support = std::accumulate(row.begin(), row.end(), 0L);
    std::size_t c = out.size();
    out.push_back(support > 0 ? static_cast<double>(row[c]) / support : -1.0);
  }
  return out;
}

nlohmann::json report_to_json(const EvalReport& report) {
  std::ostringstream hex;
  hex << std::hex << report.config_hash;
  return {{"config_hash", hex.str()},
          {"confusion", report.confusion},
          {"top1_accuracy", report.top1_accuracy},
          {"paper_accuracy", report.paper_accuracy},
          {"std_dev", report.std_dev},
          {"runtime_s", report.runtime_s}};
}

EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport report;
  report.config_hash =
      std::stoull(j.at("config_hash").get<std::string>(), nullptr, 16);
  report.confusion = j.at("confusion").get<std::vector<std::vector<int>>>();
  report.top1_accuracy = j.at("top1_accuracy").get<double>();
  report.paper_accuracy = j.at("paper_accuracy").get<double>();
  report.std_dev = j.at("std_dev").get<double>();
  report.runtime_s = j.at("runtime_s").get<double>();
  return report;
}

std::vector<mmsnn::SubjectStreams> prepare_subjects(
    const synthgen::CohortData& cohort) {
  std::vector<mmsnn::SubjectStreams> out;
  for (std::size_t i = 0; i < cohort.recordings.size(); ++i) {
    const Recording& rec = cohort.recordings[i];
    mmsnn::SubjectStreams subj;
    subj.class_index = static_cast<int>(i);
    subj.acc_x = rec.at(Channel::AccX);
    subj.acc_y = rec.at(Channel::AccY);
    subj.acc_z = rec.at(Channel::AccZ);
    subj.ppg = rec.at(Channel::Ppg);
    subj.eda = rec.at(Channel::Eda);
    PulseTrain pulses = detect_pulses(subj.ppg);
    subj.hr = hr_stream(pulses, 4.0);
    subj.br = br_stream(subj.ppg, pulses).stream;
    subj.windows = cohort.truths[i].windows;
    out.push_back(std::move(subj));
  }
  return out;
}

EncodedCohort encode_cohort(const std::vector<mmsnn::SubjectStreams>& subjects,
                            const std::vector<mmsnn::EncoderSpec>& encoders) {
  EncodedCohort cohort;
  cohort.n_classes = static_cast<int>(subjects.size());
  for (const auto& subj : subjects) {
    auto enc = mmsnn::encode_windows(subj, encoders);
    for (auto& w : enc) cohort.windows.push_back(std::move(w));
  }
  return cohort;
}

std::vector<std::vector<int>> fold_assignment(
    const std::vector<mmsnn::SubjectStreams>& subjects, int folds, Rng& rng) {
  if (folds < 2) fail(ErrorCode::InvalidArgument, "folds must be >= 2");
  std::vector<std::vector<int>> out;
  for (const auto& subj : subjects) {
    const std::size_t n = subj.windows.size();
    if (n < static_cast<std::size_t>(folds))
      fail(ErrorCode::InsufficientData,
           "subject has fewer windows than folds");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    std::vector<int> assign(n, 0);
    for (std::size_t k = 0; k < n; ++k)
      assign[order[k]] = static_cast<int>(k % folds);
    out.push_back(std::move(assign));
  }
  return out;
}

EvalReport evaluate_split(const EncodedCohort& cohort,
                          const mmsnn::ExperimentConfig& cfg,
                          const std::vector<char>& is_test, Rng& rng) {
  if (is_test.size() != cohort.windows.size())
    fail(ErrorCode::LengthMismatch, "test mask does not match cohort");
  const double t0 = now_s();

  std::vector<std::size_t> train_pool;
  for (std::size_t i = 0; i < is_test.size(); ++i)
    if (!is_test[i]) train_pool.push_back(i);

  auto pairs = mmsnn::make_pairs(cohort.windows, train_pool, cfg.episodes,
                                 cfg.ratio_similar, rng);
  auto model = mmsnn::build_model<float>(cfg.encoders, cohort.n_classes, rng,
                                         mmsnn::ModelDims{}, cfg.margin,
                                         cfg.lambda_c, cfg.lambda_id);
  mmsnn::train(model, cohort.windows, std::move(pairs), cfg.epochs, cfg.batch,
               cfg.lr, rng);

  std::vector<int> predictions, truths;
  for (std::size_t i = 0; i < is_test.size(); ++i) {
    if (!is_test[i]) continue;
    auto [cls, probs] = mmsnn::predict_identity(model, cohort.windows[i]);
    (void)probs;
    predictions.push_back(cls);
    truths.push_back(cohort.windows[i].class_index);
  }
  EvalReport report = accuracy_metrics(predictions, truths, cohort.n_classes);
  report.config_hash = mmsnn::config_hash(cfg);
  report.runtime_s = now_s() - t0;
  return report;
}

std::vector<AblationRow> run_ablation(
    const std::vector<mmsnn::SubjectStreams>& subjects,
    const std::vector<mmsnn::ExperimentConfig>& configs, int folds, Rng& rng) {
  std::vector<AblationRow> rows;
  if (configs.empty()) return rows;
  // One partition shared by every config keeps rows comparable.
  Rng fold_rng = rng.split(1);
  auto assignment = fold_assignment(subjects, folds, fold_rng);

  for (std::size_t c = 0; c < configs.size(); ++c) {
    const auto& cfg = configs[c];
    AblationRow row;
    row.name = mmsnn::display_name(cfg);
    row.config_hash = mmsnn::config_hash(cfg);
    EncodedCohort cohort = encode_cohort(subjects, cfg.encoders);
    for (int f = 0; f < folds; ++f) {
      std::vector<char> is_test;
      for (std::size_t s = 0; s < subjects.size(); ++s)
        for (int a : assignment[s]) is_test.push_back(a == f ? 1 : 0);
      Rng run_rng = Rng(cfg.seed).split(100 + static_cast<std::uint64_t>(f));
      row.folds.push_back(evaluate_split(cohort, cfg, is_test, run_rng));
    }
    row.summary = aggregate_reports(row.folds);
    rows.push_back(std::move(row));
    log_info("ablation " + rows.back().name + ": top1 " +
             std::to_string(rows.back().summary.top1_accuracy));
  }
  return rows;
}

std::vector<SweepPoint> episode_sweep(
    const std::vector<mmsnn::SubjectStreams>& subjects,
    const mmsnn::ExperimentConfig& config, const std::vector<int>& episode_grid,
    Rng& rng) {
  if (episode_grid.empty())
    fail(ErrorCode::InvalidArgument, "empty episode grid");
  std::vector<int> grid = episode_grid;
  std::sort(grid.begin(), grid.end());

  // A fixed holdout (fold 0 of 5) keeps the curve comparable across points.
  Rng fold_rng = rng.split(1);
  auto assignment = fold_assignment(subjects, 5, fold_rng);
  std::vector<char> is_test;
  for (std::size_t s = 0; s < subjects.size(); ++s)
    for (int a : assignment[s]) is_test.push_back(a == 0 ? 1 : 0);

  EncodedCohort cohort = encode_cohort(subjects, config.encoders);
  std::vector<SweepPoint> points;
  for (int episodes : grid) {
    mmsnn::ExperimentConfig cfg = config;
    cfg.episodes = episodes;
    Rng run_rng =
        Rng(config.seed).split(2000 + static_cast<std::uint64_t>(episodes));
    EvalReport report = evaluate_split(cohort, cfg, is_test, run_rng);
    std::vector<double> per_subject;
    for (double a : per_class_accuracy(report))
      if (a >= 0.0) per_subject.push_back(a);
    SweepPoint point;
    point.episodes = episodes;
    point.mean_top1 = report.top1_accuracy;
    point.std_top1 = sample_std(per_subject);
    points.push_back(point);
    log_info("sweep episodes=" + std::to_string(episodes) + ": top1 " +
             std::to_string(point.mean_top1));
  }
  return points;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "config,fold,top1_accuracy,paper_accuracy,runtime_s\n";
  for (const auto& row : rows)
    for (std::size_t f = 0; f < row.folds.size(); ++f)
      out << row.name << ',' << f << ',' << row.folds[f].top1_accuracy << ','
          << row.folds[f].paper_accuracy << ',' << row.folds[f].runtime_s
          << '\n';
  return out.str();
}

nlohmann::json ablation_json(const std::vector<AblationRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& row : rows) {
    nlohmann::json folds = nlohmann::json::array();
    for (const auto& f : row.folds) folds.push_back(report_to_json(f));
    std::ostringstream hex;
    hex << std::hex << row.config_hash;
    out.push_back({{"config", row.name},
                   {"config_hash", hex.str()},
                   {"folds", folds},
                   {"summary", report_to_json(row.summary)}});
  }
  return out;
}

std::string sweep_csv(const std::vector<SweepPoint>& points) {
  std::ostringstream out;
  out << "episodes,mean_top1,std_top1\n";
  for (const auto& p : points)
    out << p.episodes << ',' << p.mean_top1 << ',' << p.std_top1 << '\n';
  return out.str();
}

nlohmann::json sweep_json(const std::vector<SweepPoint>& points) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& p : points)
    out.push_back({{"episodes", p.episodes},
                   {"mean_top1", p.mean_top1},
                   {"std_top1", p.std_top1}});
  return out;
}

}  // namespace physiogait::evalkit
