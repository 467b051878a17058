#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "physiogait/core.hpp"
#include "physiogait/evalkit.hpp"
#include "physiogait/gesture.hpp"
#include "physiogait/ingest.hpp"
#include "physiogait/mmsnn.hpp"
#include "physiogait/physio.hpp"
#include "physiogait/rpimage.hpp"
#include "physiogait/scdecomp.hpp"
#include "physiogait/synthgen.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace physiogait;

namespace {

struct GlobalOpts {
  std::uint64_t seed = 42;
  bool seed_given = false;
  bool deterministic = true;
  int threads = 1;
  std::string log_level = "info";
};

LogLevel parse_log_level(const std::string& name) {
  if (name == "error") return LogLevel::Error;
  if (name == "warn") return LogLevel::Warn;
  if (name == "info") return LogLevel::Info;
  if (name == "debug") return LogLevel::Debug;
  throw CLI::ValidationError("--log-level",
                             "expected error|warn|info|debug, got " + name);
}

void announce(const std::string& subcommand, const json& resolved) {
  log_info(subcommand + " config: " + resolved.dump());
}

// All outputs go through a temp sibling + rename so readers never observe a
// half-written artifact.
fs::path temp_sibling(const fs::path& target) {
  fs::path dir = target.parent_path();
  if (dir.empty()) dir = ".";
  return dir / (".tmp." + target.filename().string());
}

template <class Writer>
void atomic_path(const fs::path& target, Writer&& writer) {
  fs::path tmp = temp_sibling(target);
  fs::remove_all(tmp);
  writer(tmp);
  if (fs::exists(target)) fs::remove_all(target);
  fs::rename(tmp, target);
}

void atomic_write_text(const fs::path& target, const std::string& content) {
  atomic_path(target, [&](const fs::path& tmp) {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) fail(ErrorCode::IoError, "cannot write " + tmp.string());
    out << content;
    if (!out) fail(ErrorCode::IoError, "short write to " + tmp.string());
  });
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::MissingFile, "cannot open " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded())
    fail(ErrorCode::MalformedHeader, "invalid JSON in " + path.string());
  return j;
}

std::vector<GestureWindow> windows_from_json(const json& arr,
                                             const std::string& subject_id) {
  std::vector<GestureWindow> out;
  for (const auto& w : arr) {
    GestureWindow g;
    g.subject_id = subject_id;
    g.start_sample = w.at("start_sample").get<std::size_t>();
    g.end_sample = w.at("end_sample").get<std::size_t>();
    g.gesture_label = w.value("gesture_label", -1);
    out.push_back(std::move(g));
  }
  return out;
}

// A cohort directory as written by `synth`: one E4 folder per subject with a
// truth.json sidecar. Subjects are ordered by folder name; class index =
// position.
std::vector<mmsnn::SubjectStreams> load_cohort_dir(const fs::path& dir) {
  std::vector<fs::path> folders;
  if (!fs::is_directory(dir))
    fail(ErrorCode::MissingFile, dir.string() + " is not a directory");
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && fs::exists(e.path() / "truth.json"))
      folders.push_back(e.path());
  std::sort(folders.begin(), folders.end());
  if (folders.empty())
    fail(ErrorCode::MissingFile,
         "no subject folders with truth.json under " + dir.string());

  std::vector<mmsnn::SubjectStreams> subjects;
  for (const fs::path& folder : folders) {
    Recording rec = parse_e4_folder(folder);
    json truth = read_json_file(folder / "truth.json");
    mmsnn::SubjectStreams subj;
    subj.class_index = static_cast<int>(subjects.size());
    subj.acc_x = rec.at(Channel::AccX);
    subj.acc_y = rec.at(Channel::AccY);
    subj.acc_z = rec.at(Channel::AccZ);
    subj.ppg = rec.at(Channel::Ppg);
    subj.eda = rec.at(Channel::Eda);
    PulseTrain pulses = detect_pulses(subj.ppg);
    subj.hr = hr_stream(pulses, 4.0);
    subj.br = br_stream(subj.ppg, pulses).stream;
    subj.windows = windows_from_json(truth.at("windows"),
                                     truth.value("subject_id", std::string{}));
    subjects.push_back(std::move(subj));
    log_info("loaded " + folder.filename().string() + ": " +
             std::to_string(subjects.back().windows.size()) + " windows");
  }
  return subjects;
}

mmsnn::ExperimentConfig load_config(const fs::path& path,
                                    const GlobalOpts& global) {
  json j = read_json_file(path);
  mmsnn::ExperimentConfig cfg = mmsnn::config_from_json(j);
  if (global.seed_given) cfg.seed = global.seed;
  return cfg;
}

json window_json(const GestureWindow& w) {
  return {{"start_sample", w.start_sample},
          {"end_sample", w.end_sample},
          {"gesture_label", w.gesture_label}};
}

int cmd_synth(const GlobalOpts& global, int subjects, int episodes,
              const fs::path& out) {
  synthgen::CohortSpec spec;
  spec.n_subjects = subjects;
  spec.episodes_per_subject = episodes;
  spec.seed = global.seed;
  announce("synth", {{"subjects", subjects},
                     {"episodes", episodes},
                     {"seed", spec.seed},
                     {"out", out.string()}});

  synthgen::CohortData cohort = synthgen::render_cohort(spec);
  fs::create_directories(out);
  for (std::size_t i = 0; i < cohort.recordings.size(); ++i) {
    const auto& profile = cohort.profiles[i];
    const auto& truth = cohort.truths[i];
    fs::path folder = out / profile.subject_id;
    atomic_path(folder, [&](const fs::path& tmp) {
      write_e4_folder(cohort.recordings[i], tmp);
      json sidecar;
      sidecar["subject_id"] = profile.subject_id;
      json windows = json::array();
      for (const auto& w : truth.windows) windows.push_back(window_json(w));
      sidecar["windows"] = windows;
      sidecar["spike_samples"] = truth.spike_samples;
      sidecar["driver_rate_hz"] = truth.driver.sample_rate_hz;
      sidecar["hr_bpm"] = truth.hr.values;
      sidecar["hr_rate_hz"] = truth.hr.sample_rate_hz;
      sidecar["profile"] = {
          {"resting_hr_bpm", profile.resting_hr_bpm},
          {"hrv_sd_s", profile.hrv_sd_s},
          {"scr_rate_per_min", profile.scr_rate_per_min},
          {"tonic_level_us", profile.tonic_level_us},
          {"gesture_speed_scale", profile.gesture_speed_scale},
          {"gesture_amp_scale", profile.gesture_amp_scale},
          {"orientation_rad", profile.orientation_rad},
          {"acc_noise_scale", profile.acc_noise_scale},
          {"acc_noise_rho", profile.acc_noise_rho}};
      std::ofstream side(tmp / "truth.json");
      side << sidecar.dump(2) << '\n';
      if (!side) fail(ErrorCode::IoError, "cannot write truth.json");
    });
    log_info("wrote " + folder.string());
  }
  std::cout << "cohort: " << cohort.recordings.size() << " subjects under "
            << out.string() << "\n";
  return 0;
}

int cmd_ingest(const GlobalOpts&, const fs::path& in, const fs::path& out,
               bool do_align) {
  announce("ingest", {{"in", in.string()},
                      {"out", out.string()},
                      {"align", do_align}});
  Recording rec = parse_e4_folder(in);
  if (do_align) rec = align(rec);
  for (const auto& w : rec.warnings) log_warn(in.string() + ": " + w);
  atomic_path(out, [&](const fs::path& tmp) { save_recording(rec, tmp); });
  std::cout << "recording: " << rec.streams.size() << " channels";
  for (const auto& [ch, s] : rec.streams)
    std::cout << ' ' << channel_name(ch) << '(' << s.size() << ')';
  std::cout << "\n";
  return 0;
}

int cmd_gestures_detect(const GlobalOpts&, const fs::path& in,
                        const fs::path& out, const fs::path& svm_path) {
  announce("gestures", {{"in", in.string()},
                        {"out", out.string()},
                        {"classify", svm_path.string()}});
  Recording rec = load_recording(in);
  GestureConfig gcfg;
  gesture::RqaParams params;
  auto spans = gesture::detect_onsets(rec.at(Channel::AccX),
                                      rec.at(Channel::AccY),
                                      rec.at(Channel::AccZ), params, gcfg);

  bool classify = !svm_path.empty();
  gesture::SvmModel model;
  if (classify) model = gesture::load_svm(svm_path.string());

  json windows = json::array();
  for (const auto& [start, end] : spans) {
    GestureWindow w;
    w.subject_id = rec.subject_id;
    w.start_sample = start;
    w.end_sample = end;
    if (classify) {
      synthgen::materialize_slices(rec, w);
      auto features = gesture::extract_features(w, gcfg);
      w.gesture_label = gesture::svm_predict(model, features).first;
    }
    windows.push_back(window_json(w));
  }
  atomic_write_text(out, json({{"subject_id", rec.subject_id},
                               {"windows", windows}})
                             .dump(2) +
                        "\n");
  std::cout << "detected " << spans.size() << " gesture windows\n";
  return 0;
}

int cmd_gestures_train(const GlobalOpts& global, const fs::path& data,
                       const fs::path& out, double c, double gamma) {
  announce("gestures", {{"train_svm", true},
                        {"data", data.string()},
                        {"out", out.string()},
                        {"c", c},
                        {"gamma", gamma},
                        {"seed", global.seed}});
  auto subjects = load_cohort_dir(data);
  GestureConfig gcfg;
  std::vector<gesture::GestureFeatures> features;
  std::vector<int> labels;
  for (const auto& subj : subjects) {
    Recording rec;
    rec.streams[Channel::AccX] = subj.acc_x;
    rec.streams[Channel::AccY] = subj.acc_y;
    rec.streams[Channel::AccZ] = subj.acc_z;
    for (GestureWindow w : subj.windows) {
      synthgen::materialize_slices(rec, w);
      features.push_back(gesture::extract_features(w, gcfg));
      labels.push_back(w.gesture_label);
    }
  }
  Rng rng(global.seed);
  gesture::SvmModel model = gesture::svm_train(features, labels, c, gamma, rng);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < features.size(); ++i)
    if (gesture::svm_predict(model, features[i]).first == labels[i]) ++correct;
  atomic_path(out,
              [&](const fs::path& tmp) { gesture::save_svm(model, tmp.string()); });
  std::cout << "svm: " << features.size() << " windows, training accuracy "
            << static_cast<double>(correct) / features.size() << "\n";
  return 0;
}

int cmd_eda(const GlobalOpts&, const fs::path& in, const fs::path& out,
            double lambda_tonic, double lambda_sparse, double tau_rise,
            double tau_decay) {
  announce("eda-decompose", {{"in", in.string()},
                             {"out", out.string()},
                             {"lambda_tonic", lambda_tonic},
                             {"lambda_sparse", lambda_sparse},
                             {"tau_rise", tau_rise},
                             {"tau_decay", tau_decay}});
  Recording rec = load_recording(in);
  BatemanParams params{tau_rise, tau_decay};
  DecomposeOptions opts;
  opts.lambda_tonic = lambda_tonic;
  opts.lambda_sparse = lambda_sparse;
  ScDecomposition dec = decompose(rec.at(Channel::Eda), params, opts);

  json j;
  j["sample_rate_hz"] = dec.y.sample_rate_hz;
  j["start_time_s"] = dec.y.start_time_s;
  j["tonic"] = dec.tonic.values;
  j["phasic"] = dec.phasic.values;
  j["driver"] = dec.driver.values;
  j["lambda_tonic"] = dec.lambda_tonic;
  j["lambda_sparse"] = dec.lambda_sparse;
  j["iterations"] = dec.iterations;
  j["converged"] = dec.converged;
  j["objective_trace"] = dec.objective_trace;
  atomic_write_text(out, j.dump() + "\n");
  std::cout << "decomposed " << dec.y.size() << " samples in "
            << dec.iterations << " iterations (converged: " << dec.converged
            << ")\n";
  return 0;
}

int cmd_derive(const GlobalOpts&, const fs::path& in, const fs::path& out) {
  announce("derive", {{"in", in.string()}, {"out", out.string()}});
  Recording rec = load_recording(in);
  PulseTrain pulses = detect_pulses(rec.at(Channel::Ppg));
  Recording derived = rec;
  derived.streams[Channel::DerivedHr] = hr_stream(pulses, 4.0);
  derived.streams[Channel::DerivedIbi] = ibi_stream(pulses, 4.0);
  derived.streams[Channel::DerivedBvp] = bvp_stream(rec.at(Channel::Ppg));
  derived.streams[Channel::DerivedBr] =
      br_stream(rec.at(Channel::Ppg), pulses).stream;
  atomic_path(out, [&](const fs::path& tmp) { save_recording(derived, tmp); });
  std::cout << "derived hr/ibi/bvp/br from " << pulses.peak_times_s.size()
            << " beats (" << pulses.dropped_ibis << " intervals dropped)\n";
  return 0;
}

int cmd_encode(const GlobalOpts&, const fs::path& in, const fs::path& windows,
               const fs::path& outdir, int limit) {
  announce("encode", {{"in", in.string()},
                      {"windows", windows.string()},
                      {"outdir", outdir.string()},
                      {"limit", limit}});
  Recording rec = load_recording(in);
  json wj = read_json_file(windows);
  auto ws = windows_from_json(wj.at("windows"), rec.subject_id);
  fs::create_directories(outdir);
  const auto& ax = rec.at(Channel::AccX);
  const auto& ay = rec.at(Channel::AccY);
  const auto& az = rec.at(Channel::AccZ);
  int written = 0;
  for (const auto& w : ws) {
    if (limit > 0 && written >= limit) break;
    auto cut = [&](const SensorStream& s) {
      return std::vector<double>(s.values.begin() + w.start_sample,
                                 s.values.begin() + w.end_sample);
    };
    RpImage img = encode_window({cut(ax), cut(ay), cut(az)},
                                {Channel::AccX, Channel::AccY, Channel::AccZ});
    std::ostringstream name;
    name << "window_" << std::setw(4) << std::setfill('0') << written << ".png";
    atomic_path(outdir / name.str(),
                [&](const fs::path& tmp) { write_png(img, tmp); });
    ++written;
  }
  std::cout << "wrote " << written << " recurrence-plot images to "
            << outdir.string() << "\n";
  return 0;
}

int cmd_train(const GlobalOpts& global, const fs::path& config_path,
              const fs::path& data, const fs::path& out) {
  mmsnn::ExperimentConfig cfg = load_config(config_path, global);
  announce("train", {{"config", config_path.string()},
                     {"data", data.string()},
                     {"out", out.string()},
                     {"resolved", mmsnn::config_to_json(cfg)}});
  auto subjects = load_cohort_dir(data);
  evalkit::EncodedCohort cohort = evalkit::encode_cohort(subjects, cfg.encoders);

  Rng rng(cfg.seed);
  auto pairs = mmsnn::make_pairs(cohort.windows, cfg.episodes,
                                 cfg.ratio_similar, rng);
  auto model = mmsnn::build_model<float>(cfg.encoders, cohort.n_classes, rng,
                                         mmsnn::ModelDims{}, cfg.margin,
                                         cfg.lambda_c, cfg.lambda_id);
  auto result = mmsnn::train(model, cohort.windows, std::move(pairs),
                             cfg.epochs, cfg.batch, cfg.lr, rng);
  atomic_path(out, [&](const fs::path& tmp) {
    mmsnn::save_model(model, tmp, cfg.seed, mmsnn::config_hash(cfg));
  });
  std::cout << "trained " << mmsnn::display_name(cfg) << ": epoch losses";
  for (double l : result.epoch_loss) std::cout << ' ' << l;
  std::cout << "\n";
  return 0;
}

int cmd_eval(const GlobalOpts& global, const fs::path& config_path,
             const fs::path& data, const fs::path& out, const fs::path& csv,
             int folds) {
  json cj = read_json_file(config_path);
  std::vector<mmsnn::ExperimentConfig> configs;
  if (cj.is_array())
    for (const auto& j : cj) configs.push_back(mmsnn::config_from_json(j));
  else
    configs.push_back(mmsnn::config_from_json(cj));
  if (global.seed_given)
    for (auto& cfg : configs) cfg.seed = global.seed;

  json resolved = json::array();
  for (const auto& cfg : configs) resolved.push_back(mmsnn::config_to_json(cfg));
  announce("eval", {{"config", config_path.string()},
                    {"data", data.string()},
                    {"out", out.string()},
                    {"folds", folds},
                    {"resolved", resolved}});

  auto subjects = load_cohort_dir(data);
  Rng rng(global.seed);
  auto rows = evalkit::run_ablation(subjects, configs, folds, rng);
  atomic_write_text(out, evalkit::ablation_json(rows).dump(2) + "\n");
  if (!csv.empty()) atomic_write_text(csv, evalkit::ablation_csv(rows));
  for (const auto& row : rows)
    std::cout << row.name << ": top1 " << row.summary.top1_accuracy << " +- "
              << row.summary.std_dev << ", ovr accuracy "
              << row.summary.paper_accuracy << "\n";
  return 0;
}

int cmd_sweep(const GlobalOpts& global, const fs::path& config_path,
              const fs::path& data, const fs::path& out, const fs::path& csv,
              const std::vector<int>& grid, bool plot_data) {
  mmsnn::ExperimentConfig cfg = load_config(config_path, global);
  std::vector<int> episode_grid =
      grid.empty() ? evalkit::default_episode_grid() : grid;
  announce("sweep", {{"config", config_path.string()},
                     {"data", data.string()},
                     {"out", out.string()},
                     {"grid", episode_grid},
                     {"resolved", mmsnn::config_to_json(cfg)}});
  auto subjects = load_cohort_dir(data);
  Rng rng(global.seed);
  auto points = evalkit::episode_sweep(subjects, cfg, episode_grid, rng);
  atomic_write_text(out, evalkit::sweep_json(points).dump(2) + "\n");
  if (!csv.empty()) atomic_write_text(csv, evalkit::sweep_csv(points));
  for (const auto& p : points) {
    if (plot_data)
      std::cout << p.episodes << ' ' << p.mean_top1 << ' ' << p.std_top1
                << "\n";
    else
      std::cout << "episodes " << p.episodes << ": top1 " << p.mean_top1
                << " +- " << p.std_top1 << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale wearable-sensor re-identification laboratory"};
  app.require_subcommand(1);

  GlobalOpts global;
  auto* seed_opt =
      app.add_option("--seed", global.seed, "global random seed")
          ->capture_default_str();
  app.add_flag("--deterministic,!--no-deterministic", global.deterministic,
               "single-threaded deterministic numerics")
      ->capture_default_str();
  app.add_option("--threads", global.threads,
                 "worker pool width for parallelizable stages")
      ->capture_default_str();
  app.add_option("--log-level", global.log_level, "error|warn|info|debug")
      ->capture_default_str();

  // synth
  int synth_subjects = 8, synth_episodes = 60;
  fs::path synth_out;
  auto* synth = app.add_subcommand("synth", "render a synthetic cohort");
  synth->add_option("--subjects", synth_subjects, "number of subjects")
      ->capture_default_str();
  synth->add_option("--episodes", synth_episodes, "gesture episodes per subject")
      ->capture_default_str();
  synth->add_option("--out", synth_out, "output cohort directory")->required();

  // ingest
  fs::path ingest_in, ingest_out;
  bool ingest_align = false;
  auto* ingest = app.add_subcommand("ingest", "parse an E4 folder");
  ingest->add_option("--in", ingest_in, "E4 folder")->required();
  ingest->add_option("--out", ingest_out, "recording container")->required();
  ingest->add_flag("--align", ingest_align, "trim to the common interval");

  // gestures
  fs::path gest_in, gest_out, gest_svm, gest_data;
  bool gest_train = false;
  double gest_c = 10.0, gest_gamma = -1.0;
  auto* gestures =
      app.add_subcommand("gestures", "detect, classify, or fit the SVM");
  gestures->add_option("--in", gest_in, "recording container");
  gestures->add_option("--out", gest_out, "windows JSON or SVM model")
      ->required();
  gestures->add_option("--classify", gest_svm, "SVM model for labeling");
  gestures->add_flag("--train-svm", gest_train, "fit the SVM on a cohort");
  gestures->add_option("--data", gest_data, "cohort directory (with --train-svm)");
  gestures->add_option("--c", gest_c, "SVM regularization")
      ->capture_default_str();
  gestures->add_option("--gamma", gest_gamma, "RBF gamma (<= 0: auto)")
      ->capture_default_str();

  // eda-decompose
  fs::path eda_in, eda_out;
  double eda_lt = -1.0, eda_ls = -1.0, eda_rise = 0.7, eda_decay = 2.0;
  auto* eda = app.add_subcommand("eda-decompose",
                                 "tonic/phasic/driver decomposition");
  eda->add_option("--in", eda_in, "recording container")->required();
  eda->add_option("--out", eda_out, "decomposition JSON")->required();
  eda->add_option("--lambda-tonic", eda_lt, "tonic weight (< 0: GCV)")
      ->capture_default_str();
  eda->add_option("--lambda-sparse", eda_ls, "driver weight (< 0: GCV)")
      ->capture_default_str();
  eda->add_option("--tau-rise", eda_rise, "Bateman rise constant, s")
      ->capture_default_str();
  eda->add_option("--tau-decay", eda_decay, "Bateman decay constant, s")
      ->capture_default_str();

  // derive
  fs::path derive_in, derive_out;
  auto* derive = app.add_subcommand("derive", "HR/IBI/BVP/BR from PPG");
  derive->add_option("--in", derive_in, "recording container")->required();
  derive->add_option("--out", derive_out, "augmented recording container")
      ->required();

  // encode
  fs::path enc_in, enc_windows, enc_outdir;
  int enc_limit = 0;
  auto* encode = app.add_subcommand("encode", "recurrence-plot PNG export");
  encode->add_option("--in", enc_in, "recording container")->required();
  encode->add_option("--windows", enc_windows, "windows JSON")->required();
  encode->add_option("--outdir", enc_outdir, "PNG output directory")->required();
  encode->add_option("--limit", enc_limit, "max images (0 = all)")
      ->capture_default_str();

  // train
  fs::path train_cfg, train_data, train_out;
  auto* train = app.add_subcommand("train", "fit a Siamese model");
  train->add_option("--config", train_cfg, "experiment config JSON")->required();
  train->add_option("--data", train_data, "cohort directory")->required();
  train->add_option("--out", train_out, "checkpoint path")->required();

  // eval
  fs::path eval_cfg, eval_data, eval_out, eval_csv;
  int eval_folds = 5;
  auto* eval = app.add_subcommand("eval", "cross-validated ablation");
  eval->add_option("--config", eval_cfg, "config JSON (object or array)")
      ->required();
  eval->add_option("--data", eval_data, "cohort directory")->required();
  eval->add_option("--out", eval_out, "report JSON")->required();
  eval->add_option("--csv", eval_csv, "per-fold CSV");
  eval->add_option("--folds", eval_folds, "cross-validation folds")
      ->capture_default_str();

  // sweep
  fs::path sweep_cfg, sweep_data, sweep_out, sweep_csv;
  std::vector<int> sweep_grid;
  bool sweep_plot = false;
  auto* sweep = app.add_subcommand("sweep", "accuracy vs episode count");
  sweep->add_option("--config", sweep_cfg, "experiment config JSON")->required();
  sweep->add_option("--data", sweep_data, "cohort directory")->required();
  sweep->add_option("--out", sweep_out, "sweep JSON")->required();
  sweep->add_option("--csv", sweep_csv, "sweep CSV");
  sweep->add_option("--grid", sweep_grid, "episode counts")->delimiter(',');
  sweep->add_flag("--plot-data", sweep_plot, "print x y err triples");

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  }

  try {
    set_log_level(parse_log_level(global.log_level));
    global.seed_given = seed_opt->count() > 0;
    if (global.deterministic && global.threads > 1) {
      log_warn("deterministic mode forces --threads 1");
      global.threads = 1;
    }

    if (app.got_subcommand(synth))
      return cmd_synth(global, synth_subjects, synth_episodes, synth_out);
    if (app.got_subcommand(ingest))
      return cmd_ingest(global, ingest_in, ingest_out, ingest_align);
    if (app.got_subcommand(gestures)) {
      if (gest_train) {
        if (gest_data.empty()) {
          std::cerr << "usage error: --train-svm needs --data\n";
          return 2;
        }
        return cmd_gestures_train(global, gest_data, gest_out, gest_c,
                                  gest_gamma);
      }
      if (gest_in.empty()) {
        std::cerr << "usage error: gestures needs --in (or --train-svm)\n";
        return 2;
      }
      return cmd_gestures_detect(global, gest_in, gest_out, gest_svm);
    }
    if (app.got_subcommand(eda))
      return cmd_eda(global, eda_in, eda_out, eda_lt, eda_ls, eda_rise,
                     eda_decay);
    if (app.got_subcommand(derive))
      return cmd_derive(global, derive_in, derive_out);
    if (app.got_subcommand(encode))
      return cmd_encode(global, enc_in, enc_windows, enc_outdir, enc_limit);
    if (app.got_subcommand(train))
      return cmd_train(global, train_cfg, train_data, train_out);
    if (app.got_subcommand(eval))
      return cmd_eval(global, eval_cfg, eval_data, eval_out, eval_csv,
                      eval_folds);
    if (app.got_subcommand(sweep))
      return cmd_sweep(global, sweep_cfg, sweep_data, sweep_out, sweep_csv,
                       sweep_grid, sweep_plot);
    std::cerr << "usage error: no subcommand\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
