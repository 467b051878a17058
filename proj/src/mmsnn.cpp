#include "physiogait/mmsnn.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "physiogait/container.hpp"
#include "physiogait/rpimage.hpp"

namespace physiogait::mmsnn {

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::Acc: return "acc";
    case Modality::Ppg: return "ppg";
    case Modality::Hr: return "hr";
    case Modality::Br: return "br";
    case Modality::Eda: return "eda";
  }
  return "?";
}

Modality modality_from_name(const std::string& name) {
  for (Modality m : {Modality::Acc, Modality::Ppg, Modality::Hr, Modality::Br,
                     Modality::Eda})
    if (name == modality_name(m)) return m;
  fail(ErrorCode::InvalidArgument, "unknown modality: " + name);
}

const char* encoder_kind_name(EncoderKind k) {
  return k == EncoderKind::ImageCnn ? "cnn" : "lstm";
}

EncoderKind encoder_kind_from_name(const std::string& name) {
  if (name == "cnn") return EncoderKind::ImageCnn;
  if (name == "lstm") return EncoderKind::SequenceLstm;
  fail(ErrorCode::InvalidArgument, "unknown encoder kind: " + name);
}

namespace {

// Linear interpolation of a uniform stream at wall-clock time t (clamped to
// the stream's span).
double interp_at(const SensorStream& s, double t) {
  double pos = (t - s.start_time_s) * s.sample_rate_hz;
  if (pos <= 0.0) return s.values.front();
  double last = static_cast<double>(s.values.size() - 1);
  if (pos >= last) return s.values.back();
  std::size_t i = static_cast<std::size_t>(pos);
  double frac = pos - static_cast<double>(i);
  return s.values[i] * (1.0 - frac) + s.values[i + 1] * frac;
}

// Fixed per-modality affine constants: sequences are scaled with population
// ranges, not per-window statistics, so the level of a window (mean heart
// rate, skin conductance baseline) survives encoding. Per-window z-scoring
// would erase exactly the slow physiological levels that differ per person.
void modality_affine(Modality m, double& offset, double& scale) {
  switch (m) {
    case Modality::Hr: offset = 70.0; scale = 20.0; return;
    case Modality::Br: offset = 16.0; scale = 6.0; return;
    case Modality::Eda: offset = 3.5; scale = 2.5; return;
    case Modality::Ppg: offset = 0.0; scale = 1.0; return;
    case Modality::Acc: offset = 0.0; scale = 1.0; return;
  }
  offset = 0.0;
  scale = 1.0;
}

// n evenly spaced samples over [lo, hi], fixed affine scaling per modality.
std::vector<float> sampled_sequence(const SensorStream& s, Modality m,
                                    double lo, double hi, int n) {
  check_stream(s);
  double offset = 0.0, scale = 1.0;
  modality_affine(m, offset, scale);
  std::vector<float> out(n);
  for (int j = 0; j < n; ++j) {
    double t = lo + (hi - lo) * static_cast<double>(j) / (n - 1);
    out[j] = static_cast<float>((interp_at(s, t) - offset) / scale);
  }
  return out;
}

// The context span centered on `center`, shifted to stay inside the stream.
std::pair<double, double> context_span(const SensorStream& s, double center) {
  double a = s.start_time_s, b = s.end_time_s();
  if (b - a < kContextSpanS)
    fail(ErrorCode::InsufficientData,
         std::string(channel_name(s.channel)) +
             " stream shorter than the context span");
  double lo = center - kContextSpanS / 2.0;
  if (lo < a) lo = a;
  if (lo + kContextSpanS > b) lo = b - kContextSpanS;
  return {lo, lo + kContextSpanS};
}

const SensorStream& modality_stream(const SubjectStreams& subj, Modality m) {
  switch (m) {
    case Modality::Ppg: return subj.ppg;
    case Modality::Hr: return subj.hr;
    case Modality::Br: return subj.br;
    case Modality::Eda: return subj.eda;
    case Modality::Acc: break;
  }
  fail(ErrorCode::InvalidArgument, "acc has no single stream");
}

}  // namespace

std::vector<EncodedWindow> encode_windows(const SubjectStreams& subject,
                                          const std::vector<EncoderSpec>& specs) {
  check_stream(subject.acc_x);
  std::vector<EncodedWindow> out;
  out.reserve(subject.windows.size());
  for (const GestureWindow& w : subject.windows) {
    if (w.end_sample <= w.start_sample ||
        w.end_sample > subject.acc_x.values.size())
      fail(ErrorCode::InvalidArgument, "window outside the accelerometer stream");
    const double t0 = subject.acc_x.time_at(w.start_sample);
    const double t1 = subject.acc_x.time_at(w.end_sample - 1);
    const double center = (t0 + t1) / 2.0;

    EncodedWindow enc;
    enc.class_index = subject.class_index;
    enc.gesture_label = w.gesture_label;
    for (const EncoderSpec& spec : specs) {
      if (spec.kind == EncoderKind::ImageCnn) {
        RpImage img;
        if (spec.modality == Modality::Acc) {
          auto cut = [&](const SensorStream& s) {
            return std::vector<double>(s.values.begin() + w.start_sample,
                                       s.values.begin() + w.end_sample);
          };
          img = encode_window({cut(subject.acc_x), cut(subject.acc_y),
                               cut(subject.acc_z)},
                              {Channel::AccX, Channel::AccY, Channel::AccZ});
        } else {
          const SensorStream& s = modality_stream(subject, spec.modality);
          std::vector<double> vals;
          double rate = s.sample_rate_hz;
          for (double t = t0; t <= t1 + 1e-9; t += 1.0 / rate)
            vals.push_back(interp_at(s, t));
          img = encode_window({vals}, {s.channel});
        }
        enc.inputs.push_back(img.pixels);
      } else {
        const SensorStream& s = modality_stream(subject, spec.modality);
        double lo = t0, hi = t1;
        if (spec.modality != Modality::Ppg)
          std::tie(lo, hi) = context_span(s, center);
        enc.inputs.push_back(sampled_sequence(s, spec.modality, lo, hi, kSeqLen));
      }
    }
    out.push_back(std::move(enc));
  }
  return out;
}

std::vector<TrainingPair> make_pairs(const std::vector<EncodedWindow>& data,
                                     int episodes, double ratio_similar,
                                     Rng& rng) {
  std::vector<std::size_t> pool(data.size());
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  return make_pairs(data, pool, episodes, ratio_similar, rng);
}

std::vector<TrainingPair> make_pairs(const std::vector<EncodedWindow>& data,
                                     const std::vector<std::size_t>& pool,
                                     int episodes, double ratio_similar,
                                     Rng& rng) {
  if (pool.empty()) fail(ErrorCode::InsufficientWindows, "no windows");
  if (episodes < 1) fail(ErrorCode::InvalidArgument, "episodes must be >= 1");

  std::map<int, std::vector<std::size_t>> by_class;
  std::map<std::pair<int, int>, std::vector<std::size_t>> by_class_gesture;
  for (std::size_t i : pool) {
    by_class[data[i].class_index].push_back(i);
    by_class_gesture[{data[i].class_index, data[i].gesture_label}].push_back(i);
  }
  if (by_class.size() < 2)
    fail(ErrorCode::InsufficientWindows,
         "dissimilar pairs need at least 2 subjects");

  const std::size_t n = pool.size();
  std::vector<TrainingPair> pairs;
  pairs.reserve(episodes);
  for (int e = 0; e < episodes; ++e) {
    bool similar = rng.uniform() < ratio_similar;
    std::size_t attempts = 0;
    for (;;) {
      if (++attempts > 64 + 10 * n)
        fail(ErrorCode::InsufficientWindows,
             "no (subject, gesture) group has two windows");
      std::size_t anchor = pool[rng.next_below(n)];
      const EncodedWindow& a = data[anchor];
      std::size_t partner;
      if (similar) {
        const auto& group = by_class_gesture[{a.class_index, a.gesture_label}];
        if (group.size() < 2) continue;  // this anchor has no similar partner
        std::size_t ai =
            std::find(group.begin(), group.end(), anchor) - group.begin();
        std::size_t pos = rng.next_below(group.size() - 1);
        if (pos >= ai) ++pos;
        partner = group[pos];
      } else {
        std::size_t others = n - by_class[a.class_index].size();
        std::size_t r = rng.next_below(others);
        partner = anchor;  // overwritten below
        for (const auto& [cls, members] : by_class) {
          if (cls == a.class_index) continue;
          if (r < members.size()) {
            partner = members[r];
            break;
          }
          r -= members.size();
        }
      }
      TrainingPair p;
      p.left = anchor;
      p.right = partner;
      p.similar = similar;
      p.left_identity = a.class_index;
      p.right_identity = data[partner].class_index;
      pairs.push_back(p);
      break;
    }
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

void save_model(const Model<float>& model, const std::filesystem::path& path,
                std::uint64_t seed, std::uint64_t config_hash) {
  nlohmann::json header;
  header["format_version"] = 1;
  header["kind"] = "mmsnn-checkpoint";
  header["n_classes"] = model.n_classes;
  header["margin"] = model.margin;
  header["lambda_c"] = model.lambda_c;
  header["lambda_id"] = model.lambda_id;
  header["dims"] = {{"width_div", model.dims.width_div},
                    {"image_h", model.dims.image_h},
                    {"image_w", model.dims.image_w},
                    {"seq_len", model.dims.seq_len}};
  nlohmann::json encs = nlohmann::json::array();
  for (const auto& spec : model.specs)
    encs.push_back({{"kind", encoder_kind_name(spec.kind)},
                    {"modality", modality_name(spec.modality)}});
  header["encoders"] = encs;
  header["seed"] = seed;
  {
    std::ostringstream hex;
    hex << std::hex << config_hash;
    header["config_hash"] = hex.str();
  }
  std::vector<std::size_t> counts;
  for (const auto& e : model.encoders) counts.push_back(state_count(e));
  counts.push_back(model.w.numel());
  header["state_counts"] = counts;

  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out << header.dump() << '\n';
  for (const auto& e : model.encoders) autodiff::write_state(out, e);
  container::write_f32(out, model.w.data.data(), model.w.numel());
  if (!out) fail(ErrorCode::IoError, "short write to " + path.string());
}

Model<float> load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::MissingFile, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line))
    fail(ErrorCode::MalformedHeader, "missing checkpoint header");
  nlohmann::json header = nlohmann::json::parse(line, nullptr, false);
  if (header.is_discarded() || header.value("kind", "") != "mmsnn-checkpoint" ||
      header.value("format_version", 0) != 1)
    fail(ErrorCode::MalformedHeader, "not an mmsnn checkpoint: " + path.string());

  std::vector<EncoderSpec> specs;
  for (const auto& e : header.at("encoders"))
    specs.push_back({encoder_kind_from_name(e.at("kind").get<std::string>()),
                     modality_from_name(e.at("modality").get<std::string>())});
  ModelDims dims;
  dims.width_div = header.at("dims").at("width_div").get<int>();
  dims.image_h = header.at("dims").at("image_h").get<int>();
  dims.image_w = header.at("dims").at("image_w").get<int>();
  dims.seq_len = header.at("dims").at("seq_len").get<int>();

  Rng rng(header.value("seed", std::uint64_t{0}));
  Model<float> model = build_model<float>(
      specs, header.at("n_classes").get<int>(), rng, dims,
      header.at("margin").get<double>(), header.at("lambda_c").get<double>(),
      header.at("lambda_id").get<double>());

  auto counts = header.at("state_counts").get<std::vector<std::size_t>>();
  if (counts.size() != model.encoders.size() + 1)
    fail(ErrorCode::MalformedHeader, "state_counts does not match encoders");
  for (std::size_t e = 0; e < model.encoders.size(); ++e) {
    if (counts[e] != autodiff::state_count(model.encoders[e]))
      fail(ErrorCode::MalformedHeader, "encoder state size mismatch");
    autodiff::read_state(in, model.encoders[e]);
  }
  if (counts.back() != model.w.numel())
    fail(ErrorCode::MalformedHeader, "softmax matrix size mismatch");
  container::read_f32(in, model.w.data.data(), model.w.numel());
  return model;
}

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  cfg.name = j.value("name", std::string{});
  if (!j.contains("encoders") || !j.at("encoders").is_array() ||
      j.at("encoders").empty())
    fail(ErrorCode::InvalidArgument, "config needs a non-empty encoders array");
  for (const auto& e : j.at("encoders"))
    cfg.encoders.push_back(
        {encoder_kind_from_name(e.at("kind").get<std::string>()),
         modality_from_name(e.at("modality").get<std::string>())});
  cfg.margin = j.value("margin", cfg.margin);
  cfg.lambda_c = j.value("lambda_c", cfg.lambda_c);
  cfg.lambda_id = j.value("lambda_id", cfg.lambda_id);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.batch = j.value("batch", cfg.batch);
  cfg.lr = j.value("lr", cfg.lr);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.episodes = j.value("episodes", cfg.episodes);
  cfg.ratio_similar = j.value("ratio_similar", cfg.ratio_similar);
  if (cfg.epochs < 1 || cfg.batch < 1 || cfg.episodes < 1)
    fail(ErrorCode::InvalidArgument, "epochs, batch, episodes must be >= 1");
  return cfg;
}

nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["name"] = cfg.name;
  nlohmann::json encs = nlohmann::json::array();
  for (const auto& e : cfg.encoders)
    encs.push_back({{"kind", encoder_kind_name(e.kind)},
                    {"modality", modality_name(e.modality)}});
  j["encoders"] = encs;
  j["margin"] = cfg.margin;
  j["lambda_c"] = cfg.lambda_c;
  j["lambda_id"] = cfg.lambda_id;
  j["epochs"] = cfg.epochs;
  j["batch"] = cfg.batch;
  j["lr"] = cfg.lr;
  j["seed"] = cfg.seed;
  j["episodes"] = cfg.episodes;
  j["ratio_similar"] = cfg.ratio_similar;
  return j;
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  // FNV-1a over the canonical dump (nlohmann emits sorted keys).
  std::string s = config_to_json(cfg).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string display_name(const ExperimentConfig& cfg) {
  if (!cfg.name.empty()) return cfg.name;
  std::string out;
  for (const auto& e : cfg.encoders) {
    if (!out.empty()) out += "+";
    out += e.kind == EncoderKind::ImageCnn ? "CNN:" : "LSTM:";
    std::string m = modality_name(e.modality);
    for (char& c : m) c = static_cast<char>(std::toupper(c));
    out += m;
  }
  return out;
}

ExperimentConfig pipeline_preset(const std::string& name) {
  ExperimentConfig cfg;
  cfg.name = name;
  if (name == "P1") {
    cfg.encoders = {{EncoderKind::ImageCnn, Modality::Acc}};
  } else if (name == "P2") {
    cfg.encoders = {{EncoderKind::SequenceLstm, Modality::Ppg}};
  } else if (name == "P3") {
    cfg.encoders = {{EncoderKind::ImageCnn, Modality::Acc},
                    {EncoderKind::SequenceLstm, Modality::Hr},
                    {EncoderKind::SequenceLstm, Modality::Br}};
  } else if (name == "P4") {
    cfg.encoders = {{EncoderKind::ImageCnn, Modality::Acc},
                    {EncoderKind::SequenceLstm, Modality::Hr},
                    {EncoderKind::SequenceLstm, Modality::Br},
                    {EncoderKind::SequenceLstm, Modality::Eda}};
  } else {
    fail(ErrorCode::InvalidArgument, "unknown pipeline preset: " + name);
  }
  return cfg;
}

}  // namespace physiogait::mmsnn
