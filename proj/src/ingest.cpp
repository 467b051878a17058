#include "physiogait/ingest.hpp"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace physiogait {

namespace fs = std::filesystem;
using nlohmann::json;

const SensorStream& Recording::at(Channel c) const {
  auto it = streams.find(c);
  if (it == streams.end())
    fail(ErrorCode::InvalidArgument,
         std::string("recording has no channel ") + channel_name(c));
  return it->second;
}

namespace {

struct CsvTable {
  double start_time = 0.0;
  double rate_hz = 0.0;
  std::vector<std::vector<double>> rows;  // sample rows only
};

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r' && ch != ' ') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_number(const std::string& text, const std::string& file,
                    std::size_t row) {
  const char* begin = text.c_str();
  char* end = nullptr;
  double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0') {
    fail(ErrorCode::MalformedHeader,
         file + " row " + std::to_string(row) + ": not a number: '" + text +
             "'");
  }
  return v;
}

// E4 CSV layout: row 1 start time (repeated per column), row 2 sample rate,
// remaining rows samples. IBI.csv has no rate row (has_rate_row=false) and
// its row-1 second cell is the literal label "IBI", which we ignore.
CsvTable read_e4_csv(const fs::path& file, std::size_t expected_cols,
                     bool has_rate_row) {
  std::ifstream in(file);
  if (!in) fail(ErrorCode::MissingFile, file.filename().string());

  CsvTable table;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    auto cells = split_csv(line);
    if (row == 1) {
      if (cells.empty())
        fail(ErrorCode::MalformedHeader,
             file.filename().string() + " row 1: empty header");
      table.start_time = parse_number(cells[0], file.filename().string(), 1);
      continue;
    }
    if (row == 2 && has_rate_row) {
      table.rate_hz = parse_number(cells[0], file.filename().string(), 2);
      if (!(table.rate_hz > 0.0))
        fail(ErrorCode::MalformedHeader,
             file.filename().string() + " row 2: non-positive sample rate");
      continue;
    }
    if (expected_cols != 0 && cells.size() != expected_cols)
      fail(ErrorCode::MalformedHeader,
           file.filename().string() + " row " + std::to_string(row) +
               ": expected " + std::to_string(expected_cols) + " columns, got " +
               std::to_string(cells.size()));
    std::vector<double> vals;
    vals.reserve(cells.size());
    for (const auto& c : cells)
      vals.push_back(parse_number(c, file.filename().string(), row));
    table.rows.push_back(std::move(vals));
  }
  return table;
}

void note_rate(Recording& rec, const std::string& file, double declared,
               double expected) {
  if (declared != expected) {
    std::string msg = file + ": declared rate " + std::to_string(declared) +
                      " Hz, expected " + std::to_string(expected) + " Hz";
    rec.warnings.push_back(msg);
    log_warn(msg);
  }
}

SensorStream column_stream(const CsvTable& t, std::size_t col, Channel ch,
                           double scale) {
  SensorStream s;
  s.sample_rate_hz = t.rate_hz;
  s.start_time_s = t.start_time;
  s.channel = ch;
  s.values.reserve(t.rows.size());
  for (const auto& r : t.rows) s.values.push_back(r[col] * scale);
  return s;
}

}  // namespace

Recording parse_e4_folder(const fs::path& path) {
  Recording rec;
  rec.subject_id = path.filename().string();
  if (rec.subject_id.empty()) rec.subject_id = path.parent_path().filename().string();
  rec.source_path = path.string();

  for (const char* required : {"ACC.csv", "EDA.csv", "BVP.csv", "TEMP.csv"}) {
    if (!fs::exists(path / required))
      fail(ErrorCode::MissingFile, std::string(required));
  }

  auto acc = read_e4_csv(path / "ACC.csv", 3, true);
  note_rate(rec, "ACC.csv", acc.rate_hz, 32.0);
  // 1/64 g units -> g.
  rec.streams[Channel::AccX] = column_stream(acc, 0, Channel::AccX, 1.0 / 64.0);
  rec.streams[Channel::AccY] = column_stream(acc, 1, Channel::AccY, 1.0 / 64.0);
  rec.streams[Channel::AccZ] = column_stream(acc, 2, Channel::AccZ, 1.0 / 64.0);

  auto eda = read_e4_csv(path / "EDA.csv", 1, true);
  note_rate(rec, "EDA.csv", eda.rate_hz, 4.0);
  rec.streams[Channel::Eda] = column_stream(eda, 0, Channel::Eda, 1.0);

  auto bvp = read_e4_csv(path / "BVP.csv", 1, true);
  note_rate(rec, "BVP.csv", bvp.rate_hz, 64.0);
  rec.streams[Channel::Ppg] = column_stream(bvp, 0, Channel::Ppg, 1.0);

  auto temp = read_e4_csv(path / "TEMP.csv", 1, true);
  note_rate(rec, "TEMP.csv", temp.rate_hz, 4.0);
  rec.streams[Channel::Temp] = column_stream(temp, 0, Channel::Temp, 1.0);

  if (fs::exists(path / "IBI.csv")) {
    auto ibi = read_e4_csv(path / "IBI.csv", 2, false);
    if (!ibi.rows.empty()) {
      // Irregular (offset, interval) pairs held at previous value on a 4 Hz
      // grid; downstream encoders need uniform sampling.
      SensorStream s;
      s.sample_rate_hz = 4.0;
      s.start_time_s = ibi.start_time;
      s.channel = Channel::DerivedIbi;
      double last_offset = ibi.rows.back()[0];
      std::size_t n = static_cast<std::size_t>(std::floor(last_offset * 4.0)) + 1;
      s.values.resize(n);
      std::size_t k = 0;
      for (std::size_t i = 0; i < n; ++i) {
        double t = static_cast<double>(i) / 4.0;
        while (k + 1 < ibi.rows.size() && ibi.rows[k + 1][0] <= t) ++k;
        s.values[i] = ibi.rows[k][1];
      }
      rec.streams[Channel::DerivedIbi] = std::move(s);
    }
  }
  return rec;
}

namespace {

void write_e4_csv(const fs::path& file, double start_time, double rate,
                  const std::vector<const SensorStream*>& cols, double scale) {
  std::ofstream out(file);
  if (!out) fail(ErrorCode::IoError, "cannot write " + file.string());
  char buf[64];
  auto emit = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << buf;
  };
  for (std::size_t c = 0; c < cols.size(); ++c) {
    if (c) out << ",";
    emit(start_time);
  }
  out << "\n";
  for (std::size_t c = 0; c < cols.size(); ++c) {
    if (c) out << ",";
    emit(rate);
  }
  out << "\n";
  std::size_t n = cols[0]->values.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < cols.size(); ++c) {
      if (c) out << ",";
      emit(cols[c]->values[i] * scale);
    }
    out << "\n";
  }
}

}  // namespace

void write_e4_folder(const Recording& rec, const fs::path& path) {
  fs::create_directories(path);
  const auto& ax = rec.at(Channel::AccX);
  const auto& ay = rec.at(Channel::AccY);
  const auto& az = rec.at(Channel::AccZ);
  write_e4_csv(path / "ACC.csv", ax.start_time_s, ax.sample_rate_hz,
               {&ax, &ay, &az}, 64.0);
  const auto& eda = rec.at(Channel::Eda);
  write_e4_csv(path / "EDA.csv", eda.start_time_s, eda.sample_rate_hz, {&eda},
               1.0);
  const auto& ppg = rec.at(Channel::Ppg);
  write_e4_csv(path / "BVP.csv", ppg.start_time_s, ppg.sample_rate_hz, {&ppg},
               1.0);
  const auto& temp = rec.at(Channel::Temp);
  write_e4_csv(path / "TEMP.csv", temp.start_time_s, temp.sample_rate_hz,
               {&temp}, 1.0);
}

Recording align(const Recording& rec) {
  if (rec.streams.empty())
    fail(ErrorCode::InvalidArgument, "align: empty recording");

  Recording out = rec;
  // Trimming can shift a stream's first sample past the previous common
  // start, so iterate to the fixpoint; each pass drops at least one sample
  // or stops.
  for (;;) {
    double common_start = -1e300;
    double common_end = 1e300;
    for (const auto& [ch, s] : out.streams) {
      if (s.empty()) fail(ErrorCode::EmptyStream, "align: empty stream");
      common_start = std::max(common_start, s.start_time_s);
      common_end = std::min(common_end, s.end_time_s());
    }
    if (common_start > common_end)
      fail(ErrorCode::NoCommonInterval, "streams do not overlap in time");

    bool changed = false;
    for (auto& [ch, s] : out.streams) {
      // Half-open slice; nudge t1 past common_end to keep the last sample.
      SensorStream cut = slice_by_time(s, common_start,
                                       common_end + 0.5 / s.sample_rate_hz);
      if (cut.values.size() != s.values.size()) changed = true;
      s = std::move(cut);
    }
    if (!changed) return out;
  }
}

void save_recording(const Recording& rec, const fs::path& path) {
  json header;
  header["format_version"] = 1;
  header["subject_id"] = rec.subject_id;
  json channels = json::array();
  for (const auto& [ch, s] : rec.streams) {
    channels.push_back({{"channel", channel_name(ch)},
                        {"rate_hz", s.sample_rate_hz},
                        {"start_time_s", s.start_time_s},
                        {"count", s.values.size()}});
  }
  header["channels"] = channels;

  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out << header.dump() << "\n";
  for (const auto& [ch, s] : rec.streams) {
    for (double v : s.values) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      char le[8];
      for (int b = 0; b < 8; ++b) le[b] = static_cast<char>(bits >> (8 * b));
      out.write(le, 8);
    }
  }
}

Recording load_recording(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::MissingFile, path.string());
  std::string line;
  if (!std::getline(in, line))
    fail(ErrorCode::MalformedHeader, "missing container header");
  json header = json::parse(line, nullptr, false);
  if (header.is_discarded() || header.value("format_version", 0) != 1)
    fail(ErrorCode::MalformedHeader, "bad container header");

  Recording rec;
  rec.subject_id = header.value("subject_id", "");
  rec.source_path = path.string();
  for (const auto& c : header["channels"]) {
    SensorStream s;
    s.channel = channel_from_name(c["channel"].get<std::string>());
    s.sample_rate_hz = c["rate_hz"].get<double>();
    s.start_time_s = c["start_time_s"].get<double>();
    std::size_t n = c["count"].get<std::size_t>();
    s.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      char le[8];
      in.read(le, 8);
      if (!in) fail(ErrorCode::MalformedHeader, "container truncated");
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b)
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(le[b]))
                << (8 * b);
      double v;
      std::memcpy(&v, &bits, 8);
      s.values[i] = v;
    }
    rec.streams[s.channel] = std::move(s);
  }
  return rec;
}

}  // namespace physiogait
