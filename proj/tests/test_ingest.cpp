#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "physiogait/ingest.hpp"

using namespace physiogait;
namespace fs = std::filesystem;

namespace {

fs::path golden_dir() { return fs::path(TESTS_DATA_DIR) / "e4_golden"; }

fs::path fresh_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("physiogait_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void copy_golden(const fs::path& dst, const std::vector<std::string>& skip = {}) {
  for (const auto& entry : fs::directory_iterator(golden_dir())) {
    const std::string name = entry.path().filename().string();
    if (std::find(skip.begin(), skip.end(), name) != skip.end()) continue;
    fs::copy_file(entry.path(), dst / name);
  }
}

}  // namespace

TEST_CASE("golden folder parses with exact values") {
  Recording rec = parse_e4_folder(golden_dir());
  CHECK(rec.subject_id == "e4_golden");
  CHECK(rec.warnings.empty());

  const auto& ax = rec.at(Channel::AccX);
  CHECK(ax.sample_rate_hz == doctest::Approx(32.0));
  CHECK(ax.start_time_s == doctest::Approx(1588000000.0));
  REQUIRE(ax.size() == 8);
  CHECK(ax.values[0] == doctest::Approx(1.0));    // 64 / 64 g
  CHECK(ax.values[1] == doctest::Approx(0.5));
  CHECK(ax.values[3] == doctest::Approx(-1.0));
  CHECK(rec.at(Channel::AccY).values[1] == doctest::Approx(-0.5));
  CHECK(rec.at(Channel::AccZ).values[3] == doctest::Approx(0.125));

  const auto& eda = rec.at(Channel::Eda);
  CHECK(eda.sample_rate_hz == doctest::Approx(4.0));
  CHECK(eda.start_time_s == doctest::Approx(1588000000.0));
  CHECK(eda.values[0] == doctest::Approx(0.31));

  CHECK(rec.at(Channel::Ppg).sample_rate_hz == doctest::Approx(64.0));
  CHECK(rec.at(Channel::Ppg).values[0] == doctest::Approx(10.5));
  CHECK(rec.at(Channel::Temp).values[0] == doctest::Approx(33.25));

  // IBI held at the previous value on the 4 Hz grid.
  REQUIRE(rec.has(Channel::DerivedIbi));
  const auto& ibi = rec.at(Channel::DerivedIbi);
  CHECK(ibi.sample_rate_hz == doctest::Approx(4.0));
  CHECK(ibi.values[2] == doctest::Approx(0.8));    // t=0.5: first row
  CHECK(ibi.values[6] == doctest::Approx(0.79));   // t=1.5: second row
}

TEST_CASE("missing BVP.csv is reported by name") {
  fs::path dir = fresh_dir("missing_bvp");
  copy_golden(dir, {"BVP.csv"});
  try {
    parse_e4_folder(dir);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingFile);
    CHECK(std::string(e.what()).find("BVP.csv") != std::string::npos);
  }
}

TEST_CASE("non-numeric cell throws MalformedHeader") {
  fs::path dir = fresh_dir("bad_cell");
  copy_golden(dir, {"EDA.csv"});
  std::ofstream(dir / "EDA.csv") << "1588000000.0\n4.0\nnot_a_number\n";
  try {
    parse_e4_folder(dir);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MalformedHeader);
  }
}

TEST_CASE("unexpected declared rate is kept and warned about") {
  fs::path dir = fresh_dir("odd_rate");
  copy_golden(dir, {"EDA.csv"});
  std::ofstream(dir / "EDA.csv") << "1588000000.0\n8.0\n0.31\n0.32\n";
  Recording rec = parse_e4_folder(dir);
  CHECK(rec.at(Channel::Eda).sample_rate_hz == doctest::Approx(8.0));
  REQUIRE(!rec.warnings.empty());
  CHECK(rec.warnings[0].find("EDA.csv") != std::string::npos);
}

TEST_CASE("align leaves identical spans unchanged") {
  SensorStream acc;
  acc.sample_rate_hz = 32.0;
  acc.values.assign(33, 1.0);  // spans [0, 1] s exactly
  SensorStream eda;
  eda.sample_rate_hz = 4.0;
  eda.values.assign(5, 0.4);  // spans [0, 1] s exactly
  Recording rec;
  rec.streams[Channel::AccX] = acc;
  rec.streams[Channel::Eda] = eda;
  Recording out = align(rec);
  CHECK(out.at(Channel::AccX).values == acc.values);
  CHECK(out.at(Channel::Eda).values == eda.values);
}

TEST_CASE("align is idempotent on the golden folder") {
  Recording rec = parse_e4_folder(golden_dir());
  Recording once = align(rec);
  Recording twice = align(once);
  for (const auto& [ch, s] : once.streams)
    CHECK(s.values == twice.streams.at(ch).values);
}

TEST_CASE("align trims a 2 s head start to the common interval") {
  SensorStream acc;
  acc.sample_rate_hz = 32.0;
  acc.start_time_s = 0.0;
  acc.values.assign(320, 1.0);  // 10 s
  SensorStream eda;
  eda.sample_rate_hz = 4.0;
  eda.start_time_s = 2.0;  // starts 2 s later
  eda.values.assign(32, 0.4);  // 8 s worth

  Recording rec;
  rec.streams[Channel::AccX] = acc;
  rec.streams[Channel::Eda] = eda;
  Recording out = align(rec);
  CHECK(out.at(Channel::AccX).size() == acc.size() - 64);
  CHECK(out.at(Channel::AccX).start_time_s == doctest::Approx(2.0));
  CHECK(out.at(Channel::Eda).size() == eda.size());
}

TEST_CASE("align on disjoint spans throws NoCommonInterval") {
  SensorStream a;
  a.sample_rate_hz = 4.0;
  a.start_time_s = 0.0;
  a.values.assign(8, 1.0);
  SensorStream b = a;
  b.start_time_s = 100.0;
  Recording rec;
  rec.streams[Channel::AccX] = a;
  rec.streams[Channel::Eda] = b;
  CHECK_THROWS_AS(align(rec), Error);
}

TEST_CASE("E4 write then parse round-trips bit-exactly") {
  Recording rec = parse_e4_folder(golden_dir());
  fs::path dir = fresh_dir("roundtrip");
  write_e4_folder(rec, dir);
  Recording back = parse_e4_folder(dir);
  for (Channel ch : {Channel::AccX, Channel::AccY, Channel::AccZ, Channel::Eda,
                     Channel::Ppg, Channel::Temp}) {
    const auto& a = rec.at(ch);
    const auto& b = back.at(ch);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.values[i] == b.values[i]);
    CHECK(a.start_time_s == b.start_time_s);
    CHECK(a.sample_rate_hz == b.sample_rate_hz);
  }
}

TEST_CASE("binary container round-trips bit-exactly") {
  Recording rec = parse_e4_folder(golden_dir());
  fs::path file = fresh_dir("container") / "rec.bin";
  save_recording(rec, file);
  Recording back = load_recording(file);
  CHECK(back.subject_id == rec.subject_id);
  REQUIRE(back.streams.size() == rec.streams.size());
  for (const auto& [ch, s] : rec.streams) {
    const auto& b = back.streams.at(ch);
    REQUIRE(b.size() == s.size());
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(b.values[i] == s.values[i]);
  }
}

TEST_CASE("truncated container is rejected") {
  Recording rec = parse_e4_folder(golden_dir());
  fs::path file = fresh_dir("truncated") / "rec.bin";
  save_recording(rec, file);
  auto size = fs::file_size(file);
  fs::resize_file(file, size - 16);
  CHECK_THROWS_AS(load_recording(file), Error);
}
