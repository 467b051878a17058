#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "physiogait/core.hpp"

namespace physiogait {

/// Multi-channel recording from one device session. Streams share a common
/// wall-clock timeline but may start/stop at different instants until
/// align() trims them.
struct Recording {
  std::string subject_id;
  std::map<Channel, SensorStream> streams;
  std::string source_path;
  std::vector<std::string> warnings;

  bool has(Channel c) const { return streams.count(c) != 0; }
  const SensorStream& at(Channel c) const;
};

/// Parse an Empatica-E4-style folder (ACC.csv, EDA.csv, BVP.csv, TEMP.csv,
/// optional IBI.csv). Row 1: UNIX start time per column, row 2: sample rate,
/// remaining rows: samples. ACC columns are x,y,z in 1/64 g and come back
/// converted to g. A declared rate that differs from the channel's expected
/// rate is kept and recorded as a warning.
Recording parse_e4_folder(const std::filesystem::path& path);

/// Write a Recording back out as an E4 folder (inverse of parse_e4_folder).
void write_e4_folder(const Recording& rec, const std::filesystem::path& path);

/// Trim all streams to the maximal common wall-clock interval.
Recording align(const Recording& rec);

/// Binary recording container: one line of JSON (channels, rates, start
/// times, counts, subject_id, format_version=1) followed by little-endian
/// float64 sample blocks in the header's channel order.
void save_recording(const Recording& rec, const std::filesystem::path& path);
Recording load_recording(const std::filesystem::path& path);

}  // namespace physiogait
