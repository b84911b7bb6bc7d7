#pragma once

#include "metaprep/common.hpp"

#include <map>
#include <string>
#include <vector>

namespace metaprep::cli {

enum class Phase { kPretrain, kFinetune, kCheck };

const char* phase_name(Phase phase);
Phase phase_from_name(const std::string& name);

// Append-only metrics row; one JSON object per line on disk.
struct RunRecord {
  std::string run_id;
  std::int64_t step{0};
  Phase phase{Phase::kPretrain};
  std::map<std::string, double> metrics;
  std::int64_t timestamp{0};  // seconds since epoch
};

std::string encode_record(const RunRecord& record);
RunRecord decode_record(const std::string& line);

void append_records(const std::string& path, const std::vector<RunRecord>& records);
std::vector<RunRecord> read_records(const std::string& path);

std::int64_t now_seconds();

}  // namespace metaprep::cli
