#include "metaprep/runlog.hpp"

#include <json.hpp>

#include <chrono>
#include <fstream>

namespace metaprep::cli {

using nlohmann::json;

const char* phase_name(Phase phase) {
  switch (phase) {
    case Phase::kPretrain: return "PRETRAIN";
    case Phase::kFinetune: return "FINETUNE";
    case Phase::kCheck: return "CHECK";
  }
  return "?";
}

Phase phase_from_name(const std::string& name) {
  if (name == "PRETRAIN") return Phase::kPretrain;
  if (name == "FINETUNE") return Phase::kFinetune;
  if (name == "CHECK") return Phase::kCheck;
  throw IoError("unknown phase '" + name + "'");
}

std::string encode_record(const RunRecord& record) {
  json j;
  j["run_id"] = record.run_id;
  j["step"] = record.step;
  j["phase"] = phase_name(record.phase);
  j["metrics"] = record.metrics;
  j["ts"] = record.timestamp;
  return j.dump();
}

RunRecord decode_record(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw IoError("corrupt run record: " + std::string(e.what()));
  }
  RunRecord r;
  try {
    r.run_id = j.at("run_id").get<std::string>();
    r.step = j.at("step").get<std::int64_t>();
    r.phase = phase_from_name(j.at("phase").get<std::string>());
    r.metrics = j.at("metrics").get<std::map<std::string, double>>();
    r.timestamp = j.at("ts").get<std::int64_t>();
  } catch (const json::exception& e) {
    throw IoError("corrupt run record: " + std::string(e.what()));
  }
  return r;
}

void append_records(const std::string& path, const std::vector<RunRecord>& records) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot open run log '" + path + "' for append");
  for (const RunRecord& r : records) out << encode_record(r) << "\n";
  if (!out) throw IoError("write to run log '" + path + "' failed");
}

std::vector<RunRecord> read_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open run log '" + path + "'");
  std::vector<RunRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    records.push_back(decode_record(line));
  }
  return records;
}

std::int64_t now_seconds() {
  return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

}  // namespace metaprep::cli
