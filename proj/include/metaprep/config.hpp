#pragma once

#include "metaprep/finetune.hpp"
#include "metaprep/metatrain.hpp"

#include <iosfwd>
#include <map>
#include <string>

namespace metaprep::cli {

// Flat key=value text with dotted section prefixes (model.d_model=32).
// Lines starting with '#' are comments. parse -> serialize -> parse is the
// identity on the key/value map.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& in, const std::string& origin);
  static KeyValueConfig parse_file(const std::string& path);
  std::string serialize() const;

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  // Getters throw ConfigError naming the missing/ill-typed field and, when
  // known, the source line.
  const std::string& get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::int64_t get_int(const std::string& key) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;

  const std::map<std::string, std::string>& entries() const { return values_; }
  bool operator==(const KeyValueConfig& other) const { return values_ == other.values_; }

 private:
  std::string describe(const std::string& key) const;

  std::map<std::string, std::string> values_;
  std::map<std::string, int> lines_;
  std::string origin_;
};

struct FinetuneSpec {
  std::vector<ft::TaskKind> kinds;
  std::uint64_t task_seed{0};
  int epochs{4};
  double lr{5e-3};
  std::vector<std::uint64_t> seeds;
  ft::SplitSizes sizes;
  Index batch_size{16};
  Index seq_len{16};
  int label_k{0};  // pre-training depth this run is attributed to in reports
};

// Everything a run needs, made explicit. Serialized run configs list every
// field; nothing is left to hidden defaults.
struct ExperimentConfig {
  std::string run_id;
  std::uint64_t seed{0};
  std::string out_dir;
  nn::ModelConfig model;
  meta::MetaConfig meta;
  tasks::TaskMix mix;
  Index batch_size{8};
  Index seq_len{16};
  Index corpus_docs{64};
  std::uint64_t corpus_seed{0};
  FinetuneSpec finetune;

  // `need_meta` demands the pre-training section; `need_finetune` the
  // fine-tuning one.
  static ExperimentConfig from_config(const KeyValueConfig& kv, bool need_meta, bool need_finetune);
  KeyValueConfig to_config() const;
};

tasks::TaskMix parse_task_mix(const std::string& text);
std::string format_task_mix(const tasks::TaskMix& mix);

}  // namespace metaprep::cli
