#include "metaprep/config.hpp"

#include <fstream>
#include <sstream>

namespace metaprep::cli {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  parts.push_back(cur);
  return parts;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::istream& in, const std::string& origin) {
  KeyValueConfig cfg;
  cfg.origin_ = origin;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key=value, got '" + t + "'");
    }
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
    }
    if (cfg.values_.count(key) > 0) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
    cfg.values_[key] = value;
    cfg.lines_[key] = line_no;
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse(in, path);
}

std::string KeyValueConfig::serialize() const {
  std::ostringstream os;
  for (const auto& [key, value] : values_) os << key << "=" << value << "\n";
  return os.str();
}

std::string KeyValueConfig::describe(const std::string& key) const {
  auto it = lines_.find(key);
  if (it != lines_.end()) return origin_ + ":" + std::to_string(it->second) + ": field '" + key + "'";
  return (origin_.empty() ? std::string("config") : origin_) + ": field '" + key + "'";
}

const std::string& KeyValueConfig::get_string(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) {
    throw ConfigError((origin_.empty() ? std::string("config") : origin_) + ": missing required field '" + key +
                      "'");
  }
  return it->second;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

std::int64_t KeyValueConfig::get_int(const std::string& key) const {
  const std::string& s = get_string(key);
  try {
    size_t used = 0;
    std::int64_t v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(describe(key) + ": expected an integer, got '" + s + "'");
  }
}

std::int64_t KeyValueConfig::get_int(const std::string& key, std::int64_t fallback) const {
  return has(key) ? get_int(key) : fallback;
}

double KeyValueConfig::get_double(const std::string& key) const {
  const std::string& s = get_string(key);
  try {
    size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(describe(key) + ": expected a number, got '" + s + "'");
  }
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

tasks::TaskMix parse_task_mix(const std::string& text) {
  tasks::TaskMix mix;
  for (const std::string& part : split(text, ',')) {
    std::string t = trim(part);
    if (t.empty()) continue;
    auto kv = split(t, ':');
    if (kv.size() != 2) throw ConfigError("task mix entry '" + t + "' is not tag:probability");
    try {
      mix.entries.emplace_back(task_tag_from_name(trim(kv[0])), std::stod(trim(kv[1])));
    } catch (const ValueError& e) {
      throw ConfigError(std::string(e.what()));
    } catch (const std::exception&) {
      throw ConfigError("task mix entry '" + t + "' has a malformed probability");
    }
  }
  mix.validate();
  return mix;
}

std::string format_task_mix(const tasks::TaskMix& mix) {
  std::ostringstream os;
  for (size_t i = 0; i < mix.entries.size(); ++i) {
    if (i) os << ",";
    os << task_tag_name(mix.entries[i].first) << ":" << format_double(mix.entries[i].second);
  }
  return os.str();
}

ExperimentConfig ExperimentConfig::from_config(const KeyValueConfig& kv, bool need_meta, bool need_finetune) {
  ExperimentConfig cfg;
  cfg.run_id = kv.get_string("run.id");
  cfg.seed = static_cast<std::uint64_t>(kv.get_int("run.seed"));
  cfg.out_dir = kv.get_string("run.out", "");

  cfg.model.vocab_size = kv.get_int("model.vocab_size");
  cfg.model.max_len = kv.get_int("model.max_len");
  cfg.model.d_model = kv.get_int("model.d_model");
  cfg.model.n_heads = kv.get_int("model.n_heads");
  cfg.model.n_layers = kv.get_int("model.n_layers");
  cfg.model.d_ff = kv.get_int("model.d_ff");
  cfg.model.n_segments = kv.get_int("model.n_segments", 2);
  cfg.model.dropout_rate = kv.get_double("model.dropout", 0.0);
  cfg.model.validate();

  if (need_meta) {
    cfg.meta.k = static_cast<int>(kv.get_int("meta.k"));
    cfg.meta.alpha = kv.get_double("meta.alpha");
    cfg.meta.beta = kv.get_double("meta.beta");
    cfg.meta.grad_mode = meta::grad_mode_from_name(kv.get_string("meta.grad_mode"));
    cfg.meta.outer_optimizer = meta::outer_opt_from_name(kv.get_string("meta.optimizer"));
    cfg.meta.total_meta_test_steps = kv.get_int("meta.steps");
    cfg.meta.checkpoint_interval = kv.get_int("meta.checkpoint_interval", 0);
    cfg.meta.seed = cfg.seed;
    cfg.meta.validate();

    cfg.mix = parse_task_mix(kv.get_string("tasks.mix"));
    cfg.batch_size = kv.get_int("tasks.batch_size");
    cfg.seq_len = kv.get_int("tasks.seq_len");
    cfg.corpus_docs = kv.get_int("tasks.corpus_docs");
    cfg.corpus_seed = static_cast<std::uint64_t>(kv.get_int("tasks.corpus_seed"));
    if (cfg.seq_len > cfg.model.max_len) {
      throw ConfigError("tasks.seq_len exceeds model.max_len");
    }
  }

  if (need_finetune) {
    for (const std::string& part : split(kv.get_string("finetune.tasks"), ',')) {
      std::string t = trim(part);
      if (!t.empty()) cfg.finetune.kinds.push_back(ft::task_kind_from_name(t));
    }
    if (cfg.finetune.kinds.empty()) throw ConfigError("finetune.tasks lists no tasks");
    cfg.finetune.task_seed = static_cast<std::uint64_t>(kv.get_int("finetune.task_seed"));
    cfg.finetune.epochs = static_cast<int>(kv.get_int("finetune.epochs"));
    cfg.finetune.lr = kv.get_double("finetune.lr");
    for (const std::string& part : split(kv.get_string("finetune.seeds"), ',')) {
      std::string t = trim(part);
      if (!t.empty()) cfg.finetune.seeds.push_back(static_cast<std::uint64_t>(std::stoll(t)));
    }
    if (cfg.finetune.seeds.empty()) throw ConfigError("finetune.seeds lists no seeds");
    cfg.finetune.sizes.train = kv.get_int("finetune.train_size");
    cfg.finetune.sizes.dev = kv.get_int("finetune.dev_size");
    cfg.finetune.sizes.test = kv.get_int("finetune.test_size");
    cfg.finetune.batch_size = kv.get_int("finetune.batch_size", 16);
    cfg.finetune.seq_len = kv.get_int("finetune.seq_len");
    cfg.finetune.label_k = static_cast<int>(kv.get_int("finetune.label_k", 0));
    if (cfg.finetune.seq_len > cfg.model.max_len) {
      throw ConfigError("finetune.seq_len exceeds model.max_len");
    }
    if (cfg.finetune.epochs < 0) throw ConfigError("finetune.epochs must be >= 0");
    if (cfg.finetune.lr < 0) throw ConfigError("finetune.lr must be >= 0");
  }
  return cfg;
}

KeyValueConfig ExperimentConfig::to_config() const {
  KeyValueConfig kv;
  kv.set("run.id", run_id);
  kv.set("run.seed", std::to_string(seed));
  kv.set("run.out", out_dir);
  kv.set("model.vocab_size", std::to_string(model.vocab_size));
  kv.set("model.max_len", std::to_string(model.max_len));
  kv.set("model.d_model", std::to_string(model.d_model));
  kv.set("model.n_heads", std::to_string(model.n_heads));
  kv.set("model.n_layers", std::to_string(model.n_layers));
  kv.set("model.d_ff", std::to_string(model.d_ff));
  kv.set("model.n_segments", std::to_string(model.n_segments));
  kv.set("model.dropout", format_double(model.dropout_rate));
  kv.set("meta.k", std::to_string(meta.k));
  kv.set("meta.alpha", format_double(meta.alpha));
  kv.set("meta.beta", format_double(meta.beta));
  kv.set("meta.grad_mode", meta::grad_mode_name(meta.grad_mode));
  kv.set("meta.optimizer", meta::outer_opt_name(meta.outer_optimizer));
  kv.set("meta.steps", std::to_string(meta.total_meta_test_steps));
  kv.set("meta.checkpoint_interval", std::to_string(meta.checkpoint_interval));
  if (!mix.entries.empty()) kv.set("tasks.mix", format_task_mix(mix));
  kv.set("tasks.batch_size", std::to_string(batch_size));
  kv.set("tasks.seq_len", std::to_string(seq_len));
  kv.set("tasks.corpus_docs", std::to_string(corpus_docs));
  kv.set("tasks.corpus_seed", std::to_string(corpus_seed));
  if (!finetune.kinds.empty()) {
    std::ostringstream names;
    for (size_t i = 0; i < finetune.kinds.size(); ++i) {
      if (i) names << ",";
      names << ft::task_kind_name(finetune.kinds[i]);
    }
    kv.set("finetune.tasks", names.str());
    kv.set("finetune.task_seed", std::to_string(finetune.task_seed));
    kv.set("finetune.epochs", std::to_string(finetune.epochs));
    kv.set("finetune.lr", format_double(finetune.lr));
    std::ostringstream seeds;
    for (size_t i = 0; i < finetune.seeds.size(); ++i) {
      if (i) seeds << ",";
      seeds << finetune.seeds[i];
    }
    kv.set("finetune.seeds", seeds.str());
    kv.set("finetune.train_size", std::to_string(finetune.sizes.train));
    kv.set("finetune.dev_size", std::to_string(finetune.sizes.dev));
    kv.set("finetune.test_size", std::to_string(finetune.sizes.test));
    kv.set("finetune.batch_size", std::to_string(finetune.batch_size));
    kv.set("finetune.seq_len", std::to_string(finetune.seq_len));
    kv.set("finetune.label_k", std::to_string(finetune.label_k));
  }
  return kv;
}

}  // namespace metaprep::cli
