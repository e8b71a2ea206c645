#include "mlsa/config.h"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <sstream>
#include <thread>
#include <type_traits>

#define TOML_EXCEPTIONS 1
#include <toml++/toml.hpp>

#include <json.hpp>

#include "mlsa/errors.h"

namespace mlsa::app {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void bad_value(const std::string& key, std::string_view why) {
  throw ConfigError("config key '" + key + "': " + std::string(why));
}

template <typename T>
T parse_text(const std::string& key, std::string_view s) {
  if constexpr (std::is_same_v<T, bool>) {
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    bad_value(key, "expected true or false, got '" + std::string(s) + "'");
  } else if constexpr (std::is_integral_v<T>) {
    T v{};
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
      bad_value(key, "expected an integer in range, got '" + std::string(s) + "'");
    }
    return v;
  } else if constexpr (std::is_floating_point_v<T>) {
    std::string str(s);
    char* end = nullptr;
    double v = std::strtod(str.c_str(), &end);
    if (str.empty() || end != str.c_str() + str.size()) {
      bad_value(key, "expected a number, got '" + str + "'");
    }
    return v;
  } else {
    return T(std::string(s));
  }
}

template <typename T>
T parse_node(const std::string& key, const toml::node& node) {
  if constexpr (std::is_same_v<T, bool>) {
    if (auto v = node.value_exact<bool>()) return *v;
    bad_value(key, "expected a boolean");
  } else if constexpr (std::is_integral_v<T>) {
    auto v = node.value_exact<std::int64_t>();
    if (!v) bad_value(key, "expected an integer");
    if (*v < 0 && std::is_unsigned_v<T>) bad_value(key, "must not be negative");
    if (static_cast<std::uint64_t>(*v) > static_cast<std::uint64_t>(std::numeric_limits<T>::max()) &&
        *v > 0) {
      bad_value(key, "out of range");
    }
    return static_cast<T>(*v);
  } else if constexpr (std::is_floating_point_v<T>) {
    if (auto v = node.value<double>()) return *v;
    bad_value(key, "expected a number");
  } else {
    if (auto v = node.value_exact<std::string>()) return T(*v);
    bad_value(key, "expected a string");
  }
}

template <typename T>
std::string show(const T& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_integral_v<T>) {
    return std::to_string(v);
  } else if constexpr (std::is_floating_point_v<T>) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    std::string s = buf;
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
  } else if constexpr (std::is_same_v<T, fs::path>) {
    return nlohmann::json(v.string()).dump();
  } else {
    return nlohmann::json(v).dump();
  }
}

struct Field {
  std::string key;
  std::string description;
  std::function<void(PipelineConfig&, const toml::node&)> from_toml;
  std::function<void(PipelineConfig&, std::string_view)> from_text;
  std::function<std::string(const PipelineConfig&)> render;
};

template <typename Access>
Field field(std::string key, std::string description, Access access) {
  using T = std::remove_cvref_t<decltype(access(std::declval<PipelineConfig&>()))>;
  Field f;
  f.key = key;
  f.description = std::move(description);
  f.from_toml = [key, access](PipelineConfig& c, const toml::node& n) {
    access(c) = parse_node<T>(key, n);
  };
  f.from_text = [key, access](PipelineConfig& c, std::string_view s) {
    access(c) = parse_text<T>(key, s);
  };
  f.render = [access](const PipelineConfig& c) {
    return show<T>(access(const_cast<PipelineConfig&>(c)));
  };
  return f;
}

#define MLSA_FIELD(key, desc, expr) field(key, desc, [](PipelineConfig& c) -> auto& { return expr; })

const std::vector<Field>& fields() {
  static const std::vector<Field> kFields = {
      MLSA_FIELD("data.dir", "root directory for log, archive, index, model, metrics", c.data_dir),
      MLSA_FIELD("topics.documents", "topic receiving ingested envelopes", c.documents_topic),
      MLSA_FIELD("topics.documents_partitions", "partition count of the documents topic",
                 c.documents_partitions),
      MLSA_FIELD("topics.labeled", "topic receiving scored records", c.labeled_topic),
      MLSA_FIELD("topics.labeled_partitions", "partition count of the labeled topic",
                 c.labeled_partitions),
      MLSA_FIELD("topics.segment_bytes", "log segment roll size in bytes", c.log_segment_bytes),
      MLSA_FIELD("topics.retention_bytes", "per-partition retention in bytes, 0 = unlimited",
                 c.log_retention_bytes),
      MLSA_FIELD("ingest.dedup_capacity", "fingerprints kept by the duplicate filter",
                 c.dedup_capacity),
      MLSA_FIELD("ingest.speedup", "replay speed multiplier over recorded gaps", c.replay_speedup),
      MLSA_FIELD("ingest.full_speed", "replay without delays", c.full_speed),
      MLSA_FIELD("ingest.tcp_bind", "address the TCP line source binds", c.tcp_bind),
      MLSA_FIELD("textprep.vocab_size", "maximum vocabulary size including <pad> and <oov>",
                 c.hyper.vocab_size),
      MLSA_FIELD("textprep.min_freq", "minimum token frequency for the vocabulary", c.min_freq),
      MLSA_FIELD("textprep.seq_len", "encoded sequence length L", c.hyper.seq_len),
      MLSA_FIELD("model.embed_dim", "embedding width d", c.hyper.embed_dim),
      MLSA_FIELD("model.hidden_dim", "LSTM hidden width h", c.hyper.hidden_dim),
      MLSA_FIELD("model.batch_size", "training mini-batch size", c.hyper.batch_size),
      MLSA_FIELD("model.epochs", "training epochs", c.hyper.epochs),
      MLSA_FIELD("model.learning_rate", "Adam learning rate", c.hyper.learning_rate),
      MLSA_FIELD("model.clip_norm", "global gradient-norm clip", c.hyper.clip_norm),
      MLSA_FIELD("model.seed", "seed for init, split and shuffling", c.hyper.seed),
      MLSA_FIELD("model.path", "model.bin location (default <data.dir>/model/model.bin)",
                 c.model_path),
      MLSA_FIELD("model.vocab_path", "vocab.json location (default next to model.bin)",
                 c.vocab_path),
      MLSA_FIELD("model.threads", "worker threads for training and scoring, 0 = all cores",
                 c.threads),
      MLSA_FIELD("archive.compress", "gzip archive segments", c.archive_compress),
      MLSA_FIELD("archive.segment_bytes", "archive segment roll size in bytes",
                 c.archive_segment_bytes),
      MLSA_FIELD("archive.segment_span_ms", "archive segment roll span in event-time ms",
                 c.archive_segment_span_ms),
      MLSA_FIELD("stream.interval_ms", "micro-batch interval", c.stream_interval_ms),
      MLSA_FIELD("stream.max_batch", "records per micro-batch at most", c.stream_max_batch),
      MLSA_FIELD("stream.group", "consumer group of the stream processor", c.stream_group),
      MLSA_FIELD("index.snapshot_interval_ms", "how often a running pipeline snapshots the index",
                 c.index_snapshot_interval_ms),
      MLSA_FIELD("serve.host", "HTTP bind address", c.http_host),
      MLSA_FIELD("serve.port", "HTTP port (0 picks a free port)", c.http_port),
  };
  return kFields;
}

#undef MLSA_FIELD

const Field& find_field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key == key) return f;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void apply_table(PipelineConfig& cfg, const toml::table& root) {
  for (const auto& [section, node] : root) {
    const std::string sec(section.str());
    const toml::table* tbl = node.as_table();
    if (!tbl) throw ConfigError("config entry '" + sec + "' must be a [section]");
    for (const auto& [name, value] : *tbl) {
      const std::string key = sec + "." + std::string(name.str());
      if (value.is_table() || value.is_array()) {
        throw ConfigError("config key '" + key + "' must be a scalar");
      }
      find_field(key).from_toml(cfg, value);
    }
  }
}

PipelineConfig finish(PipelineConfig cfg, const std::vector<Override>& overrides) {
  for (const auto& [key, value] : overrides) find_field(key).from_text(cfg, value);
  cfg.validate();
  return cfg;
}

}  // namespace

fs::path PipelineConfig::resolved_model_path() const {
  return model_path.empty() ? data_dir / "model" / "model.bin" : model_path;
}

fs::path PipelineConfig::resolved_vocab_path() const {
  return vocab_path.empty() ? resolved_model_path().parent_path() / "vocab.json" : vocab_path;
}

std::size_t PipelineConfig::resolved_threads() const {
  if (threads > 0) return threads;
  return std::max(1u, std::thread::hardware_concurrency());
}

void PipelineConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(!data_dir.empty(), "data.dir must be set");
  require(documents_partitions >= 1 && labeled_partitions >= 1, "topic partitions must be >= 1");
  require(documents_topic != labeled_topic, "documents and labeled topics must differ");
  require(log_segment_bytes >= 1024, "topics.segment_bytes must be >= 1024");
  require(dedup_capacity >= 1, "ingest.dedup_capacity must be >= 1");
  require(replay_speedup > 0 && std::isfinite(replay_speedup), "ingest.speedup must be > 0");
  require(min_freq >= 1, "textprep.min_freq must be >= 1");
  require(archive_segment_bytes >= 1 && archive_segment_span_ms >= 1,
          "archive segment limits must be positive");
  require(stream_interval_ms >= 10, "stream.interval_ms must be >= 10");
  require(stream_max_batch >= 1, "stream.max_batch must be >= 1");
  require(!stream_group.empty(), "stream.group must be set");
  require(index_snapshot_interval_ms >= 100, "index.snapshot_interval_ms must be >= 100");
  try {
    hyper.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

PipelineConfig parse_config(std::string_view toml_text, const std::vector<Override>& overrides) {
  PipelineConfig cfg;
  try {
    apply_table(cfg, toml::parse(toml_text));
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "config parse error: " << e.description() << " at line " << e.source().begin.line;
    throw ConfigError(msg.str());
  }
  return finish(std::move(cfg), overrides);
}

PipelineConfig load_config(const std::optional<fs::path>& file,
                           const std::vector<Override>& overrides) {
  PipelineConfig cfg;
  if (file) {
    if (!fs::exists(*file)) throw ConfigError("config file not found: " + file->string());
    try {
      apply_table(cfg, toml::parse_file(file->string()));
    } catch (const toml::parse_error& e) {
      std::ostringstream msg;
      msg << "config parse error in " << file->string() << ": " << e.description() << " at line "
          << e.source().begin.line;
      throw ConfigError(msg.str());
    }
  }
  return finish(std::move(cfg), overrides);
}

Override parse_override(std::string_view assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("expected key=value, got '" + std::string(assignment) + "'");
  }
  return {std::string(assignment.substr(0, eq)), std::string(assignment.substr(eq + 1))};
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const auto& f : fields()) out.push_back({f.key, f.description});
    return out;
  }();
  return keys;
}

std::string config_value(const PipelineConfig& cfg, const std::string& key) {
  return find_field(key).render(cfg);
}

std::string to_toml(const PipelineConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    const std::string sec = f.key.substr(0, f.key.find('.'));
    if (sec != section) {
      if (!section.empty()) out += "\n";
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += "# " + f.description + "\n";
    out += f.key.substr(sec.size() + 1) + " = " + f.render(cfg) + "\n";
  }
  return out;
}

}  // namespace mlsa::app
