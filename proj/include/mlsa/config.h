#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mlsa/sentiment_model.h"

namespace mlsa::app {

// Every setting with its default. Keys are "<section>.<name>" and match the
// TOML layout of the config file (see README).
struct PipelineConfig {
  std::filesystem::path data_dir = "mlsa-data";

  std::string documents_topic = "documents";
  std::uint32_t documents_partitions = 4;
  std::string labeled_topic = "labeled";
  std::uint32_t labeled_partitions = 4;
  std::uint64_t log_segment_bytes = 64ull << 20;
  std::uint64_t log_retention_bytes = 0;  // 0 keeps everything

  std::size_t dedup_capacity = 100000;
  double replay_speedup = 1.0;
  bool full_speed = false;
  std::string tcp_bind = "127.0.0.1";

  std::size_t min_freq = 1;
  model::LstmHyperparams hyper;  // textprep.vocab_size / seq_len live here too
  std::filesystem::path model_path;  // empty: <data_dir>/model/model.bin
  std::filesystem::path vocab_path;  // empty: vocab.json next to the model
  std::size_t threads = 0;           // 0: hardware concurrency

  bool archive_compress = false;
  std::uint64_t archive_segment_bytes = 128ull << 20;
  std::int64_t archive_segment_span_ms = 6ll * 3600 * 1000;

  std::int64_t stream_interval_ms = 1000;
  std::size_t stream_max_batch = 4096;
  std::string stream_group = "streamproc";

  std::int64_t index_snapshot_interval_ms = 30000;

  std::string http_host = "127.0.0.1";
  std::uint16_t http_port = 8080;

  std::filesystem::path resolved_model_path() const;
  std::filesystem::path resolved_vocab_path() const;
  std::size_t resolved_threads() const;
  // Throws ConfigError on out-of-range values.
  void validate() const;
};

using Override = std::pair<std::string, std::string>;

// defaults < file < overrides. Unknown keys and malformed values raise
// ConfigError naming the key.
PipelineConfig load_config(const std::optional<std::filesystem::path>& file,
                           const std::vector<Override>& overrides = {});
PipelineConfig parse_config(std::string_view toml_text, const std::vector<Override>& overrides = {});

// Parses "key=value".
Override parse_override(std::string_view assignment);

struct ConfigKey {
  std::string key;
  std::string description;
};
const std::vector<ConfigKey>& config_keys();
// Current value of `key` rendered as text; throws ConfigError if unknown.
std::string config_value(const PipelineConfig& cfg, const std::string& key);
// TOML text that load_config reads back to the same configuration.
std::string to_toml(const PipelineConfig& cfg);

}  // namespace mlsa::app
