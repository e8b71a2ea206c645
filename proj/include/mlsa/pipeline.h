#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include <json.hpp>

#include "mlsa/analytics.h"
#include "mlsa/archive.h"
#include "mlsa/config.h"
#include "mlsa/index.h"
#include "mlsa/ingest.h"
#include "mlsa/mqlog.h"
#include "mlsa/streamproc.h"

namespace mlsa::app {

inline constexpr const char* kArchiveGroup = "archiver";

// Exclusive advisory lock on <data_dir>/LOCK for the life of the object.
class DataDirLock {
 public:
  explicit DataDirLock(const std::filesystem::path& data_dir);
  ~DataDirLock();
  DataDirLock(const DataDirLock&) = delete;
  DataDirLock& operator=(const DataDirLock&) = delete;

 private:
  int fd_ = -1;
};

std::filesystem::path stop_file(const std::filesystem::path& data_dir);
// Creates the control file a running `stream`/`serve` polls for.
void request_stop(const std::filesystem::path& data_dir);

// Everything a data directory holds, opened together: the message log with
// its two topics, the archive and the in-memory index. The archive and index
// are fed from the documents and labeled topics ("tee" consumers).
class Pipeline {
 public:
  explicit Pipeline(PipelineConfig cfg);
  ~Pipeline();

  const PipelineConfig& config() const { return cfg_; }
  mqlog::MessageLog& log() { return *log_; }
  archive::Archive& archive() { return *archive_; }
  const index::InvertedIndex& index() const { return index_; }

  // Drains `source` into the documents topic, feeding archive and index as
  // it goes. Stops early when should_stop() turns true.
  ingest::IngestCounters ingest(ingest::RecordSource& source,
                                const std::function<bool()>& should_stop = {});

  // Archive consumer: documents topic -> archive, committed after flush.
  std::size_t pump_archive();
  // Index consumer: new documents (never overwriting) then labeled records
  // (replacing). Returns records applied.
  std::size_t catch_up_index();
  void pump_tee() {
    pump_archive();
    catch_up_index();
  }
  std::filesystem::path snapshot_index();
  // Snapshots when the configured interval has elapsed since the last one.
  void maybe_snapshot_index();

  streamproc::MicroBatchConfig stream_config() const;
  std::filesystem::path metrics_path() const;
  bool stop_requested() const;
  void clear_stop() const;

  // Shared by CLI and HTTP so both emit identical bytes.
  std::string counts_json();
  std::string timeline_json(std::int64_t window_ms, std::optional<std::int64_t> from,
                            std::optional<std::int64_t> to);
  nlohmann::ordered_json search_json(const std::string& query,
                                     std::optional<Sentiment> label, std::size_t k) const;

 private:
  std::string positions_meta() const;
  void load_positions(const std::string& meta);
  std::size_t catch_up_topic(const std::string& topic, bool labeled);

  PipelineConfig cfg_;
  DataDirLock lock_;
  std::unique_ptr<mqlog::MessageLog> log_;
  std::unique_ptr<archive::Archive> archive_;
  index::InvertedIndex index_;
  std::mutex tee_mu_;
  std::map<std::string, std::uint64_t> positions_;  // "topic/partition" -> next offset
  std::chrono::steady_clock::time_point last_snapshot_;
};

}  // namespace mlsa::app
