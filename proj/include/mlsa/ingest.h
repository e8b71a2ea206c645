#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <unordered_set>

#include "mlsa/envelope.h"

namespace mlsa::ingest {

struct RawRecord {
  std::string source_id;
  std::int64_t arrival_time = 0;
  std::string payload;
};

class RecordSource {
 public:
  virtual ~RecordSource() = default;
  // Next record, or nullopt when the stream has ended.
  virtual std::optional<RawRecord> next() = 0;
  // Lines dropped because they were not a JSON object.
  virtual std::uint64_t malformed_skipped() const = 0;
};

using SleepUntil = std::function<void(std::chrono::steady_clock::time_point)>;

// Replays a JSON-lines file. With a finite speedup each record is released
// at (timestamp - first_timestamp) / speedup after the first; an infinite
// speedup never sleeps. arrival_time is the line's `timestamp`, carried
// forward when absent, starting from the file's modification time, so
// replays are reproducible.
class ReplaySource : public RecordSource {
 public:
  ReplaySource(const std::filesystem::path& path, double speedup,
               SleepUntil sleep_until = {});

  std::optional<RawRecord> next() override;
  std::uint64_t malformed_skipped() const override { return malformed_; }
  std::uint64_t sleeps() const { return sleeps_; }

 private:
  std::ifstream in_;
  std::string source_id_;
  double speedup_;
  SleepUntil sleep_until_;
  std::int64_t last_arrival_ = 0;
  std::optional<std::int64_t> first_timestamp_;
  std::chrono::steady_clock::time_point start_;
  std::uint64_t malformed_ = 0;
  std::uint64_t sleeps_ = 0;
};

// Accepts a single TCP connection and reads JSON lines from it until the
// peer closes. arrival_time is wall-clock receipt time.
class TcpLineSource : public RecordSource {
 public:
  // Binds 127.0.0.1:port (0 picks an ephemeral port).
  explicit TcpLineSource(std::uint16_t port, std::string bind_address = "127.0.0.1");
  ~TcpLineSource() override;
  TcpLineSource(const TcpLineSource&) = delete;
  TcpLineSource& operator=(const TcpLineSource&) = delete;

  std::uint16_t port() const { return port_; }
  // Makes a blocked next() return nullopt promptly; safe from any thread.
  void stop() { stopped_ = true; }

  std::optional<RawRecord> next() override;
  std::uint64_t malformed_skipped() const override { return malformed_; }

 private:
  bool wait_readable(int fd);
  std::optional<std::string> read_line();

  int listen_fd_ = -1;
  int conn_fd_ = -1;
  std::uint16_t port_ = 0;
  std::string buffer_;
  bool eof_ = false;
  std::atomic<bool> stopped_{false};
  std::uint64_t malformed_ = 0;
  std::int64_t last_arrival_ = 0;
};

// Maps `id`, `timestamp`, `text`, `user`, `label`. Missing id -> hex FNV-1a of
// the payload; missing timestamp -> arrival_time.
// Throws ExtractionError (bad JSON / field types) or EmptyTextError.
RecordEnvelope extract(const RawRecord& raw);

// Lowercase + collapse whitespace runs + trim.
std::string normalize_for_fingerprint(std::string_view text);
std::uint64_t fingerprint(std::string_view text);

enum class DedupVerdict { kKeep, kDrop };

// Bounded FIFO set of content fingerprints.
class DedupFilter {
 public:
  explicit DedupFilter(std::size_t capacity = 100000);

  DedupVerdict check(std::string_view text);
  DedupVerdict check(const RecordEnvelope& env) { return check(env.text); }

  std::size_t size() const { return seen_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t evictions() const { return evictions_; }

 private:
  std::size_t capacity_;
  std::unordered_set<std::uint64_t> seen_;
  std::deque<std::uint64_t> order_;
  std::uint64_t evictions_ = 0;
};

// Placeholder stage for misinformation filtering; currently passes every
// record through and only counts.
class NoiseFilter {
 public:
  bool accept(const RecordEnvelope&) {
    ++inspected_;
    return true;
  }
  std::uint64_t inspected() const { return inspected_; }

 private:
  std::uint64_t inspected_ = 0;
};

struct IngestCounters {
  std::uint64_t records_in = 0;
  std::uint64_t envelopes_out = 0;
  std::uint64_t parse_skipped = 0;
  std::uint64_t empty_dropped = 0;
  std::uint64_t dup_dropped = 0;
  std::uint64_t noise_dropped = 0;

  bool reconciles() const {
    return records_in == envelopes_out + parse_skipped + empty_dropped + dup_dropped +
                             noise_dropped;
  }
  IngestCounters& operator+=(const IngestCounters& o);
};

// extract -> noise filter -> dedup for one source. Not thread-safe; run one
// per source.
class IngestPipeline {
 public:
  explicit IngestPipeline(std::size_t dedup_capacity = 100000);

  std::optional<RecordEnvelope> process(const RawRecord& raw);

  // Drains `source` into `sink`, folding the source's malformed-line count
  // into the counters.
  IngestCounters run(RecordSource& source,
                     const std::function<void(RecordEnvelope&&)>& sink);

  const IngestCounters& counters() const { return counters_; }
  const DedupFilter& dedup() const { return dedup_; }

 private:
  DedupFilter dedup_;
  NoiseFilter noise_;
  IngestCounters counters_;
};

}  // namespace mlsa::ingest
