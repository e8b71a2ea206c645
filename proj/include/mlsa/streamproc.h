#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mlsa/envelope.h"
#include "mlsa/model_bundle.h"
#include "mlsa/mqlog.h"

namespace mlsa::streamproc {

struct MicroBatchConfig {
  std::int64_t interval_ms = 1000;
  std::size_t max_batch = 4096;
  std::string input_topic = "documents";
  std::string output_topic = "labeled";
  std::string group = "streamproc";
  std::size_t threads = 1;
  // Empty disables metrics output.
  std::filesystem::path metrics_path;

  // Throws ConfigError.
  void validate() const;
};

struct BatchMetrics {
  std::int64_t batch_id = 0;
  std::size_t records = 0;
  std::size_t parse_errors = 0;
  double poll_ms = 0, score_ms = 0, emit_ms = 0, total_ms = 0;
  std::uint64_t lag = 0;
  std::uint64_t retries = 0;
  std::int64_t finished_at = 0;

  nlohmann::ordered_json to_json() const;
};

struct MetricsSummary {
  std::uint64_t batches = 0;
  std::uint64_t records = 0;
  std::uint64_t parse_errors = 0;
  std::uint64_t retries = 0;
  std::uint64_t max_lag = 0;
  double p50_total_ms = 0, p99_total_ms = 0, max_total_ms = 0;

  void add(const BatchMetrics& m);
  std::vector<double> totals;
};

// Nearest-rank percentile; 0 for an empty sample.
double percentile(std::vector<double> values, double q);

// One LabeledRecord per envelope in input order; records are scored
// independently, fanned out over `threads`.
std::vector<LabeledRecord> score_batch(const ModelBundle& bundle,
                                       std::span<const RecordEnvelope> batch,
                                       std::int64_t batch_id, std::size_t threads = 1,
                                       std::int64_t scored_at = 0);

// Backoff for transient log errors: 100 ms doubling, capped at 5 s.
std::chrono::milliseconds backoff_delay(std::uint32_t attempt);

// Poll -> score -> append to output -> flush -> commit, on a timer.
class StreamProcessor {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;
  // Runs after output is flushed and before offsets are committed; throwing
  // from it models a crash at that point.
  using KillPoint = std::function<void(const BatchMetrics&)>;

  StreamProcessor(mqlog::MessageLog& log, const ModelBundle& bundle, MicroBatchConfig config);

  // One cycle without waiting. nullopt when nothing was polled.
  std::optional<BatchMetrics> run_once();

  // Cycles every interval_ms until should_stop() is true; the batch in
  // flight when stop is observed completes first. `after_batch` (optional)
  // is called after each committed non-empty batch.
  MetricsSummary run(const std::function<bool()>& should_stop,
                     const std::function<void(const BatchMetrics&)>& after_batch = {});

  void set_sleeper(Sleeper s) { sleeper_ = std::move(s); }
  void set_kill_point(KillPoint k) { kill_point_ = std::move(k); }
  // Test hook invoked before each emit attempt; may throw LogIoError.
  void set_emit_fault(std::function<void(std::uint32_t attempt)> f) { emit_fault_ = std::move(f); }
  // Abort retries when this becomes true (e.g. shutdown during an outage).
  void set_abort(std::function<bool()> a) { abort_ = std::move(a); }

  std::int64_t next_batch_id() const { return next_batch_id_; }
  const MetricsSummary& summary() const { return summary_; }

 private:
  void write_metrics(const BatchMetrics& m);
  template <typename F>
  void with_retry(BatchMetrics& m, F&& f);

  mqlog::MessageLog& log_;
  const ModelBundle& bundle_;
  MicroBatchConfig config_;
  std::int64_t next_batch_id_ = 1;
  Sleeper sleeper_;
  KillPoint kill_point_;
  std::function<void(std::uint32_t)> emit_fault_;
  std::function<bool()> abort_;
  MetricsSummary summary_;
};

// Reads the last batch_id from a metrics file (0 if none).
std::int64_t last_batch_id(const std::filesystem::path& metrics_path);

}  // namespace mlsa::streamproc
