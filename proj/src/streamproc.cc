#include "mlsa/streamproc.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <thread>

#include "mlsa/errors.h"
#include "mlsa/parallel.h"

namespace mlsa::streamproc {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

}  // namespace

void MicroBatchConfig::validate() const {
  if (interval_ms < 10) throw ConfigError("stream interval_ms must be >= 10");
  if (max_batch < 1) throw ConfigError("stream max_batch must be >= 1");
  if (input_topic.empty() || output_topic.empty()) throw ConfigError("stream topics must be set");
  if (input_topic == output_topic) throw ConfigError("stream input and output topics must differ");
  if (group.empty()) throw ConfigError("stream consumer group must be set");
}

nlohmann::ordered_json BatchMetrics::to_json() const {
  return {{"batch_id", batch_id}, {"records", records},   {"parse_errors", parse_errors},
          {"poll_ms", poll_ms},   {"score_ms", score_ms}, {"emit_ms", emit_ms},
          {"total_ms", total_ms}, {"lag", lag},           {"retries", retries},
          {"finished_at", finished_at}};
}

void MetricsSummary::add(const BatchMetrics& m) {
  ++batches;
  records += m.records;
  parse_errors += m.parse_errors;
  retries += m.retries;
  max_lag = std::max(max_lag, m.lag);
  totals.push_back(m.total_ms);
  p50_total_ms = percentile(totals, 0.50);
  p99_total_ms = percentile(totals, 0.99);
  max_total_ms = std::max(max_total_ms, m.total_ms);
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

std::vector<LabeledRecord> score_batch(const ModelBundle& bundle,
                                       std::span<const RecordEnvelope> batch,
                                       std::int64_t batch_id, std::size_t threads,
                                       std::int64_t scored_at) {
  std::vector<LabeledRecord> out(batch.size());
  parallel_chunks(batch.size(), threads, [&](std::size_t begin, std::size_t end, std::size_t) {
    for (std::size_t i = begin; i < end; ++i) {
      const float p = bundle.score_text(batch[i].text);
      LabeledRecord& r = out[i];
      r.envelope = batch[i];
      r.probability = p;
      r.predicted_label = p >= 0.5f ? Sentiment::kPositive : Sentiment::kNegative;
      r.scored_at = scored_at;
      r.batch_id = batch_id;
    }
  });
  return out;
}

std::chrono::milliseconds backoff_delay(std::uint32_t attempt) {
  std::int64_t ms = 100;
  for (std::uint32_t i = 0; i < attempt && ms < 5000; ++i) ms *= 2;
  return std::chrono::milliseconds(std::min<std::int64_t>(ms, 5000));
}

std::int64_t last_batch_id(const fs::path& metrics_path) {
  std::ifstream in(metrics_path, std::ios::binary);
  if (!in) return 0;
  std::int64_t last = 0;
  std::string line;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_object() && j.contains("batch_id") && j["batch_id"].is_number_integer()) {
      last = std::max(last, j["batch_id"].get<std::int64_t>());
    }
  }
  return last;
}

StreamProcessor::StreamProcessor(mqlog::MessageLog& log, const ModelBundle& bundle,
                                 MicroBatchConfig config)
    : log_(log), bundle_(bundle), config_(std::move(config)) {
  config_.validate();
  if (!log_.has_topic(config_.input_topic)) {
    throw ConfigError("input topic '" + config_.input_topic + "' does not exist");
  }
  if (!log_.has_topic(config_.output_topic)) {
    throw ConfigError("output topic '" + config_.output_topic + "' does not exist");
  }
  if (!config_.metrics_path.empty()) next_batch_id_ = last_batch_id(config_.metrics_path) + 1;
  sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

template <typename F>
void StreamProcessor::with_retry(BatchMetrics& m, F&& f) {
  for (std::uint32_t attempt = 0;; ++attempt) {
    try {
      f(attempt);
      return;
    } catch (const LogIoError& e) {
      if (abort_ && abort_()) throw;
      std::fprintf(stderr, "stream: transient log error (attempt %u): %s\n", attempt + 1,
                   e.what());
      ++m.retries;
      sleeper_(backoff_delay(attempt));
    }
  }
}

std::optional<BatchMetrics> StreamProcessor::run_once() {
  const auto t0 = Clock::now();
  BatchMetrics m;
  std::vector<mqlog::PolledRecord> polled;
  with_retry(m, [&](std::uint32_t) {
    polled = log_.poll(config_.group, config_.input_topic, config_.max_batch);
  });
  m.poll_ms = ms_since(t0);
  if (polled.empty()) return std::nullopt;

  const auto t1 = Clock::now();
  std::vector<RecordEnvelope> envelopes;
  envelopes.reserve(polled.size());
  for (const auto& rec : polled) {
    try {
      envelopes.push_back(parse_envelope(rec.payload));
    } catch (const Error&) {
      ++m.parse_errors;
    }
  }
  m.batch_id = next_batch_id_;
  auto labeled = score_batch(bundle_, envelopes, m.batch_id, config_.threads, now_millis());
  m.records = labeled.size();
  m.score_ms = ms_since(t1);

  const auto t2 = Clock::now();
  with_retry(m, [&](std::uint32_t attempt) {
    if (emit_fault_) emit_fault_(attempt);
    for (const auto& r : labeled) {
      log_.append(config_.output_topic, r.envelope.doc_id, serialize(r), r.envelope.event_time);
    }
    log_.flush(config_.output_topic);
  });
  m.emit_ms = ms_since(t2);

  if (kill_point_) kill_point_(m);
  std::vector<mqlog::LogPosition> positions;
  positions.reserve(polled.size());
  for (const auto& rec : polled) positions.push_back(rec.position);
  with_retry(m, [&](std::uint32_t) { log_.commit(config_.group, positions); });

  ++next_batch_id_;
  m.lag = log_.lag(config_.group, config_.input_topic);
  m.total_ms = ms_since(t0);
  m.finished_at = now_millis();
  summary_.add(m);
  write_metrics(m);
  return m;
}

MetricsSummary StreamProcessor::run(const std::function<bool()>& should_stop,
                                    const std::function<void(const BatchMetrics&)>& after_batch) {
  const auto interval = std::chrono::milliseconds(config_.interval_ms);
  auto next_tick = Clock::now();
  while (!should_stop()) {
    auto m = run_once();
    if (m && after_batch) after_batch(*m);
    next_tick += interval;
    const auto now = Clock::now();
    if (next_tick < now) {
      next_tick = now;  // overran the interval; start the next cycle at once
      continue;
    }
    // Sleep in short slices so a stop request is noticed promptly.
    while (Clock::now() < next_tick && !should_stop()) {
      auto left = std::chrono::duration_cast<std::chrono::milliseconds>(next_tick - Clock::now());
      std::this_thread::sleep_for(std::min(left, std::chrono::milliseconds(20)));
    }
  }
  return summary_;
}

void StreamProcessor::write_metrics(const BatchMetrics& m) {
  if (config_.metrics_path.empty()) return;
  if (config_.metrics_path.has_parent_path()) fs::create_directories(config_.metrics_path.parent_path());
  std::ofstream out(config_.metrics_path, std::ios::app | std::ios::binary);
  out << m.to_json().dump() << '\n';
}

}  // namespace mlsa::streamproc
