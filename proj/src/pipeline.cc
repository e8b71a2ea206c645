#include "mlsa/pipeline.h"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cstring>
#include <fstream>

#include "mlsa/errors.h"

namespace mlsa::app {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

DataDirLock::DataDirLock(const fs::path& data_dir) {
  std::error_code ec;
  fs::create_directories(data_dir, ec);
  if (ec) throw SourceError("cannot create data dir " + data_dir.string() + ": " + ec.message());
  const fs::path path = data_dir / "LOCK";
  fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw SourceError("cannot open " + path.string() + ": " + std::strerror(errno));
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw Error("data dir " + data_dir.string() + " is in use by another mlsa process");
  }
}

DataDirLock::~DataDirLock() {
  if (fd_ >= 0) ::close(fd_);
}

fs::path stop_file(const fs::path& data_dir) { return data_dir / "control" / "stop"; }

void request_stop(const fs::path& data_dir) {
  fs::create_directories(stop_file(data_dir).parent_path());
  std::ofstream(stop_file(data_dir)) << now_millis() << "\n";
}

Pipeline::Pipeline(PipelineConfig cfg) : cfg_(std::move(cfg)), lock_(cfg_.data_dir) {
  mqlog::LogOptions lo;
  lo.segment_bytes = cfg_.log_segment_bytes;
  log_ = std::make_unique<mqlog::MessageLog>(cfg_.data_dir, lo);
  std::optional<std::uint64_t> retention;
  if (cfg_.log_retention_bytes) retention = cfg_.log_retention_bytes;
  for (auto [name, parts] : {std::pair{cfg_.documents_topic, cfg_.documents_partitions},
                             std::pair{cfg_.labeled_topic, cfg_.labeled_partitions}}) {
    if (!log_->has_topic(name)) log_->create_topic(name, parts, retention);
  }
  archive::ArchiveOptions ao;
  ao.compress = cfg_.archive_compress;
  ao.segment_bytes = cfg_.archive_segment_bytes;
  ao.segment_span_ms = cfg_.archive_segment_span_ms;
  archive_ = std::make_unique<archive::Archive>(cfg_.data_dir, ao);

  std::string meta;
  if (auto loaded = index::InvertedIndex::load_latest(cfg_.data_dir / "index", &meta)) {
    index_ = std::move(*loaded);
    load_positions(meta);
  }
  catch_up_index();
  last_snapshot_ = std::chrono::steady_clock::now();
}

Pipeline::~Pipeline() {
  try {
    log_->flush();
    archive_->flush();
  } catch (const std::exception&) {
  }
}

ingest::IngestCounters Pipeline::ingest(ingest::RecordSource& source,
                                        const std::function<bool()>& should_stop) {
  ingest::IngestPipeline pipe(cfg_.dedup_capacity);
  std::uint64_t malformed_before = source.malformed_skipped();
  std::size_t since_tee = 0;
  auto tee = [&] {
    log_->flush(cfg_.documents_topic);
    pump_tee();
    since_tee = 0;
  };
  while (!(should_stop && should_stop())) {
    auto raw = source.next();
    if (!raw) break;
    if (auto env = pipe.process(*raw)) {
      log_->append(cfg_.documents_topic, env->doc_id, serialize(*env), env->event_time);
      if (++since_tee >= 4096) tee();
    }
  }
  tee();
  ingest::IngestCounters c = pipe.counters();
  const std::uint64_t malformed = source.malformed_skipped() - malformed_before;
  c.records_in += malformed;
  c.parse_skipped += malformed;

  fs::create_directories(cfg_.data_dir / "metrics");
  ordered_json line = {{"finished_at", now_millis()},     {"records_in", c.records_in},
                       {"envelopes_out", c.envelopes_out}, {"parse_skipped", c.parse_skipped},
                       {"empty_dropped", c.empty_dropped}, {"dup_dropped", c.dup_dropped},
                       {"noise_dropped", c.noise_dropped}};
  std::ofstream(cfg_.data_dir / "metrics" / "ingest.jsonl", std::ios::app) << line.dump() << "\n";
  return c;
}

std::size_t Pipeline::pump_archive() {
  std::lock_guard lock(tee_mu_);
  std::size_t total = 0;
  for (;;) {
    auto batch = log_->poll(kArchiveGroup, cfg_.documents_topic, 4096);
    if (batch.empty()) break;
    std::vector<mqlog::LogPosition> positions;
    positions.reserve(batch.size());
    for (const auto& rec : batch) {
      positions.push_back(rec.position);
      try {
        archive_->append(parse_envelope(rec.payload));
        ++total;
      } catch (const ArchiveError&) {
        throw;
      } catch (const Error&) {
        // Unparseable log record; nothing to archive.
      }
    }
    archive_->flush();
    log_->commit(kArchiveGroup, positions);
  }
  return total;
}

std::size_t Pipeline::catch_up_topic(const std::string& topic, bool labeled) {
  std::size_t applied = 0;
  const auto info = log_->topic(topic);
  for (std::uint32_t p = 0; p < info.partitions; ++p) {
    const std::string key = topic + "/" + std::to_string(p);
    std::uint64_t next = std::max(positions_[key], log_->log_start_offset(topic, p));
    while (next < log_->high_watermark(topic, p)) {
      auto recs = log_->read(topic, p, next, 4096);
      if (recs.empty()) break;
      std::vector<index::IndexDoc> docs;
      docs.reserve(recs.size());
      for (const auto& rec : recs) {
        next = rec.position.offset + 1;
        try {
          docs.push_back(labeled ? index::IndexDoc::from(parse_labeled(rec.payload))
                                 : index::IndexDoc::from(parse_envelope(rec.payload)));
        } catch (const Error&) {
        }
      }
      index_.add_batch(docs, /*replace=*/labeled);
      applied += docs.size();
    }
    positions_[key] = next;
  }
  return applied;
}

std::size_t Pipeline::catch_up_index() {
  std::lock_guard lock(tee_mu_);
  return catch_up_topic(cfg_.documents_topic, false) + catch_up_topic(cfg_.labeled_topic, true);
}

std::string Pipeline::positions_meta() const {
  ordered_json pos = ordered_json::object();
  for (const auto& [k, v] : positions_) pos[k] = v;
  return ordered_json{{"positions", pos}}.dump();
}

void Pipeline::load_positions(const std::string& meta) {
  json j = json::parse(meta, nullptr, false);
  if (!j.is_object() || !j.contains("positions") || !j["positions"].is_object()) return;
  for (const auto& [k, v] : j["positions"].items()) {
    if (v.is_number_unsigned()) positions_[k] = v.get<std::uint64_t>();
  }
}

fs::path Pipeline::snapshot_index() {
  std::lock_guard lock(tee_mu_);
  last_snapshot_ = std::chrono::steady_clock::now();
  return index_.snapshot(cfg_.data_dir / "index", positions_meta());
}

void Pipeline::maybe_snapshot_index() {
  const auto due = last_snapshot_ + std::chrono::milliseconds(cfg_.index_snapshot_interval_ms);
  if (std::chrono::steady_clock::now() >= due) snapshot_index();
}

streamproc::MicroBatchConfig Pipeline::stream_config() const {
  streamproc::MicroBatchConfig c;
  c.interval_ms = cfg_.stream_interval_ms;
  c.max_batch = cfg_.stream_max_batch;
  c.input_topic = cfg_.documents_topic;
  c.output_topic = cfg_.labeled_topic;
  c.group = cfg_.stream_group;
  c.threads = cfg_.resolved_threads();
  c.metrics_path = metrics_path();
  return c;
}

fs::path Pipeline::metrics_path() const { return cfg_.data_dir / "metrics" / "streamproc.jsonl"; }

bool Pipeline::stop_requested() const {
  std::error_code ec;
  return fs::exists(stop_file(cfg_.data_dir), ec);
}

void Pipeline::clear_stop() const {
  std::error_code ec;
  fs::remove(stop_file(cfg_.data_dir), ec);
}

std::string Pipeline::counts_json() {
  return analytics::render(analytics::count_by_label_topic(*log_, cfg_.labeled_topic),
                           analytics::Format::kJson);
}

std::string Pipeline::timeline_json(std::int64_t window_ms, std::optional<std::int64_t> from,
                                    std::optional<std::int64_t> to) {
  return analytics::render(
      analytics::sentiment_over_time(*log_, cfg_.labeled_topic, window_ms, from, to),
      analytics::Format::kJson);
}

ordered_json Pipeline::search_json(const std::string& query, std::optional<Sentiment> label,
                                   std::size_t k) const {
  index::Query q = index::parse_query(query);
  if (label) {
    if (q.label && *q.label != *label) throw QueryError("conflicting label filters");
    q.label = label;
  }
  ordered_json hits = ordered_json::array();
  for (const auto& h : index_.search(q, k)) {
    hits.push_back({{"doc_id", h.doc_id},
                    {"score", h.score},
                    {"label", h.label ? ordered_json(to_string(*h.label)) : ordered_json()},
                    {"event_time", h.event_time},
                    {"snippet", h.snippet}});
  }
  return {{"query", query},
          {"label", q.label ? ordered_json(to_string(*q.label)) : ordered_json()},
          {"k", k},
          {"hits", hits}};
}

}  // namespace mlsa::app
