#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "mlsa/envelope.h"

namespace mlsa::archive {

struct ArchiveOptions {
  std::uint64_t segment_bytes = 128ull << 20;        // uncompressed bytes
  std::int64_t segment_span_ms = 6ll * 3600 * 1000;  // event-time span
  bool compress = false;                             // gzip segment bodies
  bool read_only = false;
};

struct SegmentMeta {
  std::uint64_t id = 0;
  std::filesystem::path path;
  std::int64_t min_time = 0;
  std::int64_t max_time = 0;
  std::uint64_t record_count = 0;
  std::uint64_t bytes = 0;
  bool sealed = false;
  bool compressed = false;
};

struct ArchivePosition {
  std::uint64_t segment = 0;
  std::uint64_t record = 0;
};

// Append-only JSON-lines store under <data_dir>/archive. Each segment has a
// manifest sidecar with its event-time bounds so range scans skip segments
// without opening them. One writer, any number of concurrent readers.
class Archive {
 public:
  explicit Archive(const std::filesystem::path& data_dir, ArchiveOptions opts = {});
  ~Archive();
  Archive(const Archive&) = delete;
  Archive& operator=(const Archive&) = delete;

  // Throws ArchiveError on IO failure; the record is then not stored.
  ArchivePosition append(const RecordEnvelope& env);
  // Pushes buffered data to the OS and rewrites the active manifest.
  void flush();
  // Seals the active segment (no-op when empty).
  void seal();

  using Visitor = std::function<void(RecordEnvelope&&)>;
  // Visits envelopes with event_time in [start, end] whose text contains
  // `contains` (if given), in append order. Throws QueryError if start > end.
  void scan(std::int64_t start, std::int64_t end, const std::optional<std::string>& contains,
            const Visitor& visit) const;
  std::vector<RecordEnvelope> scan(std::int64_t start, std::int64_t end,
                                   const std::optional<std::string>& contains = {}) const;

  std::vector<SegmentMeta> segments() const;
  std::uint64_t record_count() const;
  std::uint64_t segment_opens() const { return segment_opens_; }
  std::uint64_t corrupt_records() const { return corrupt_records_; }
  const std::filesystem::path& dir() const { return dir_; }

 private:
  struct Segment {
    SegmentMeta meta;
    std::uint64_t visible_records = 0;
    // Loaded from a manifest another process may still be appending to.
    bool maybe_stale = false;
  };

  void load();
  void recover_active(Segment& seg);
  void open_new_segment();
  void open_writer(Segment& seg);
  void close_writer();
  void write_manifest(const SegmentMeta& meta) const;
  void seal_locked();
  std::filesystem::path segment_path(std::uint64_t id, bool compressed) const;

  std::filesystem::path dir_;
  ArchiveOptions opts_;
  mutable std::mutex mu_;
  std::vector<Segment> segments_;
  std::FILE* plain_ = nullptr;
  void* gz_ = nullptr;
  mutable std::atomic<std::uint64_t> segment_opens_{0};
  mutable std::atomic<std::uint64_t> corrupt_records_{0};
};

// Reads every newline-terminated line of a (possibly gzip) segment file,
// stopping after `max_lines`. Returns false if the file cannot be opened.
bool read_segment_lines(const std::filesystem::path& path, std::uint64_t max_lines,
                        const std::function<void(std::string&&)>& on_line);

}  // namespace mlsa::archive
