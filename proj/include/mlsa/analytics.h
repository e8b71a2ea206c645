#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mlsa/archive.h"
#include "mlsa/envelope.h"
#include "mlsa/mqlog.h"

namespace mlsa::analytics {

struct LabelCountRow {
  std::string category;
  std::uint64_t number = 0;
  double percentage = 0.0;  // one decimal
  bool operator==(const LabelCountRow&) const = default;
};

// Positive then Negative rows (absent when total is 0).
struct LabelCountReport {
  std::vector<LabelCountRow> rows;
  std::uint64_t total = 0;
  bool operator==(const LabelCountReport&) const = default;
};

LabelCountReport make_label_report(std::uint64_t positive, std::uint64_t negative);

// Sentiment140 CSV (polarity 0/4). Throws QueryError if unreadable.
LabelCountReport count_by_label_csv(const std::filesystem::path& path);
// Ground-truth labels of archived envelopes with event_time in range;
// unlabeled envelopes are ignored.
LabelCountReport count_by_label_archive(const archive::Archive& archive, std::int64_t start,
                                        std::int64_t end);
// Predicted labels on a labeled topic, one per doc_id.
LabelCountReport count_by_label_topic(const mqlog::MessageLog& log, const std::string& topic);

struct TimeSeriesPoint {
  std::int64_t window_start = 0;
  std::int64_t window_len = 0;
  std::uint64_t positive_count = 0;
  std::uint64_t negative_count = 0;
  double mean_probability = 0.0;
  bool operator==(const TimeSeriesPoint&) const = default;
};

struct Timeline {
  std::int64_t window_len = 0;
  std::int64_t start = 0;
  std::int64_t end = 0;
  std::vector<TimeSeriesPoint> points;
  bool operator==(const Timeline&) const = default;
};

// Tumbling windows [start + k*len, start + (k+1)*len) over records with
// event_time in [start, end]; empty windows are omitted. Throws QueryError
// when window_len <= 0 or start > end.
Timeline sentiment_over_time(std::span<const LabeledRecord> records, std::int64_t window_len,
                             std::int64_t start, std::int64_t end);
// Over the whole topic; the range defaults to the records' min/max event time.
Timeline sentiment_over_time(const mqlog::MessageLog& log, const std::string& topic,
                             std::int64_t window_len, std::optional<std::int64_t> start = {},
                             std::optional<std::int64_t> end = {});

// Every record of a labeled topic, last copy per doc_id, in partition order.
std::vector<LabeledRecord> read_labeled_topic(const mqlog::MessageLog& log,
                                              const std::string& topic);

enum class Format { kCsv, kJson };
Format parse_format(std::string_view s);  // "csv" | "json"

std::string to_csv(const LabelCountReport& r);
std::string to_csv(const Timeline& t);
nlohmann::ordered_json to_json(const LabelCountReport& r);
nlohmann::ordered_json to_json(const Timeline& t);
// Pretty JSON text, identical for CLI output, files and HTTP bodies.
std::string render(const LabelCountReport& r, Format f);
std::string render(const Timeline& t, Format f);

LabelCountReport label_report_from_json(const nlohmann::json& j);
Timeline timeline_from_json(const nlohmann::json& j);

// Writes atomically; throws QueryError on IO failure.
void export_report(const LabelCountReport& r, Format f, const std::filesystem::path& path);
void export_report(const Timeline& t, Format f, const std::filesystem::path& path);

}  // namespace mlsa::analytics
