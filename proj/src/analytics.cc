#include "mlsa/analytics.h"

#include <cmath>
#include <cstdio>
#include <map>
#include <unordered_map>

#include "mlsa/csv.h"
#include "mlsa/errors.h"
#include "mlsa/fileio.h"
#include "mlsa/sentiment140.h"

namespace mlsa::analytics {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

double percent_1dp(std::uint64_t n, std::uint64_t total) {
  return std::round(1000.0 * static_cast<double>(n) / static_cast<double>(total)) / 10.0;
}

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  return (a % b != 0 && ((a < 0) != (b < 0))) ? q - 1 : q;
}

}  // namespace

LabelCountReport make_label_report(std::uint64_t positive, std::uint64_t negative) {
  LabelCountReport r;
  r.total = positive + negative;
  if (r.total == 0) return r;
  r.rows.push_back({"Positive", positive, percent_1dp(positive, r.total)});
  r.rows.push_back({"Negative", negative, percent_1dp(negative, r.total)});
  return r;
}

LabelCountReport count_by_label_csv(const std::filesystem::path& path) {
  std::uint64_t counts[2] = {0, 0};
  try {
    sentiment140::read(path, [&](sentiment140::Row&& row) {
      ++counts[static_cast<int>(row.label)];
    });
  } catch (const SourceError& e) {
    throw QueryError(e.what());
  }
  return make_label_report(counts[1], counts[0]);
}

LabelCountReport count_by_label_archive(const archive::Archive& archive, std::int64_t start,
                                        std::int64_t end) {
  std::uint64_t counts[2] = {0, 0};
  try {
    archive.scan(start, end, std::nullopt, [&](RecordEnvelope&& env) {
      if (env.label) ++counts[static_cast<int>(*env.label)];
    });
  } catch (const ArchiveError& e) {
    throw QueryError(e.what());
  }
  return make_label_report(counts[1], counts[0]);
}

std::vector<LabeledRecord> read_labeled_topic(const mqlog::MessageLog& log,
                                              const std::string& topic) {
  if (!log.has_topic(topic)) throw QueryError("unknown topic '" + topic + "'");
  std::vector<LabeledRecord> out;
  std::unordered_map<std::string, std::size_t> slot;
  const auto info = log.topic(topic);
  for (std::uint32_t p = 0; p < info.partitions; ++p) {
    std::uint64_t next = log.log_start_offset(topic, p);
    const std::uint64_t hw = log.high_watermark(topic, p);
    while (next < hw) {
      auto batch = log.read(topic, p, next, 8192);
      if (batch.empty()) break;
      for (auto& rec : batch) {
        next = rec.position.offset + 1;
        LabeledRecord lr;
        try {
          lr = parse_labeled(rec.payload);
        } catch (const Error&) {
          continue;
        }
        auto [it, inserted] = slot.try_emplace(lr.envelope.doc_id, out.size());
        if (inserted) {
          out.push_back(std::move(lr));
        } else {
          out[it->second] = std::move(lr);
        }
      }
    }
  }
  return out;
}

LabelCountReport count_by_label_topic(const mqlog::MessageLog& log, const std::string& topic) {
  std::uint64_t counts[2] = {0, 0};
  for (const auto& r : read_labeled_topic(log, topic)) {
    ++counts[static_cast<int>(r.predicted_label)];
  }
  return make_label_report(counts[1], counts[0]);
}

Timeline sentiment_over_time(std::span<const LabeledRecord> records, std::int64_t window_len,
                             std::int64_t start, std::int64_t end) {
  if (window_len <= 0) throw QueryError("window length must be positive");
  if (start > end) throw QueryError("time range start > end");
  struct Acc {
    std::uint64_t pos = 0, neg = 0;
    double prob_sum = 0;
  };
  std::map<std::int64_t, Acc> windows;
  for (const auto& r : records) {
    const std::int64_t t = r.envelope.event_time;
    if (t < start || t > end) continue;
    Acc& a = windows[floor_div(t - start, window_len)];
    (r.predicted_label == Sentiment::kPositive ? a.pos : a.neg) += 1;
    a.prob_sum += r.probability;
  }
  Timeline tl{window_len, start, end, {}};
  for (const auto& [k, a] : windows) {
    const auto n = a.pos + a.neg;
    tl.points.push_back({start + k * window_len, window_len, a.pos, a.neg,
                         a.prob_sum / static_cast<double>(n)});
  }
  return tl;
}

Timeline sentiment_over_time(const mqlog::MessageLog& log, const std::string& topic,
                             std::int64_t window_len, std::optional<std::int64_t> start,
                             std::optional<std::int64_t> end) {
  auto records = read_labeled_topic(log, topic);
  std::int64_t lo = INT64_MAX, hi = INT64_MIN;
  for (const auto& r : records) {
    lo = std::min(lo, r.envelope.event_time);
    hi = std::max(hi, r.envelope.event_time);
  }
  if (records.empty()) lo = hi = 0;
  return sentiment_over_time(records, window_len, start.value_or(lo), end.value_or(hi));
}

Format parse_format(std::string_view s) {
  if (s == "csv") return Format::kCsv;
  if (s == "json") return Format::kJson;
  throw QueryError("unknown report format '" + std::string(s) + "' (expected csv or json)");
}

std::string to_csv(const LabelCountReport& r) {
  std::string out = "category,number,percentage\n";
  for (const auto& row : r.rows) {
    out += csv::format_row({row.category, std::to_string(row.number), fixed(row.percentage, 1)});
    out += '\n';
  }
  out += "Total," + std::to_string(r.total) + "," + (r.total ? "100.0" : "0.0") + "\n";
  return out;
}

std::string to_csv(const Timeline& t) {
  std::string out = "window_start,window_len,positive_count,negative_count,mean_probability\n";
  for (const auto& p : t.points) {
    out += std::to_string(p.window_start) + "," + std::to_string(p.window_len) + "," +
           std::to_string(p.positive_count) + "," + std::to_string(p.negative_count) + "," +
           fixed(p.mean_probability, 6) + "\n";
  }
  return out;
}

ordered_json to_json(const LabelCountReport& r) {
  ordered_json rows = ordered_json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"category", row.category},
                    {"number", row.number},
                    {"percentage", row.percentage}});
  }
  return {{"rows", rows}, {"total", r.total}};
}

ordered_json to_json(const Timeline& t) {
  ordered_json points = ordered_json::array();
  for (const auto& p : t.points) {
    points.push_back({{"window_start", p.window_start},
                      {"window_len", p.window_len},
                      {"positive_count", p.positive_count},
                      {"negative_count", p.negative_count},
                      {"mean_probability", p.mean_probability}});
  }
  return {{"window_len", t.window_len}, {"start", t.start}, {"end", t.end}, {"points", points}};
}

std::string render(const LabelCountReport& r, Format f) {
  return f == Format::kCsv ? to_csv(r) : to_json(r).dump(2) + "\n";
}

std::string render(const Timeline& t, Format f) {
  return f == Format::kCsv ? to_csv(t) : to_json(t).dump(2) + "\n";
}

LabelCountReport label_report_from_json(const json& j) {
  try {
    LabelCountReport r;
    for (const auto& row : j.at("rows")) {
      r.rows.push_back({row.at("category").get<std::string>(), row.at("number").get<std::uint64_t>(),
                        row.at("percentage").get<double>()});
    }
    r.total = j.at("total").get<std::uint64_t>();
    return r;
  } catch (const json::exception& e) {
    throw QueryError(std::string("malformed label report: ") + e.what());
  }
}

Timeline timeline_from_json(const json& j) {
  try {
    Timeline t;
    t.window_len = j.at("window_len").get<std::int64_t>();
    t.start = j.at("start").get<std::int64_t>();
    t.end = j.at("end").get<std::int64_t>();
    for (const auto& p : j.at("points")) {
      t.points.push_back({p.at("window_start").get<std::int64_t>(),
                          p.at("window_len").get<std::int64_t>(),
                          p.at("positive_count").get<std::uint64_t>(),
                          p.at("negative_count").get<std::uint64_t>(),
                          p.at("mean_probability").get<double>()});
    }
    return t;
  } catch (const json::exception& e) {
    throw QueryError(std::string("malformed timeline: ") + e.what());
  }
}

void export_report(const LabelCountReport& r, Format f, const std::filesystem::path& path) {
  if (!path.parent_path().empty()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  write_file_atomically<QueryError>(path, render(r, f));
}

void export_report(const Timeline& t, Format f, const std::filesystem::path& path) {
  if (!path.parent_path().empty()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  write_file_atomically<QueryError>(path, render(t, f));
}

}  // namespace mlsa::analytics
