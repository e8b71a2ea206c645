#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

namespace mlsa {

enum class Sentiment : std::uint8_t { kNegative = 0, kPositive = 1 };

std::string_view to_string(Sentiment s);
std::optional<Sentiment> parse_sentiment(std::string_view s);

// A timestamped, identified text document. `raw` keeps the original source
// payload so the archive can store it untouched.
struct RecordEnvelope {
  std::string doc_id;
  std::int64_t event_time = 0;
  std::string text;
  std::optional<std::string> author;
  std::optional<Sentiment> label;
  std::string raw;

  bool operator==(const RecordEnvelope&) const = default;
};

// RecordEnvelope plus the model's verdict.
struct LabeledRecord {
  RecordEnvelope envelope;
  Sentiment predicted_label = Sentiment::kNegative;
  double probability = 0.5;
  std::int64_t scored_at = 0;
  std::int64_t batch_id = 0;

  bool operator==(const LabeledRecord&) const = default;
};

nlohmann::json to_json(const RecordEnvelope& env);
RecordEnvelope envelope_from_json(const nlohmann::json& j);

nlohmann::json to_json(const LabeledRecord& rec);
LabeledRecord labeled_from_json(const nlohmann::json& j);

// Compact single-line serialization with a fixed key order; byte-stable.
std::string serialize(const RecordEnvelope& env);
std::string serialize(const LabeledRecord& rec);
RecordEnvelope parse_envelope(std::string_view line);
LabeledRecord parse_labeled(std::string_view line);

std::int64_t now_millis();

}  // namespace mlsa
