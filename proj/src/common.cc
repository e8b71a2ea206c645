#include <chrono>
#include <cstdio>

#include "mlsa/envelope.h"
#include "mlsa/errors.h"
#include "mlsa/hash.h"
#include "mlsa/utf8.h"

namespace mlsa {

using nlohmann::json;

std::string to_hex(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(value));
  return std::string(buf, 16);
}

std::size_t decode_utf8(std::string_view s, std::size_t pos, char32_t& cp) {
  const auto b0 = static_cast<unsigned char>(s[pos]);
  if (b0 < 0x80) {
    cp = b0;
    return 1;
  }
  std::size_t len = 0;
  char32_t value = 0;
  char32_t min = 0;
  if ((b0 & 0xE0) == 0xC0) {
    len = 2, value = b0 & 0x1F, min = 0x80;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3, value = b0 & 0x0F, min = 0x800;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4, value = b0 & 0x07, min = 0x10000;
  } else {
    cp = 0xFFFD;
    return 1;
  }
  if (pos + len > s.size()) {
    cp = 0xFFFD;
    return 1;
  }
  for (std::size_t i = 1; i < len; ++i) {
    const auto b = static_cast<unsigned char>(s[pos + i]);
    if ((b & 0xC0) != 0x80) {
      cp = 0xFFFD;
      return 1;
    }
    value = (value << 6) | (b & 0x3F);
  }
  if (value < min || value > 0x10FFFF || (value >= 0xD800 && value <= 0xDFFF)) {
    cp = 0xFFFD;
    return 1;
  }
  cp = value;
  return len;
}

bool is_valid_utf8(std::string_view s) {
  std::size_t pos = 0;
  while (pos < s.size()) {
    char32_t cp = 0;
    const std::size_t n = decode_utf8(s, pos, cp);
    if (cp == 0xFFFD && n == 1 && static_cast<unsigned char>(s[pos]) >= 0x80) {
      return false;
    }
    pos += n;
  }
  return true;
}

std::string to_valid_utf8(std::string_view s) {
  if (is_valid_utf8(s)) return std::string(s);
  std::string out;
  out.reserve(s.size() + s.size() / 4);
  for (char c : s) {
    const auto b = static_cast<unsigned char>(c);
    if (b < 0x80) {
      out.push_back(c);
    } else {
      out.push_back(static_cast<char>(0xC0 | (b >> 6)));
      out.push_back(static_cast<char>(0x80 | (b & 0x3F)));
    }
  }
  return out;
}

std::string_view to_string(Sentiment s) {
  return s == Sentiment::kPositive ? "positive" : "negative";
}

std::optional<Sentiment> parse_sentiment(std::string_view s) {
  if (s == "positive") return Sentiment::kPositive;
  if (s == "negative") return Sentiment::kNegative;
  return std::nullopt;
}

json to_json(const RecordEnvelope& env) {
  json j = {{"doc_id", env.doc_id},
            {"event_time", env.event_time},
            {"text", env.text},
            {"raw", env.raw}};
  if (env.author) j["author"] = *env.author;
  if (env.label) j["label"] = to_string(*env.label);
  return j;
}

RecordEnvelope envelope_from_json(const json& j) {
  RecordEnvelope env;
  env.doc_id = j.at("doc_id").get<std::string>();
  env.event_time = j.at("event_time").get<std::int64_t>();
  env.text = j.at("text").get<std::string>();
  env.raw = j.value("raw", std::string());
  if (auto it = j.find("author"); it != j.end()) env.author = it->get<std::string>();
  if (auto it = j.find("label"); it != j.end()) {
    env.label = parse_sentiment(it->get<std::string>());
    if (!env.label) throw Error("invalid label: " + it->dump());
  }
  return env;
}

json to_json(const LabeledRecord& rec) {
  json j = to_json(rec.envelope);
  j["predicted_label"] = to_string(rec.predicted_label);
  j["probability"] = rec.probability;
  j["scored_at"] = rec.scored_at;
  j["batch_id"] = rec.batch_id;
  return j;
}

LabeledRecord labeled_from_json(const json& j) {
  LabeledRecord rec;
  rec.envelope = envelope_from_json(j);
  auto label = parse_sentiment(j.at("predicted_label").get<std::string>());
  if (!label) throw Error("invalid predicted_label");
  rec.predicted_label = *label;
  rec.probability = j.at("probability").get<double>();
  rec.scored_at = j.at("scored_at").get<std::int64_t>();
  rec.batch_id = j.at("batch_id").get<std::int64_t>();
  return rec;
}

std::string serialize(const RecordEnvelope& env) { return to_json(env).dump(); }
std::string serialize(const LabeledRecord& rec) { return to_json(rec).dump(); }

RecordEnvelope parse_envelope(std::string_view line) {
  try {
    return envelope_from_json(json::parse(line));
  } catch (const json::exception& e) {
    throw Error(std::string("malformed envelope: ") + e.what());
  }
}

LabeledRecord parse_labeled(std::string_view line) {
  try {
    return labeled_from_json(json::parse(line));
  } catch (const json::exception& e) {
    throw Error(std::string("malformed labeled record: ") + e.what());
  }
}

std::int64_t now_millis() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

}  // namespace mlsa
