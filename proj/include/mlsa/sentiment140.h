#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "mlsa/envelope.h"

namespace mlsa::sentiment140 {

// One training row: polarity 0 -> negative, 4 -> positive.
struct Row {
  Sentiment label = Sentiment::kNegative;
  std::string id;
  std::string date;
  std::string query;
  std::string user;
  std::string text;  // valid UTF-8 (Latin-1 bytes are transcoded)
};

struct ReadStats {
  std::uint64_t rows = 0;     // rows delivered
  std::uint64_t skipped = 0;  // wrong field count or polarity not 0/4
};

// Streams the 6-column CSV. Throws SourceError if the file cannot be read.
ReadStats read(const std::filesystem::path& path, const std::function<void(Row&&)>& on_row);
std::vector<Row> load(const std::filesystem::path& path, ReadStats* stats = nullptr);

// Draws round(n * class_share) rows per class without replacement,
// keeping the original order. Returns everything when n >= rows.size().
std::vector<Row> stratified_sample(const std::vector<Row>& rows, std::size_t n,
                                   std::uint64_t seed);

std::string to_csv_line(const Row& row);

}  // namespace mlsa::sentiment140
