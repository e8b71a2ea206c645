#include "mlsa/sentiment140.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "mlsa/csv.h"
#include "mlsa/errors.h"
#include "mlsa/utf8.h"

namespace mlsa::sentiment140 {

ReadStats read(const std::filesystem::path& path, const std::function<void(Row&&)>& on_row) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SourceError("cannot open CSV file " + path.string());
  csv::Reader reader(in);
  ReadStats stats;
  std::vector<std::string> f;
  while (reader.next(f)) {
    if (f.size() == 1 && f[0].empty()) continue;  // blank line
    if (f.size() != 6 || (f[0] != "0" && f[0] != "4")) {
      ++stats.skipped;
      continue;
    }
    Row row;
    row.label = f[0] == "4" ? Sentiment::kPositive : Sentiment::kNegative;
    row.id = std::move(f[1]);
    row.date = to_valid_utf8(f[2]);
    row.query = to_valid_utf8(f[3]);
    row.user = to_valid_utf8(f[4]);
    row.text = to_valid_utf8(f[5]);
    ++stats.rows;
    on_row(std::move(row));
  }
  if (in.bad()) throw SourceError("read failed on " + path.string());
  return stats;
}

std::vector<Row> load(const std::filesystem::path& path, ReadStats* stats) {
  std::vector<Row> rows;
  ReadStats s = read(path, [&](Row&& r) { rows.push_back(std::move(r)); });
  if (stats) *stats = s;
  return rows;
}

std::vector<Row> stratified_sample(const std::vector<Row>& rows, std::size_t n,
                                   std::uint64_t seed) {
  if (n >= rows.size()) return rows;
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < rows.size(); ++i) {
    by_class[static_cast<int>(rows[i].label)].push_back(i);
  }
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> keep;
  const double total = static_cast<double>(rows.size());
  const auto take_pos = static_cast<std::size_t>(
      std::llround(static_cast<double>(n) * static_cast<double>(by_class[1].size()) / total));
  const std::size_t take[2] = {n - take_pos, take_pos};
  for (int c = 0; c < 2; ++c) {
    auto& idx = by_class[c];
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(idx.size(), take[c]));
    keep.insert(keep.end(), idx.begin(), idx.end());
  }
  std::sort(keep.begin(), keep.end());
  std::vector<Row> out;
  out.reserve(keep.size());
  for (auto i : keep) out.push_back(rows[i]);
  return out;
}

std::string to_csv_line(const Row& row) {
  return csv::format_row({row.label == Sentiment::kPositive ? "4" : "0", row.id, row.date,
                          row.query, row.user, row.text});
}

}  // namespace mlsa::sentiment140
