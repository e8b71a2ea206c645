#pragma once

#include <cstdint>
#include <istream>
#include <string>
#include <string_view>
#include <vector>

namespace mlsa::csv {

// RFC 4180 reader: quoted fields may hold commas, CRLF and doubled quotes.
class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  // False at end of input. A trailing unterminated quote ends the record.
  bool next(std::vector<std::string>& fields);
  std::uint64_t records() const { return records_; }

 private:
  std::istream& in_;
  std::uint64_t records_ = 0;
};

std::string quote(std::string_view field);
std::string format_row(const std::vector<std::string>& fields);

}  // namespace mlsa::csv
