#pragma once

#include <string>
#include <string_view>

namespace mlsa {

bool is_valid_utf8(std::string_view s);

// Returns s unchanged when it is valid UTF-8; otherwise reinterprets every
// byte as ISO-8859-1 and transcodes. Sentiment140 ships Latin-1 text mixed
// with UTF-8, and JSON serialization requires valid UTF-8.
std::string to_valid_utf8(std::string_view s);

// Decodes one code point starting at s[pos]. Returns the number of bytes
// consumed (>= 1). Invalid sequences decode as U+FFFD consuming one byte.
std::size_t decode_utf8(std::string_view s, std::size_t pos, char32_t& cp);

}  // namespace mlsa
