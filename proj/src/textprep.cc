#include "mlsa/textprep.h"

#include <algorithm>
#include <array>
#include <fstream>

#include <json.hpp>

#include "mlsa/errors.h"
#include "mlsa/hash.h"
#include "mlsa/utf8.h"

namespace mlsa::textprep {
namespace {

constexpr std::array<std::string_view, 6> kEmoticons = {":-)", ":-(", ":)",
                                                        ":(",  ":D",  ";)"};
constexpr std::array<std::string_view, 3> kPlaceholders = {kUrlToken, kUserToken,
                                                           kNumToken};
constexpr std::array<std::string_view, 3> kUrlPrefixes = {"http://", "https://",
                                                          "www."};

bool is_unicode_space(char32_t cp) {
  if (cp < 0x80) return cp == ' ' || (cp >= '\t' && cp <= '\r');
  return cp == 0x85 || cp == 0xA0 || cp == 0x1680 ||
         (cp >= 0x2000 && cp <= 0x200D) || cp == 0x2028 || cp == 0x2029 ||
         cp == 0x202F || cp == 0x205F || cp == 0x3000 || cp == 0xFEFF;
}

bool is_unicode_punct(char32_t cp) {
  if (cp < 0x80) return !std::isalnum(static_cast<int>(cp));
  if (cp >= 0xA1 && cp <= 0xBF) {
    return cp != 0xAA && cp != 0xB2 && cp != 0xB3 && cp != 0xB5 &&
           cp != 0xB9 && cp != 0xBA;
  }
  return cp == 0xD7 || cp == 0xF7 || (cp >= 0x2010 && cp <= 0x2027) ||
         (cp >= 0x2030 && cp <= 0x205E) || (cp >= 0x3001 && cp <= 0x303F) ||
         (cp >= 0xFF01 && cp <= 0xFF0F) || (cp >= 0xFF1A && cp <= 0xFF20) ||
         (cp >= 0xFF3B && cp <= 0xFF40) || (cp >= 0xFF5B && cp <= 0xFF65) ||
         cp == 0xFFFD;
}

bool starts_with_ci(std::string_view text, std::size_t pos,
                    std::string_view prefix) {
  if (text.size() - pos < prefix.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    const char c = text[pos + i];
    const char lc = (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
    if (lc != prefix[i]) return false;
  }
  return true;
}

bool is_handle_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
         (c >= '0' && c <= '9') || c == '_';
}

bool is_ascii_alnum(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0 &&
         static_cast<unsigned char>(c) < 0x80;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string word;

  auto flush = [&] {
    if (word.empty()) return;
    if (std::all_of(word.begin(), word.end(),
                    [](char c) { return c >= '0' && c <= '9'; })) {
      out.emplace_back(kNumToken);
    } else {
      out.push_back(std::move(word));
    }
    word.clear();
  };

  std::size_t pos = 0;
  const std::size_t n = text.size();
  while (pos < n) {
    if (word.empty()) {
      if (std::any_of(kUrlPrefixes.begin(), kUrlPrefixes.end(),
                      [&](auto p) { return starts_with_ci(text, pos, p); })) {
        while (pos < n) {
          char32_t cp = 0;
          const std::size_t len = decode_utf8(text, pos, cp);
          if (is_unicode_space(cp)) break;
          pos += len;
        }
        out.emplace_back(kUrlToken);
        continue;
      }
      if (text[pos] == '@' && pos + 1 < n && is_handle_char(text[pos + 1])) {
        ++pos;
        while (pos < n && is_handle_char(text[pos])) ++pos;
        out.emplace_back(kUserToken);
        continue;
      }
      auto ph = std::find_if(kPlaceholders.begin(), kPlaceholders.end(),
                             [&](auto p) { return text.substr(pos).starts_with(p); });
      if (ph != kPlaceholders.end()) {
        out.emplace_back(*ph);
        pos += ph->size();
        continue;
      }
    }

    auto emo = std::find_if(kEmoticons.begin(), kEmoticons.end(), [&](auto e) {
      if (!text.substr(pos).starts_with(e)) return false;
      // ":D" only counts when it is not the start of a longer word.
      return e != ":D" || pos + 2 >= n || !is_ascii_alnum(text[pos + 2]);
    });
    if (emo != kEmoticons.end()) {
      flush();
      out.emplace_back(*emo);
      pos += emo->size();
      continue;
    }

    char32_t cp = 0;
    const std::size_t len = decode_utf8(text, pos, cp);
    if (is_unicode_space(cp) || is_unicode_punct(cp)) {
      flush();
    } else if (cp < 0x80) {
      word.push_back(static_cast<char>(std::tolower(static_cast<int>(cp))));
    } else {
      word.append(text.substr(pos, len));
    }
    pos += len;
  }
  flush();
  return out;
}

Vocabulary::Vocabulary(std::vector<std::string> tokens, std::size_t max_size,
                       std::size_t min_freq)
    : max_size_(max_size), min_freq_(min_freq) {
  id_to_token_.reserve(tokens.size() + 2);
  for (auto& t : tokens) {
    const auto id = static_cast<TokenId>(id_to_token_.size());
    if (!token_to_id_.emplace(t, id).second) {
      throw Error("duplicate vocabulary token: " + t);
    }
    id_to_token_.push_back(std::move(t));
  }
}

TokenId Vocabulary::lookup(std::string_view token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kOovId : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  return id_to_token_.at(static_cast<std::size_t>(id));
}

std::span<const std::string> Vocabulary::regular_tokens() const {
  return std::span<const std::string>(id_to_token_).subspan(2);
}

std::uint64_t Vocabulary::content_hash() const {
  std::uint64_t h = kFnvOffsetBasis;
  for (const auto& t : regular_tokens()) {
    h = fnv1a64(t, h);
    h = fnv1a64(std::string_view("\n", 1), h);
  }
  return h;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  nlohmann::ordered_json j;
  j["format_version"] = 1;
  j["max_size"] = max_size_;
  j["min_freq"] = min_freq_;
  j["tokens"] = std::vector<std::string>(regular_tokens().begin(),
                                         regular_tokens().end());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << j.dump(1) << '\n';
  if (!out) throw Error("cannot write vocabulary: " + path.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read vocabulary: " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.at("format_version").get<int>() != 1) {
      throw Error("unsupported vocabulary format in " + path.string());
    }
    return Vocabulary(j.at("tokens").get<std::vector<std::string>>(),
                      j.at("max_size").get<std::size_t>(),
                      j.at("min_freq").get<std::size_t>());
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed vocabulary " + path.string() + ": " + e.what());
  }
}

void VocabularyBuilder::add(std::span<const std::string> tokens) {
  for (const auto& t : tokens) ++counts_[t];
}

Vocabulary VocabularyBuilder::build(std::size_t max_size,
                                    std::size_t min_freq) const {
  if (max_size < 3) throw Error("vocabulary max_size must be >= 3");
  std::vector<std::pair<std::string_view, std::uint64_t>> ranked;
  for (const auto& [token, count] : counts_) {
    if (count >= min_freq) ranked.emplace_back(token, count);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  const std::size_t keep = std::min(ranked.size(), max_size - 2);
  std::vector<std::string> tokens;
  tokens.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) tokens.emplace_back(ranked[i].first);
  return Vocabulary(std::move(tokens), max_size, min_freq);
}

Vocabulary build_vocabulary(std::span<const std::vector<std::string>> corpus,
                            std::size_t max_size, std::size_t min_freq) {
  VocabularyBuilder builder;
  for (const auto& doc : corpus) builder.add(doc);
  return builder.build(max_size, min_freq);
}

EncodedSequence encode(std::span<const std::string> tokens,
                       const Vocabulary& vocab, std::size_t length) {
  if (length == 0) throw Error("encode length must be >= 1");
  EncodedSequence seq;
  seq.ids.assign(length, Vocabulary::kPadId);
  seq.true_length = std::min(tokens.size(), length);
  for (std::size_t i = 0; i < seq.true_length; ++i) {
    seq.ids[i] = vocab.lookup(tokens[i]);
  }
  return seq;
}

std::vector<std::string> decode(const EncodedSequence& seq,
                                const Vocabulary& vocab) {
  std::vector<std::string> out;
  out.reserve(seq.true_length);
  for (std::size_t i = 0; i < seq.true_length; ++i) {
    out.push_back(vocab.token(seq.ids[i]));
  }
  return out;
}

}  // namespace mlsa::textprep
