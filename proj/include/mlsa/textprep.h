#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mlsa::textprep {

inline constexpr std::string_view kUrlToken = "<url>";
inline constexpr std::string_view kUserToken = "<user>";
inline constexpr std::string_view kNumToken = "<num>";

// Lowercases, maps URLs / @mentions / all-digit tokens to placeholders,
// splits on Unicode whitespace and punctuation, and keeps the emoticons
// :) :( :D ;) :-) :-( as single tokens.
std::vector<std::string> tokenize(std::string_view text);

using TokenId = std::int32_t;

class Vocabulary {
 public:
  static constexpr TokenId kPadId = 0;
  static constexpr TokenId kOovId = 1;

  Vocabulary() = default;
  // `tokens` are assigned ids 2, 3, ... in order.
  Vocabulary(std::vector<std::string> tokens, std::size_t max_size,
             std::size_t min_freq);

  std::size_t size() const { return id_to_token_.size(); }
  std::size_t max_size() const { return max_size_; }
  std::size_t min_freq() const { return min_freq_; }

  TokenId lookup(std::string_view token) const;
  // Token text for an id; the reserved ids map to "<pad>" and "<oov>".
  const std::string& token(TokenId id) const;

  // Tokens for ids 2.. in id order.
  std::span<const std::string> regular_tokens() const;

  // FNV-1a over the ordered token list; ties a model to its vocabulary.
  std::uint64_t content_hash() const;

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const {
    return id_to_token_ == other.id_to_token_ && max_size_ == other.max_size_ &&
           min_freq_ == other.min_freq_;
  }

 private:
  struct StringHash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const {
      return std::hash<std::string_view>{}(s);
    }
  };

  std::vector<std::string> id_to_token_{"<pad>", "<oov>"};
  std::unordered_map<std::string, TokenId, StringHash, std::equal_to<>>
      token_to_id_;
  std::size_t max_size_ = 2;
  std::size_t min_freq_ = 1;
};

// Streaming frequency counter feeding build().
class VocabularyBuilder {
 public:
  void add(std::span<const std::string> tokens);
  void add_text(std::string_view text) { add(tokenize(text)); }

  // Tokens with frequency >= min_freq ranked by (frequency desc, token asc)
  // fill ids 2.. until the vocabulary holds max_size entries.
  Vocabulary build(std::size_t max_size, std::size_t min_freq) const;

 private:
  std::unordered_map<std::string, std::uint64_t> counts_;
};

Vocabulary build_vocabulary(std::span<const std::vector<std::string>> corpus,
                            std::size_t max_size, std::size_t min_freq);

struct EncodedSequence {
  std::vector<TokenId> ids;
  std::size_t true_length = 0;

  bool operator==(const EncodedSequence&) const = default;
};

// Keeps the first `length` tokens; right-pads with kPadId.
EncodedSequence encode(std::span<const std::string> tokens,
                       const Vocabulary& vocab, std::size_t length);

// Tokens of the non-pad prefix.
std::vector<std::string> decode(const EncodedSequence& seq,
                                const Vocabulary& vocab);

}  // namespace mlsa::textprep
