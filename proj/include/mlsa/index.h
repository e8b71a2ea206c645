#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "mlsa/envelope.h"

namespace mlsa::index {

inline constexpr double kBm25K1 = 1.2;
inline constexpr double kBm25B = 0.75;
inline constexpr std::size_t kSnippetBytes = 160;

struct IndexDoc {
  std::string doc_id;
  std::string text;
  std::optional<Sentiment> label;
  std::int64_t event_time = 0;

  static IndexDoc from(const RecordEnvelope& env);
  // Uses the predicted label.
  static IndexDoc from(const LabeledRecord& rec);
};

struct Posting {
  std::uint32_t ordinal;
  std::uint32_t tf;
  bool operator==(const Posting&) const = default;
};

struct IndexStats {
  std::uint64_t doc_count = 0;
  std::uint64_t total_tokens = 0;
  double avg_doc_len = 0.0;
};

struct SearchHit {
  std::string doc_id;
  double score = 0.0;
  std::string snippet;
  std::optional<Sentiment> label;
  std::int64_t event_time = 0;
  std::uint32_t ordinal = 0;
};

struct Query {
  std::vector<std::string> terms;  // tokenized, deduplicated, first-seen order
  std::optional<Sentiment> label;
};

// Accepts free text with at most one `label:positive|negative` clause; a bare
// `AND` is a separator. Throws QueryError on an unknown label.
Query parse_query(std::string_view text);

double bm25_idf(std::uint64_t n, std::uint64_t df);
double bm25_tf(std::uint32_t tf, std::uint32_t doc_len, double avg_len);

// First ~160 bytes of `text`, cut on a UTF-8 boundary.
std::string make_snippet(std::string_view text);

// In-memory inverted index. Writes are applied in batches under an exclusive
// lock, so concurrent searches observe whole batches only. Re-indexing a
// doc_id retires its old ordinal and assigns a fresh one.
class InvertedIndex {
 public:
  void add(const IndexDoc& doc) { add_batch({doc}); }
  // With replace=false, docs whose doc_id is already indexed are skipped.
  void add_batch(const std::vector<IndexDoc>& docs, bool replace = true);

  std::vector<SearchHit> search(const Query& q, std::size_t k) const;
  std::vector<SearchHit> search(std::string_view query, std::size_t k) const {
    return search(parse_query(query), k);
  }

  IndexStats stats() const;
  // Live postings for `term`, ordinal ascending.
  std::vector<Posting> postings(const std::string& term) const;
  std::optional<std::uint32_t> doc_len(const std::string& doc_id) const;
  bool contains(const std::string& doc_id) const;

  // Versioned binary snapshot; see README for the layout. `meta` is an
  // opaque caller string stored alongside (e.g. log positions covered).
  void save(const std::filesystem::path& file, const std::string& meta = {}) const;
  static InvertedIndex load(const std::filesystem::path& file, std::string* meta = nullptr);
  // Writes <dir>/snapshot-<n>.bin with n one past the newest, keeping the
  // two newest. Returns the path written.
  std::filesystem::path snapshot(const std::filesystem::path& dir,
                                 const std::string& meta = {}) const;
  // Loads the newest readable snapshot in `dir`, if any.
  static std::optional<InvertedIndex> load_latest(const std::filesystem::path& dir,
                                                  std::string* meta = nullptr);

  InvertedIndex() = default;
  InvertedIndex(InvertedIndex&& other) noexcept;
  InvertedIndex& operator=(InvertedIndex&& other) noexcept;

 private:
  struct Doc {
    std::string doc_id;
    std::string snippet;
    std::optional<Sentiment> label;
    std::int64_t event_time = 0;
    std::uint32_t len = 0;
    bool alive = true;
    std::vector<Posting> terms;  // (term id, tf)
  };

  void add_locked(const IndexDoc& doc, bool replace);
  void insert_locked(Doc doc);
  void retire_locked(std::uint32_t ordinal);
  void compact_locked();
  std::uint32_t term_id(const std::string& term);

  mutable std::shared_mutex mu_;
  std::vector<Doc> docs_;
  std::unordered_map<std::string, std::uint32_t> ordinal_of_;
  std::unordered_map<std::string, std::uint32_t> term_ids_;
  std::vector<std::string> terms_;
  std::vector<std::vector<Posting>> postings_;  // may hold retired ordinals
  std::vector<std::uint32_t> df_;               // live documents only
  std::uint64_t live_docs_ = 0;
  std::uint64_t total_tokens_ = 0;
  std::uint64_t dead_docs_ = 0;
};

}  // namespace mlsa::index
