#include "mlsa/index.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <regex>

#include "mlsa/errors.h"
#include "mlsa/fileio.h"
#include "mlsa/textprep.h"

namespace mlsa::index {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'M', 'L', 'I', 'X'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  template <typename T>
  void put(T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));  // little-endian hosts only
    out_.append(b, sizeof(T));
  }
  void put_str(std::string_view s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  std::string& bytes() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_str() {
    auto n = get<std::uint32_t>();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw Error("index snapshot truncated");
  }
  std::string data_;
  std::size_t pos_ = 0;
};

std::uint8_t label_code(const std::optional<Sentiment>& l) {
  return l ? (*l == Sentiment::kPositive ? 2 : 1) : 0;
}

std::optional<Sentiment> label_from_code(std::uint8_t c) {
  switch (c) {
    case 0: return std::nullopt;
    case 1: return Sentiment::kNegative;
    case 2: return Sentiment::kPositive;
  }
  throw Error("index snapshot has bad label code");
}

bool hit_before(const SearchHit& a, const SearchHit& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.ordinal < b.ordinal;
}

}  // namespace

IndexDoc IndexDoc::from(const RecordEnvelope& env) {
  return {env.doc_id, env.text, env.label, env.event_time};
}

IndexDoc IndexDoc::from(const LabeledRecord& rec) {
  return {rec.envelope.doc_id, rec.envelope.text, rec.predicted_label, rec.envelope.event_time};
}

Query parse_query(std::string_view text) {
  Query q;
  std::string free_text;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    std::string_view word = text.substr(i, j - i);
    i = j;
    if (word.empty() || word == "AND") continue;
    if (word.size() > 6) {
      std::string head(word.substr(0, 6));
      std::transform(head.begin(), head.end(), head.begin(), ::tolower);
      if (head == "label:") {
        std::string value(word.substr(6));
        std::transform(value.begin(), value.end(), value.begin(), ::tolower);
        auto s = parse_sentiment(value);
        if (!s) throw QueryError("unknown label '" + value + "'");
        if (q.label && *q.label != *s) throw QueryError("conflicting label filters");
        q.label = s;
        continue;
      }
    }
    free_text += word;
    free_text += ' ';
  }
  for (auto& t : textprep::tokenize(free_text)) {
    if (std::find(q.terms.begin(), q.terms.end(), t) == q.terms.end()) q.terms.push_back(t);
  }
  return q;
}

double bm25_idf(std::uint64_t n, std::uint64_t df) {
  const double N = static_cast<double>(n), d = static_cast<double>(df);
  return std::log(1.0 + (N - d + 0.5) / (d + 0.5));
}

double bm25_tf(std::uint32_t tf, std::uint32_t doc_len, double avg_len) {
  const double f = tf;
  const double norm = avg_len > 0 ? static_cast<double>(doc_len) / avg_len : 0.0;
  return f * (kBm25K1 + 1.0) / (f + kBm25K1 * (1.0 - kBm25B + kBm25B * norm));
}

std::string make_snippet(std::string_view text) {
  if (text.size() <= kSnippetBytes) return std::string(text);
  std::size_t cut = kSnippetBytes;
  while (cut > 0 && (static_cast<unsigned char>(text[cut]) & 0xC0) == 0x80) --cut;
  return std::string(text.substr(0, cut));
}

InvertedIndex::InvertedIndex(InvertedIndex&& other) noexcept { *this = std::move(other); }

InvertedIndex& InvertedIndex::operator=(InvertedIndex&& other) noexcept {
  if (this == &other) return *this;
  std::scoped_lock lock(mu_, other.mu_);
  docs_ = std::move(other.docs_);
  ordinal_of_ = std::move(other.ordinal_of_);
  term_ids_ = std::move(other.term_ids_);
  terms_ = std::move(other.terms_);
  postings_ = std::move(other.postings_);
  df_ = std::move(other.df_);
  live_docs_ = other.live_docs_;
  total_tokens_ = other.total_tokens_;
  dead_docs_ = other.dead_docs_;
  return *this;
}

std::uint32_t InvertedIndex::term_id(const std::string& term) {
  auto [it, inserted] = term_ids_.try_emplace(term, static_cast<std::uint32_t>(terms_.size()));
  if (inserted) {
    terms_.push_back(term);
    postings_.emplace_back();
    df_.push_back(0);
  }
  return it->second;
}

void InvertedIndex::add_batch(const std::vector<IndexDoc>& docs, bool replace) {
  std::unique_lock lock(mu_);
  for (const auto& d : docs) add_locked(d, replace);
  if (dead_docs_ > 1024 && dead_docs_ * 2 > docs_.size()) compact_locked();
}

void InvertedIndex::add_locked(const IndexDoc& in, bool replace) {
  auto existing = ordinal_of_.find(in.doc_id);
  if (existing != ordinal_of_.end() && !replace) return;
  Doc doc;
  doc.doc_id = in.doc_id;
  doc.snippet = make_snippet(in.text);
  doc.label = in.label;
  doc.event_time = in.event_time;
  auto tokens = textprep::tokenize(in.text);
  doc.len = static_cast<std::uint32_t>(tokens.size());
  std::sort(tokens.begin(), tokens.end());
  for (std::size_t i = 0; i < tokens.size();) {
    std::size_t j = i;
    while (j < tokens.size() && tokens[j] == tokens[i]) ++j;
    doc.terms.push_back({term_id(tokens[i]), static_cast<std::uint32_t>(j - i)});
    i = j;
  }
  if (existing != ordinal_of_.end()) retire_locked(existing->second);
  insert_locked(std::move(doc));
}

void InvertedIndex::insert_locked(Doc doc) {
  const auto ordinal = static_cast<std::uint32_t>(docs_.size());
  for (const auto& [term, tf] : doc.terms) {
    postings_[term].push_back({ordinal, tf});
    ++df_[term];
  }
  ++live_docs_;
  total_tokens_ += doc.len;
  ordinal_of_[doc.doc_id] = ordinal;
  docs_.push_back(std::move(doc));
}

void InvertedIndex::retire_locked(std::uint32_t ordinal) {
  Doc& d = docs_[ordinal];
  for (const auto& [term, tf] : d.terms) --df_[term];
  d.alive = false;
  --live_docs_;
  total_tokens_ -= d.len;
  ++dead_docs_;
  d.terms.clear();
  d.terms.shrink_to_fit();
}

// Drops retired documents; surviving ordinals keep their relative order.
void InvertedIndex::compact_locked() {
  std::vector<Doc> old = std::move(docs_);
  docs_.clear();
  ordinal_of_.clear();
  for (auto& p : postings_) p.clear();
  std::fill(df_.begin(), df_.end(), 0);
  live_docs_ = total_tokens_ = dead_docs_ = 0;
  for (auto& d : old) {
    if (d.alive) insert_locked(std::move(d));
  }
}

std::vector<SearchHit> InvertedIndex::search(const Query& q, std::size_t k) const {
  if (k == 0) throw QueryError("k must be >= 1");
  std::shared_lock lock(mu_);
  if (live_docs_ == 0) return {};
  const double avg = static_cast<double>(total_tokens_) / static_cast<double>(live_docs_);
  std::unordered_map<std::uint32_t, double> scores;
  for (const auto& term : q.terms) {
    auto it = term_ids_.find(term);
    if (it == term_ids_.end() || df_[it->second] == 0) continue;
    const double idf = bm25_idf(live_docs_, df_[it->second]);
    if (!(idf > 0)) continue;
    for (const auto& [ord, tf] : postings_[it->second]) {
      const Doc& d = docs_[ord];
      if (!d.alive || (q.label && d.label != q.label)) continue;
      scores[ord] += idf * bm25_tf(tf, d.len, avg);
    }
  }
  std::vector<SearchHit> hits;
  hits.reserve(scores.size());
  for (const auto& [ord, score] : scores) {
    const Doc& d = docs_[ord];
    hits.push_back({d.doc_id, score, d.snippet, d.label, d.event_time, ord});
  }
  const std::size_t n = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(n), hits.end(),
                    hit_before);
  hits.resize(n);
  return hits;
}

IndexStats InvertedIndex::stats() const {
  std::shared_lock lock(mu_);
  IndexStats s;
  s.doc_count = live_docs_;
  s.total_tokens = total_tokens_;
  s.avg_doc_len = live_docs_ ? static_cast<double>(total_tokens_) / live_docs_ : 0.0;
  return s;
}

std::vector<Posting> InvertedIndex::postings(const std::string& term) const {
  std::shared_lock lock(mu_);
  std::vector<Posting> out;
  auto it = term_ids_.find(term);
  if (it == term_ids_.end()) return out;
  for (const auto& p : postings_[it->second]) {
    if (docs_[p.ordinal].alive) out.push_back(p);
  }
  return out;
}

std::optional<std::uint32_t> InvertedIndex::doc_len(const std::string& doc_id) const {
  std::shared_lock lock(mu_);
  auto it = ordinal_of_.find(doc_id);
  if (it == ordinal_of_.end()) return std::nullopt;
  return docs_[it->second].len;
}

bool InvertedIndex::contains(const std::string& doc_id) const {
  std::shared_lock lock(mu_);
  return ordinal_of_.count(doc_id) > 0;
}

void InvertedIndex::save(const fs::path& file, const std::string& meta) const {
  Writer w;
  {
    std::shared_lock lock(mu_);
    w.bytes().append(kMagic, 4);
    w.put<std::uint32_t>(kVersion);
    w.put<std::uint64_t>(terms_.size());
    for (const auto& t : terms_) w.put_str(t);
    w.put<std::uint64_t>(live_docs_);
    for (const auto& d : docs_) {
      if (!d.alive) continue;
      w.put_str(d.doc_id);
      w.put<std::uint8_t>(label_code(d.label));
      w.put<std::int64_t>(d.event_time);
      w.put_str(d.snippet);
      w.put<std::uint32_t>(d.len);
      w.put<std::uint32_t>(static_cast<std::uint32_t>(d.terms.size()));
      for (const auto& [term, tf] : d.terms) {
        w.put<std::uint32_t>(term);
        w.put<std::uint32_t>(tf);
      }
    }
  }
  w.put_str(meta);
  write_file_atomically<Error>(file, w.bytes());
}

InvertedIndex InvertedIndex::load(const fs::path& file, std::string* meta) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error("cannot open index snapshot " + file.string());
  Reader r(std::string(std::istreambuf_iterator<char>(in), {}));
  char magic[4];
  for (char& c : magic) c = r.get<char>();
  if (std::memcmp(magic, kMagic, 4) != 0) throw Error("not an index snapshot: " + file.string());
  if (r.get<std::uint32_t>() != kVersion) throw Error("unsupported index snapshot version");
  InvertedIndex idx;
  const auto n_terms = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n_terms; ++i) idx.term_id(r.get_str());
  const auto n_docs = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n_docs; ++i) {
    Doc d;
    d.doc_id = r.get_str();
    d.label = label_from_code(r.get<std::uint8_t>());
    d.event_time = r.get<std::int64_t>();
    d.snippet = r.get_str();
    d.len = r.get<std::uint32_t>();
    const auto n = r.get<std::uint32_t>();
    for (std::uint32_t t = 0; t < n; ++t) {
      const auto term = r.get<std::uint32_t>();
      const auto tf = r.get<std::uint32_t>();
      if (term >= n_terms || tf == 0) throw Error("index snapshot has a bad posting");
      d.terms.push_back({term, tf});
    }
    if (idx.ordinal_of_.count(d.doc_id)) throw Error("index snapshot repeats a doc_id");
    idx.insert_locked(std::move(d));
  }
  std::string stored_meta = r.get_str();
  if (!r.done()) throw Error("index snapshot has trailing bytes");
  if (meta) *meta = std::move(stored_meta);
  return idx;
}

namespace {

std::vector<std::pair<std::uint64_t, fs::path>> list_snapshots(const fs::path& dir) {
  static const std::regex kName(R"(snapshot-(\d+)\.bin)");
  std::vector<std::pair<std::uint64_t, fs::path>> out;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::smatch m;
    std::string name = e.path().filename().string();
    if (std::regex_match(name, m, kName)) out.emplace_back(std::stoull(m[1].str()), e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

fs::path InvertedIndex::snapshot(const fs::path& dir, const std::string& meta) const {
  fs::create_directories(dir);
  auto existing = list_snapshots(dir);
  const std::uint64_t n = existing.empty() ? 0 : existing.back().first + 1;
  fs::path file = dir / ("snapshot-" + std::to_string(n) + ".bin");
  save(file, meta);
  for (std::size_t i = 0; i + 1 < existing.size(); ++i) {
    std::error_code ec;
    fs::remove(existing[i].second, ec);
  }
  return file;
}

std::optional<InvertedIndex> InvertedIndex::load_latest(const fs::path& dir, std::string* meta) {
  auto snaps = list_snapshots(dir);
  for (auto it = snaps.rbegin(); it != snaps.rend(); ++it) {
    try {
      return load(it->second, meta);
    } catch (const Error&) {
    }
  }
  return std::nullopt;
}

}  // namespace mlsa::index
