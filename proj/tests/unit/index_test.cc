#include "mlsa/index.h"

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>
#include <set>
#include <thread>

#include "mlsa/errors.h"
#include "mlsa/textprep.h"
#include "test_util.h"

namespace mlsa::index {
namespace {

using mlsa::testing::TempDir;

IndexDoc doc(std::string id, std::string text, std::optional<Sentiment> label = {}) {
  return {std::move(id), std::move(text), label, 1};
}

// Scores every live document directly from its text, in insertion order.
struct BruteForce {
  struct Entry {
    std::string id;
    std::vector<std::string> tokens;
    std::optional<Sentiment> label;
  };
  std::vector<Entry> docs;  // latest version of each id, by (re)insertion order

  void add(const IndexDoc& d) {
    std::erase_if(docs, [&](const Entry& e) { return e.id == d.doc_id; });
    docs.push_back({d.doc_id, textprep::tokenize(d.text), d.label});
  }

  std::vector<std::pair<std::string, double>> search(const std::string& q, std::size_t k) const {
    Query query = parse_query(q);
    double n = static_cast<double>(docs.size()), total = 0;
    for (auto& d : docs) total += static_cast<double>(d.tokens.size());
    double avg = n > 0 ? total / n : 0;
    std::vector<std::tuple<double, std::size_t, std::string>> scored;
    for (std::size_t i = 0; i < docs.size(); ++i) {
      const auto& d = docs[i];
      if (query.label && d.label != query.label) continue;
      double score = 0;
      bool matched = false;
      for (auto& t : query.terms) {
        double tf = static_cast<double>(std::count(d.tokens.begin(), d.tokens.end(), t));
        if (tf == 0) continue;
        double df = 0;
        for (auto& o : docs) df += std::find(o.tokens.begin(), o.tokens.end(), t) != o.tokens.end();
        double idf = std::log(1 + (n - df + 0.5) / (df + 0.5));
        double len = static_cast<double>(d.tokens.size());
        score += idf * (tf * 2.2 / (tf + 1.2 * (0.25 + 0.75 * len / avg)));
        matched = true;
      }
      if (matched) scored.emplace_back(-score, i, d.id);
    }
    std::sort(scored.begin(), scored.end());
    std::vector<std::pair<std::string, double>> out;
    for (std::size_t i = 0; i < scored.size() && i < k; ++i) {
      out.emplace_back(std::get<2>(scored[i]), -std::get<0>(scored[i]));
    }
    return out;
  }
};

TEST(Index, TermCountsAndLength) {
  InvertedIndex idx;
  idx.add(doc("a", "good good day"));
  auto good = idx.postings("good");
  ASSERT_EQ(good.size(), 1u);
  EXPECT_EQ(good[0].tf, 2u);
  EXPECT_EQ(idx.postings("day")[0].tf, 1u);
  EXPECT_EQ(idx.doc_len("a"), 3u);
}

TEST(Index, ReindexReplaces) {
  InvertedIndex idx;
  idx.add(doc("a", "first version"));
  idx.add(doc("a", "second text"));
  EXPECT_TRUE(idx.search("first", 5).empty());
  auto hits = idx.search("second", 5);
  ASSERT_EQ(hits.size(), 1u);
  EXPECT_EQ(hits[0].doc_id, "a");
  EXPECT_EQ(idx.stats().doc_count, 1u);
  EXPECT_EQ(idx.stats().total_tokens, 2u);
}

TEST(Index, StatsFromRawCorpus) {
  InvertedIndex idx;
  std::mt19937 rng(1);
  std::uint64_t total = 0;
  for (int i = 0; i < 100; ++i) {
    std::string text;
    int n = 1 + rng() % 12;
    for (int w = 0; w < n; ++w) text += "w" + std::to_string(rng() % 30) + " ";
    total += textprep::tokenize(text).size();
    idx.add(doc(std::to_string(i), text));
  }
  auto s = idx.stats();
  EXPECT_EQ(s.doc_count, 100u);
  EXPECT_EQ(s.total_tokens, total);
  EXPECT_DOUBLE_EQ(s.avg_doc_len, static_cast<double>(total) / 100.0);
}

TEST(Index, HandEvaluatedSingleDoc) {
  InvertedIndex idx;
  idx.add(doc("a", "good day"));
  auto hits = idx.search("good", 1);
  ASSERT_EQ(hits.size(), 1u);
  EXPECT_NEAR(hits[0].score, std::log(4.0 / 3.0), 1e-12);
  EXPECT_NEAR(hits[0].score, 0.2877, 1e-4);
}

TEST(Index, UnknownTermsGiveEmptyResult) {
  InvertedIndex idx;
  idx.add(doc("a", "good day"));
  EXPECT_TRUE(idx.search("zzz", 3).empty());
  EXPECT_TRUE(idx.search("", 3).empty());
  EXPECT_THROW(idx.search("good", 0), QueryError);
}

TEST(Index, EmptyAfterTokenizeMatchesNothing) {
  InvertedIndex idx;
  idx.add(doc("a", "!!! ..."));
  EXPECT_EQ(idx.doc_len("a"), 0u);
  EXPECT_EQ(idx.stats().doc_count, 1u);
  EXPECT_TRUE(idx.search("a", 3).empty());
}

TEST(Index, TiesBrokenByOrdinal) {
  InvertedIndex idx;
  idx.add(doc("z", "same words"));
  idx.add(doc("a", "same words"));
  idx.add(doc("m", "same words"));
  auto hits = idx.search("same", 3);
  ASSERT_EQ(hits.size(), 3u);
  EXPECT_EQ(hits[0].doc_id, "z");
  EXPECT_EQ(hits[1].doc_id, "a");
  EXPECT_EQ(hits[2].doc_id, "m");
}

TEST(Index, LabelFilter) {
  InvertedIndex idx;
  idx.add(doc("p", "great movie", Sentiment::kPositive));
  idx.add(doc("n", "terrible movie", Sentiment::kNegative));
  idx.add(doc("u", "a movie"));
  auto pos = idx.search("label:positive AND movie", 10);
  ASSERT_EQ(pos.size(), 1u);
  EXPECT_EQ(pos[0].doc_id, "p");
  EXPECT_EQ(pos[0].label, Sentiment::kPositive);
  EXPECT_EQ(idx.search("movie label:NEGATIVE", 10)[0].doc_id, "n");
  EXPECT_EQ(idx.search("movie", 10).size(), 3u);
  EXPECT_THROW(idx.search("label:meh movie", 10), QueryError);
  EXPECT_THROW(parse_query("label:positive label:negative x"), QueryError);
}

TEST(Index, QueryTermsDeduplicated) {
  auto q = parse_query("Good good GOOD day");
  EXPECT_EQ(q.terms, (std::vector<std::string>{"good", "day"}));
}

TEST(Index, SnippetCutsOnUtf8Boundary) {
  std::string text(158, 'x');
  text += "\xc3\xa9\xc3\xa9";  // two 2-byte chars straddling 160
  auto s = make_snippet(text);
  EXPECT_EQ(s.size(), 160u);
  text = std::string(159, 'x') + "\xc3\xa9";
  EXPECT_EQ(make_snippet(text + "tail").size(), 159u);
  EXPECT_EQ(make_snippet("short"), "short");
}

std::string random_text(std::mt19937& rng) {
  static const std::vector<std::string> words = {"good", "bad",  "day",   "night", "movie",
                                                 "love", "hate", "great", "awful", "rain",
                                                 "sun",  "cat",  "dog",   "tea",   "coffee"};
  std::string text;
  int n = rng() % 15;
  for (int i = 0; i < n; ++i) text += words[rng() % words.size()] + " ";
  if (rng() % 5 == 0) text += "http://x.y/z @someone 123";
  return text;
}

TEST(Index, MatchesBruteForceAfterEveryInsertion) {
  std::mt19937 rng(42);
  for (int trial = 0; trial < 5; ++trial) {
    InvertedIndex idx;
    BruteForce oracle;
    for (int i = 0; i < 50; ++i) {
      // Some re-indexing of earlier ids to exercise replacement.
      std::string id = (i > 5 && rng() % 6 == 0) ? std::to_string(rng() % i) : std::to_string(i);
      std::optional<Sentiment> label;
      if (rng() % 3) label = rng() % 2 ? Sentiment::kPositive : Sentiment::kNegative;
      IndexDoc d = doc(id, random_text(rng), label);
      idx.add(d);
      oracle.add(d);
      for (int q = 0; q < 5; ++q) {
        std::string query = random_text(rng);
        if (rng() % 4 == 0) query += rng() % 2 ? " label:positive" : " label:negative";
        std::size_t k = 1 + rng() % 60;
        auto got = idx.search(query, k);
        auto want = oracle.search(query, k);
        ASSERT_EQ(got.size(), want.size()) << query;
        for (std::size_t h = 0; h < got.size(); ++h) {
          EXPECT_EQ(got[h].doc_id, want[h].first) << query << " rank " << h;
          EXPECT_NEAR(got[h].score, want[h].second, 1e-9);
        }
      }
    }
  }
}

TEST(Index, CandidateSetContainsEveryMatchingDoc) {
  std::mt19937 rng(8);
  InvertedIndex idx;
  BruteForce oracle;
  for (int i = 0; i < 300; ++i) {
    IndexDoc d = doc(std::to_string(i), random_text(rng));
    idx.add(d);
    oracle.add(d);
  }
  for (int q = 0; q < 50; ++q) {
    std::string query = random_text(rng);
    auto got = idx.search(query, 100000);
    auto want = oracle.search(query, 100000);
    std::set<std::string> g, w;
    for (auto& h : got) g.insert(h.doc_id);
    for (auto& h : want) w.insert(h.first);
    EXPECT_EQ(g, w);
  }
}

TEST(Index, CompactionPreservesResults) {
  InvertedIndex idx;
  BruteForce oracle;
  std::mt19937 rng(4);
  for (int i = 0; i < 6000; ++i) {
    IndexDoc d = doc(std::to_string(rng() % 500), random_text(rng));
    idx.add(d);
    oracle.add(d);
  }
  EXPECT_EQ(idx.stats().doc_count, oracle.docs.size());
  for (const char* q : {"good day", "coffee tea", "love"}) {
    auto got = idx.search(q, 20);
    auto want = oracle.search(q, 20);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t h = 0; h < got.size(); ++h) EXPECT_EQ(got[h].doc_id, want[h].first);
  }
}

TEST(Index, SnapshotRoundTrip) {
  TempDir dir;
  InvertedIndex idx;
  std::mt19937 rng(5);
  for (int i = 0; i < 200; ++i) {
    idx.add(doc(std::to_string(i % 150), random_text(rng),
                i % 2 ? std::optional(Sentiment::kPositive) : std::nullopt));
  }
  auto p1 = idx.snapshot(dir / "index");
  auto p2 = idx.snapshot(dir / "index");
  auto p3 = idx.snapshot(dir / "index");
  EXPECT_EQ(p3.filename(), "snapshot-2.bin");
  EXPECT_FALSE(std::filesystem::exists(p1));
  EXPECT_TRUE(std::filesystem::exists(p2));
  auto loaded = InvertedIndex::load_latest(dir / "index");
  ASSERT_TRUE(loaded.has_value());
  EXPECT_EQ(loaded->stats().doc_count, idx.stats().doc_count);
  EXPECT_EQ(loaded->stats().total_tokens, idx.stats().total_tokens);
  for (const char* q : {"good", "label:positive movie rain", "cat dog"}) {
    auto a = idx.search(q, 30), b = loaded->search(q, 30);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].doc_id, b[i].doc_id);
      EXPECT_EQ(a[i].score, b[i].score);
      EXPECT_EQ(a[i].snippet, b[i].snippet);
      EXPECT_EQ(a[i].label, b[i].label);
    }
  }
}

TEST(Index, CorruptSnapshotsRejected) {
  TempDir dir;
  InvertedIndex idx;
  idx.add(doc("a", "good day"));
  idx.save(dir / "s.bin");
  std::string bytes = mlsa::testing::read_file(dir / "s.bin");
  mlsa::testing::write_file(dir / "t.bin", bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(InvertedIndex::load(dir / "t.bin"), Error);
  mlsa::testing::write_file(dir / "m.bin", "XXXX" + bytes.substr(4));
  EXPECT_THROW(InvertedIndex::load(dir / "m.bin"), Error);
  EXPECT_FALSE(InvertedIndex::load_latest(dir / "nothing").has_value());
}

TEST(Index, ConcurrentSearchSeesWholeBatches) {
  InvertedIndex idx;
  std::atomic<bool> done{false};
  std::thread writer([&] {
    for (int b = 0; b < 200; ++b) {
      std::vector<IndexDoc> batch;
      for (int i = 0; i < 10; ++i) batch.push_back(doc(std::to_string(b * 10 + i), "needle hay"));
      idx.add_batch(batch);
    }
    done = true;
  });
  while (!done) {
    auto hits = idx.search("needle", 100000);
    ASSERT_EQ(hits.size() % 10, 0u);
  }
  writer.join();
  EXPECT_EQ(idx.search("needle", 100000).size(), 2000u);
}

}  // namespace
}  // namespace mlsa::index
