#include "mlsa/ingest.h"

#include <gtest/gtest.h>
#include <sys/socket.h>
#include <netinet/in.h>
#include <arpa/inet.h>
#include <unistd.h>

#include <cmath>
#include <limits>
#include <random>
#include <thread>

#include "mlsa/errors.h"
#include "mlsa/hash.h"
#include "test_util.h"

namespace mlsa::ingest {
namespace {

using mlsa::testing::TempDir;
using mlsa::testing::write_file;
constexpr double kFullSpeed = std::numeric_limits<double>::infinity();

void set_mtime_millis(const std::filesystem::path& p, std::int64_t ms) {
  auto sys = std::chrono::system_clock::time_point(std::chrono::milliseconds(ms));
  std::filesystem::last_write_time(p, std::chrono::file_clock::from_sys(sys));
}

std::vector<RawRecord> drain(RecordSource& src) {
  std::vector<RawRecord> out;
  while (auto r = src.next()) out.push_back(*r);
  return out;
}

TEST(ReplaySource, FullSpeedEmitsInFileOrderWithoutSleeping) {
  TempDir dir;
  write_file(dir / "t.jsonl",
             "{\"id\":\"1\",\"timestamp\":1000,\"text\":\"a\"}\n"
             "{\"id\":\"2\",\"timestamp\":5000,\"text\":\"b\"}\n"
             "{\"id\":\"3\",\"timestamp\":9000,\"text\":\"c\"}\n");
  int sleeps = 0;
  ReplaySource src(dir / "t.jsonl", kFullSpeed, [&](auto) { ++sleeps; });
  auto recs = drain(src);
  ASSERT_EQ(recs.size(), 3u);
  EXPECT_NE(recs[0].payload.find("\"1\""), std::string::npos);
  EXPECT_NE(recs[2].payload.find("\"3\""), std::string::npos);
  EXPECT_EQ(sleeps, 0);
  EXPECT_EQ(src.malformed_skipped(), 0u);
}

TEST(ReplaySource, EmptyFileEndsImmediately) {
  TempDir dir;
  write_file(dir / "e.jsonl", "");
  ReplaySource src(dir / "e.jsonl", kFullSpeed);
  EXPECT_FALSE(src.next().has_value());
}

TEST(ReplaySource, MissingFileIsSourceError) {
  TempDir dir;
  EXPECT_THROW(ReplaySource(dir / "nope.jsonl", 1.0), SourceError);
  write_file(dir / "x.jsonl", "{}\n");
  EXPECT_THROW(ReplaySource(dir / "x.jsonl", 0.0), SourceError);
}

TEST(ReplaySource, MalformedLinesAreSkippedAndCounted) {
  TempDir dir;
  std::vector<std::string> lines;
  for (int i = 0; i < 10; ++i) {
    lines.push_back("{\"id\":\"" + std::to_string(i) + "\",\"text\":\"t" + std::to_string(i) + "\"}");
  }
  lines[4] = "{\"id\":\"4\",\"text\":";
  std::string content;
  for (auto& l : lines) content += l + "\n";
  write_file(dir / "m.jsonl", content);

  std::size_t invalid = 0;
  for (auto& l : lines) invalid += nlohmann::json::accept(l) ? 0 : 1;

  ReplaySource src(dir / "m.jsonl", kFullSpeed);
  auto recs = drain(src);
  EXPECT_EQ(invalid, 1u);
  EXPECT_EQ(recs.size(), lines.size() - invalid);
  EXPECT_EQ(src.malformed_skipped(), invalid);
}

TEST(ReplaySource, NonObjectJsonCountsAsMalformed) {
  TempDir dir;
  write_file(dir / "n.jsonl", "[1,2]\n\n42\n{\"text\":\"ok\"}\n");
  ReplaySource src(dir / "n.jsonl", kFullSpeed);
  EXPECT_EQ(drain(src).size(), 1u);
  EXPECT_EQ(src.malformed_skipped(), 2u);
}

TEST(ReplaySource, DelaysAreRecordedGapsOverSpeedup) {
  TempDir dir;
  write_file(dir / "d.jsonl",
             "{\"timestamp\":1000,\"text\":\"a\"}\n"
             "{\"timestamp\":3000,\"text\":\"b\"}\n"
             "{\"text\":\"no ts\"}\n"
             "{\"timestamp\":7000,\"text\":\"c\"}\n");
  set_mtime_millis(dir / "d.jsonl", 500);
  std::vector<std::chrono::steady_clock::time_point> targets;
  ReplaySource src(dir / "d.jsonl", 2.0, [&](auto t) { targets.push_back(t); });
  auto recs = drain(src);
  ASSERT_EQ(recs.size(), 4u);
  ASSERT_EQ(targets.size(), 2u);
  using ms = std::chrono::milliseconds;
  EXPECT_EQ(std::chrono::duration_cast<ms>(targets[1] - targets[0]).count(), 2000);
  // Arrival times follow the recorded timestamps and never go backwards.
  EXPECT_EQ(recs[0].arrival_time, 1000);
  EXPECT_EQ(recs[1].arrival_time, 3000);
  EXPECT_EQ(recs[2].arrival_time, 3000);
  EXPECT_EQ(recs[3].arrival_time, 7000);
}

TEST(ReplaySource, ArrivalTimeIsNonDecreasing) {
  TempDir dir;
  write_file(dir / "r.jsonl",
             "{\"timestamp\":5000,\"text\":\"a\"}\n"
             "{\"timestamp\":2000,\"text\":\"b\"}\n");
  ReplaySource src(dir / "r.jsonl", kFullSpeed);
  auto recs = drain(src);
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_LE(recs[0].arrival_time, recs[1].arrival_time);
}

TEST(Extract, DirectFieldMapping) {
  RawRecord raw{"s", 1, R"({"id":"1","timestamp":5,"text":"good day","user":"a"})"};
  auto env = extract(raw);
  EXPECT_EQ(env.doc_id, "1");
  EXPECT_EQ(env.event_time, 5);
  EXPECT_EQ(env.text, "good day");
  EXPECT_EQ(env.author, "a");
  EXPECT_FALSE(env.label.has_value());
  EXPECT_EQ(env.raw, raw.payload);
}

TEST(Extract, FallbackIdAndTime) {
  RawRecord raw{"s", 99, R"({"text":"x"})"};
  auto env = extract(raw);
  EXPECT_EQ(env.doc_id, to_hex(fnv1a64(raw.payload)));
  EXPECT_EQ(env.event_time, 99);
}

TEST(Extract, WhitespaceTextIsEmptyTextError) {
  EXPECT_THROW(extract({"s", 1, R"({"id":"2","text":"   "})"}), EmptyTextError);
  EXPECT_THROW(extract({"s", 1, R"({"id":"2"})"}), EmptyTextError);
}

TEST(Extract, InvalidPayloadsAreExtractionErrors) {
  EXPECT_THROW(extract({"s", 1, "{not json"}), ExtractionError);
  EXPECT_THROW(extract({"s", 1, "[1]"}), ExtractionError);
  EXPECT_THROW(extract({"s", 1, R"({"text":5})"}), ExtractionError);
  EXPECT_THROW(extract({"s", 1, R"({"text":"a","timestamp":"x"})"}), ExtractionError);
  EXPECT_THROW(extract({"s", 1, R"({"text":"a","label":"meh"})"}), ExtractionError);
  EXPECT_THROW(extract({"s", 0, R"({"text":"a"})"}), ExtractionError);
}

TEST(Extract, NumericIdLabelAndNestedUser) {
  auto env = extract({"s", 1, R"({"id":42,"text":"a","label":"positive","user":{"screen_name":"bob"}})"});
  EXPECT_EQ(env.doc_id, "42");
  EXPECT_EQ(env.label, Sentiment::kPositive);
  EXPECT_EQ(env.author, "bob");
}

TEST(Dedup, NormalizationMakesVariantsIdentical) {
  DedupFilter f(10);
  EXPECT_EQ(f.check("good day"), DedupVerdict::kKeep);
  EXPECT_EQ(f.check("good  DAY"), DedupVerdict::kDrop);
  EXPECT_EQ(f.check("  Good\tday\n"), DedupVerdict::kDrop);
}

TEST(Dedup, DistinctTextsAreKept) {
  DedupFilter f(10);
  EXPECT_EQ(f.check("one"), DedupVerdict::kKeep);
  EXPECT_EQ(f.check("two"), DedupVerdict::kKeep);
}

TEST(Dedup, CapacityOneEvictsOldest) {
  DedupFilter f(1);
  EXPECT_EQ(f.check("A"), DedupVerdict::kKeep);
  EXPECT_EQ(f.check("B"), DedupVerdict::kKeep);
  EXPECT_EQ(f.check("A"), DedupVerdict::kKeep);
  EXPECT_EQ(f.evictions(), 2u);
  EXPECT_EQ(f.size(), 1u);
}

TEST(Dedup, ZeroCapacityRejected) { EXPECT_THROW(DedupFilter(0), std::invalid_argument); }

// Reference FIFO window: a text is a duplicate iff its normalized form is
// among the last `capacity` distinct kept forms.
TEST(Dedup, MatchesReferenceWindowOnRandomStreams) {
  std::mt19937 rng(7);
  for (std::size_t cap : {1u, 3u, 17u, 100u}) {
    DedupFilter f(cap);
    std::deque<std::string> window;
    for (int i = 0; i < 3000; ++i) {
      std::string text = "w" + std::to_string(rng() % 60);
      if (rng() % 2) text = "  " + text;
      if (rng() % 2) text[text.size() - 1 - (text.size() > 3)] = 'W';
      std::string norm = normalize_for_fingerprint(text);
      bool dup = std::find(window.begin(), window.end(), norm) != window.end();
      if (!dup) {
        window.push_back(norm);
        if (window.size() > cap) window.pop_front();
      }
      ASSERT_EQ(f.check(text), dup ? DedupVerdict::kDrop : DedupVerdict::kKeep)
          << "cap " << cap << " step " << i;
      ASSERT_LE(f.size(), cap);
    }
  }
}

TEST(Dedup, RepeatWithinCapacityIsAlwaysDropped) {
  std::mt19937 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t cap = 1 + rng() % 20;
    DedupFilter f(cap);
    std::size_t gap = rng() % cap;  // distinct texts in between, < capacity
    EXPECT_EQ(f.check("needle"), DedupVerdict::kKeep);
    for (std::size_t i = 0; i < gap; ++i) f.check("hay " + std::to_string(i));
    EXPECT_EQ(f.check("NEEDLE"), DedupVerdict::kDrop);
  }
}

std::string random_jsonl(std::mt19937& rng, int n) {
  std::string out;
  for (int i = 0; i < n; ++i) {
    switch (rng() % 6) {
      case 0: out += "{\"id\":\"x\",\"text\":"; break;                     // malformed
      case 1: out += "{\"id\":\"e" + std::to_string(i) + "\",\"text\":\" \"}"; break;  // empty
      case 2: out += "{\"text\":\"dup text\"}"; break;                      // duplicate-prone
      case 3: out += "{\"text\":5}"; break;                                 // wrong type
      default:
        out += "{\"id\":\"" + std::to_string(i) + "\",\"timestamp\":" + std::to_string(1000 + i) +
               ",\"text\":\"msg " + std::to_string(rng() % 50) + "\"}";
    }
    out += "\n";
  }
  return out;
}

TEST(IngestPipeline, CountersReconcileOnRandomInputs) {
  TempDir dir;
  std::mt19937 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    int n = 1 + static_cast<int>(rng() % 400);
    write_file(dir / "in.jsonl", random_jsonl(rng, n));
    ReplaySource src(dir / "in.jsonl", kFullSpeed);
    IngestPipeline pipe(1 + rng() % 64);
    std::size_t emitted = 0;
    auto c = pipe.run(src, [&](RecordEnvelope&&) { ++emitted; });
    EXPECT_EQ(c.records_in, static_cast<std::uint64_t>(n));
    EXPECT_TRUE(c.reconciles());
    EXPECT_EQ(c.envelopes_out, emitted);
  }
}

TEST(IngestPipeline, FullSpeedReplayIsDeterministic) {
  TempDir dir;
  std::mt19937 rng(5);
  write_file(dir / "in.jsonl", random_jsonl(rng, 500));
  auto run_once = [&] {
    ReplaySource src(dir / "in.jsonl", kFullSpeed);
    IngestPipeline pipe;
    std::string bytes;
    pipe.run(src, [&](RecordEnvelope&& e) { bytes += serialize(e) + "\n"; });
    return bytes;
  };
  std::string a = run_once();
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, run_once());
}

TEST(TcpLineSource, ReadsLinesUntilPeerCloses) {
  TcpLineSource src(0);
  ASSERT_NE(src.port(), 0);
  std::thread client([port = src.port()] {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    ::inet_pton(AF_INET, "127.0.0.1", &addr.sin_addr);
    ASSERT_EQ(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)), 0);
    std::string data = "{\"text\":\"a\"}\r\nbad\n{\"text\":\"b\"}";
    ASSERT_EQ(::write(fd, data.data(), data.size()), static_cast<ssize_t>(data.size()));
    ::close(fd);
  });
  auto recs = drain(src);
  client.join();
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0].payload, "{\"text\":\"a\"}");
  EXPECT_EQ(recs[1].payload, "{\"text\":\"b\"}");
  EXPECT_EQ(src.malformed_skipped(), 1u);
  EXPECT_LE(recs[0].arrival_time, recs[1].arrival_time);
}

TEST(TcpLineSource, StopUnblocksWaitingReader) {
  TcpLineSource src(0);
  std::thread stopper([&] {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    src.stop();
  });
  EXPECT_FALSE(src.next().has_value());
  stopper.join();
}

}  // namespace
}  // namespace mlsa::ingest
