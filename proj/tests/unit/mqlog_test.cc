#include "mlsa/mqlog.h"

#include <set>
#include <thread>

#include <gtest/gtest.h>

#include "mlsa/errors.h"
#include "mlsa/hash.h"
#include "test_util.h"

namespace mlsa::mqlog {
namespace {

using mlsa::testing::TempDir;

// Independent FNV-1a 64 for the key-affinity oracle.
std::uint64_t reference_fnv(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::vector<std::uint64_t> offsets_of(const std::vector<PolledRecord>& recs) {
  std::vector<std::uint64_t> out;
  for (const auto& r : recs) out.push_back(r.position.offset);
  return out;
}

TEST(Hash, KnownVectors) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

TEST(CreateTopic, StartsEmpty) {
  TempDir dir;
  MessageLog log(dir.path());
  const auto info = log.create_topic("tweets", 4);
  EXPECT_EQ(info.partitions, 4u);
  for (std::uint32_t p = 0; p < 4; ++p) EXPECT_EQ(log.high_watermark("tweets", p), 0u);
}

TEST(CreateTopic, DuplicateNameFails) {
  TempDir dir;
  MessageLog log(dir.path());
  log.create_topic("tweets", 4);
  EXPECT_THROW(log.create_topic("tweets", 4), TopicExists);
  EXPECT_THROW(log.create_topic("bad/name", 1), Error);
  EXPECT_THROW(log.create_topic("zero", 0), Error);
}

TEST(CreateTopic, SurvivesRestart) {
  TempDir dir;
  { MessageLog(dir.path()).create_topic("t", 1); }
  MessageLog log(dir.path());
  ASSERT_EQ(log.list_topics().size(), 1u);
  EXPECT_EQ(log.list_topics()[0].name, "t");
  EXPECT_EQ(log.ensure_topic("t", 9).partitions, 1u);
}

TEST(Append, FirstRecordIsOffsetZero) {
  TempDir dir;
  MessageLog log(dir.path());
  log.create_topic("t", 1);
  EXPECT_EQ(log.append("t", "k", "hello"), (LogPosition{"t", 0, 0}));
}

TEST(Append, SameKeySamePartitionGaplessOffsets) {
  TempDir dir;
  MessageLog log(dir.path());
  log.create_topic("t", 4);
  std::vector<LogPosition> pos;
  for (int i = 0; i < 3; ++i) pos.push_back(log.append("t", "user-17", "m"));
  EXPECT_EQ(pos[0].partition, pos[1].partition);
  EXPECT_EQ(pos[1].partition, pos[2].partition);
  EXPECT_EQ(pos[0].offset, 0u);
  EXPECT_EQ(pos[1].offset, 1u);
  EXPECT_EQ(pos[2].offset, 2u);
}

TEST(Append, RandomKeysFollowHashAffinity) {
  TempDir dir;
  MessageLog log(dir.path());
  log.create_topic("t", 4);
  std::mt19937_64 rng(1);
  std::array<std::uint64_t, 4> expected_size{};
  for (int i = 0; i < 1000; ++i) {
    const std::string key = "key-" + std::to_string(rng());
    const auto pos = log.append("t", key, "payload-" + std::to_string(i));
    const auto expected_partition = reference_fnv(key) % 4;
    ASSERT_EQ(pos.partition, expected_partition);
    ASSERT_EQ(pos.offset, expected_size[expected_partition]++);
  }
  std::uint64_t total = 0;
  for (std::uint32_t p = 0; p < 4; ++p) {
    EXPECT_EQ(log.high_watermark("t", p), expected_size[p]);
    const auto recs = log.read("t", p, 0, 10000);
    for (std::size_t i = 0; i < recs.size(); ++i) EXPECT_EQ(recs[i].position.offset, i);
    total += recs.size();
  }
  EXPECT_EQ(total, 1000u);
}

TEST(Append, UnknownTopic) {
  TempDir dir;
  MessageLog log(dir.path());
  EXPECT_THROW(log.append("nope", "k", "v"), UnknownTopic);
  EXPECT_THROW(log.poll("g", "nope", 1), UnknownTopic);
}

class PollTest : public ::testing::Test {
 protected:
  void SetUp() override {
    log_ = std::make_unique<MessageLog>(dir_.path());
    log_->create_topic("t", 1);
    for (int i = 0; i < 5; ++i) log_->append("t", "k", "m" + std::to_string(i), 100 + i);
  }
  TempDir dir_;
  std::unique_ptr<MessageLog> log_;
};

TEST_F(PollTest, FreshGroupStartsAtZero) {
  const auto recs = log_->poll("g", "t", 3);
  EXPECT_EQ(offsets_of(recs), (std::vector<std::uint64_t>{0, 1, 2}));
  EXPECT_EQ(recs[1].payload, "m1");
  EXPECT_EQ(recs[1].event_time, 101);
}

TEST_F(PollTest, UncommittedRecordsAreRedelivered) {
  log_->poll("g", "t", 3);
  EXPECT_EQ(offsets_of(log_->poll("g", "t", 3)), (std::vector<std::uint64_t>{0, 1, 2}));
}

TEST_F(PollTest, CommittedGroupResumes) {
  log_->commit("g", {{"t", 0, 1}});
  EXPECT_EQ(log_->committed("g", "t", 0), 2u);
  EXPECT_EQ(offsets_of(log_->poll("g", "t", 10)), (std::vector<std::uint64_t>{2, 3, 4}));
  EXPECT_EQ(log_->lag("g", "t"), 3u);
}

TEST_F(PollTest, CommitZeroThenNextPollStartsAtOne) {
  log_->commit("g", {{"t", 0, 0}});
  EXPECT_EQ(log_->poll("g", "t", 1).front().position.offset, 1u);
}

TEST_F(PollTest, CommitBeyondWatermarkRejected) {
  EXPECT_THROW(log_->commit("g", {{"t", 0, 5}}), InvalidCommit);
  EXPECT_THROW(log_->commit("g", {{"t", 0, 100}}), InvalidCommit);
  EXPECT_EQ(log_->committed("g", "t", 0), 0u);
}

TEST_F(PollTest, GroupsAreIndependent) {
  log_->commit("a", {{"t", 0, 3}});
  EXPECT_EQ(log_->poll("b", "t", 1).front().position.offset, 0u);
  EXPECT_EQ(log_->poll("a", "t", 1).front().position.offset, 4u);
}

TEST_F(PollTest, CrashBeforeCommitRedeliversAfterRestart) {
  log_->commit("g", {{"t", 0, 0}});
  const auto processed = log_->poll("g", "t", 3);  // offsets 1..3, never committed
  ASSERT_EQ(offsets_of(processed), (std::vector<std::uint64_t>{1, 2, 3}));
  log_.reset();
  MessageLog reopened(dir_.path());
  EXPECT_EQ(offsets_of(reopened.poll("g", "t", 3)), (std::vector<std::uint64_t>{1, 2, 3}));
}

TEST_F(PollTest, WatermarksAndCommitsSurviveRestart) {
  log_->commit("g", {{"t", 0, 2}});
  log_.reset();
  MessageLog reopened(dir_.path());
  EXPECT_EQ(reopened.high_watermark("t", 0), 5u);
  EXPECT_EQ(reopened.committed("g", "t", 0), 3u);
  EXPECT_EQ(reopened.append("t", "k", "m5").offset, 5u);
}

TEST(Poll, RoundRobinAcrossPartitions) {
  TempDir dir;
  MessageLog log(dir.path());
  log.create_topic("t", 3);
  // Find keys landing in each partition.
  std::array<std::string, 3> keys;
  for (int i = 0, found = 0; found < 3; ++i) {
    const std::string k = "k" + std::to_string(i);
    auto p = partition_for(k, 3);
    if (keys[p].empty()) {
      keys[p] = k;
      ++found;
    }
  }
  for (int i = 0; i < 4; ++i) log.append("t", keys[0], "a");
  log.append("t", keys[1], "b");
  for (int i = 0; i < 2; ++i) log.append("t", keys[2], "c");
  std::string order;
  for (const auto& r : log.poll("g", "t", 6)) order += r.payload;
  EXPECT_EQ(order, "abcaca");
}

TEST(Durability, TornTailIsTruncatedOnRecovery) {
  TempDir dir;
  {
    MessageLog log(dir.path());
    log.create_topic("t", 1);
    log.append("t", "k", "first");
    log.append("t", "k", "second");
  }
  const auto seg = dir.path() / "mqlog" / "t" / "0" / "segment-0.log";
  const auto size = std::filesystem::file_size(seg);
  std::filesystem::resize_file(seg, size - 3);
  MessageLog log(dir.path());
  EXPECT_EQ(log.high_watermark("t", 0), 1u);
  EXPECT_EQ(log.append("t", "k", "again").offset, 1u);
  const auto recs = log.read("t", 0, 0, 10);
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0].payload, "first");
  EXPECT_EQ(recs[1].payload, "again");
}

TEST(Durability, OnDiskRecordLayout) {
  TempDir dir;
  {
    MessageLog log(dir.path());
    log.create_topic("t", 1);
    log.append("t", "k", "xyz", 0x0102030405060708LL);
  }
  const auto bytes = mlsa::testing::read_file(dir.path() / "mqlog/t/0/segment-0.log");
  const std::string expected("\x03\x00\x00\x00"
                             "\x00\x00\x00\x00\x00\x00\x00\x00"
                             "\x08\x07\x06\x05\x04\x03\x02\x01"
                             "xyz",
                             23);
  EXPECT_EQ(bytes, expected);
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "mqlog/t/topic.json"));
}

TEST(Segments, RollAndReadAcrossSegments) {
  TempDir dir;
  LogOptions opts;
  opts.segment_bytes = 256;
  opts.index_interval = 3;
  {
    MessageLog log(dir.path(), opts);
    log.create_topic("t", 1);
    for (int i = 0; i < 100; ++i) log.append("t", "k", "payload-" + std::to_string(i));
  }
  std::size_t segments = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir.path() / "mqlog/t/0")) {
    segments += e.path().extension() == ".log";
  }
  EXPECT_GT(segments, 5u);
  MessageLog log(dir.path(), opts);
  EXPECT_EQ(log.high_watermark("t", 0), 100u);
  for (std::uint64_t from : {0u, 1u, 17u, 50u, 98u}) {
    const auto recs = log.read("t", 0, from, 7);
    ASSERT_FALSE(recs.empty());
    for (std::size_t i = 0; i < recs.size(); ++i) {
      EXPECT_EQ(recs[i].position.offset, from + i);
      EXPECT_EQ(recs[i].payload, "payload-" + std::to_string(from + i));
    }
  }
}

TEST(Segments, RetentionDropsOldestSegments) {
  TempDir dir;
  LogOptions opts;
  opts.segment_bytes = 100;
  MessageLog log(dir.path(), opts);
  log.create_topic("t", 1, 300);
  for (int i = 0; i < 50; ++i) log.append("t", "k", std::string(30, 'x'));
  EXPECT_GT(log.log_start_offset("t", 0), 0u);
  const auto recs = log.poll("g", "t", 1000);
  ASSERT_FALSE(recs.empty());
  EXPECT_EQ(recs.front().position.offset, log.log_start_offset("t", 0));
  EXPECT_EQ(recs.back().position.offset, 49u);
}

TEST(Concurrency, ProducersNeverDuplicateOffsets) {
  TempDir dir;
  MessageLog log(dir.path());
  log.create_topic("t", 2);
  constexpr int kThreads = 8, kPerThread = 500;
  std::vector<std::vector<LogPosition>> results(kThreads);
  std::vector<std::thread> threads;
  for (int t = 0; t < kThreads; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < kPerThread; ++i) {
        results[t].push_back(log.append("t", "k" + std::to_string(i % 7), "p"));
      }
    });
  }
  for (auto& th : threads) th.join();
  std::array<std::set<std::uint64_t>, 2> seen;
  for (const auto& r : results) {
    for (const auto& pos : r) EXPECT_TRUE(seen[pos.partition].insert(pos.offset).second);
  }
  std::size_t total = 0;
  for (std::uint32_t p = 0; p < 2; ++p) {
    const auto hw = log.high_watermark("t", p);
    EXPECT_EQ(seen[p].size(), hw);
    if (!seen[p].empty()) EXPECT_EQ(*seen[p].rbegin(), hw - 1);
    total += hw;
  }
  EXPECT_EQ(total, static_cast<std::size_t>(kThreads * kPerThread));
}

}  // namespace
}  // namespace mlsa::mqlog
