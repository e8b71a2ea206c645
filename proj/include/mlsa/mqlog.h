#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

namespace mlsa::mqlog {

struct LogPosition {
  std::string topic;
  std::uint32_t partition = 0;
  std::uint64_t offset = 0;

  bool operator==(const LogPosition&) const = default;
};

struct TopicInfo {
  std::string name;
  std::uint32_t partitions = 1;
  std::optional<std::uint64_t> retention_bytes;
};

struct PolledRecord {
  LogPosition position;
  std::int64_t event_time = 0;
  std::string payload;
};

struct LogOptions {
  std::uint64_t segment_bytes = 64ull << 20;
  std::uint64_t index_interval = 4096;
};

// Each record on disk is [u32 length][u64 offset][u64 event_time][payload],
// little-endian.
inline constexpr std::size_t kRecordHeaderBytes = 20;

// Partition for `key`: FNV-1a 64 of the key bytes, modulo the partition count.
std::uint32_t partition_for(std::string_view key, std::uint32_t partitions);

class Partition;

// Embedded partitioned append-only log with consumer-group offsets.
//
// Layout under <data_dir>/mqlog:
//   <topic>/topic.json
//   <topic>/<partition>/segment-<base_offset>.log
//   groups/<group_id>.json
//
// Appends are buffered until flush(); poll() always sees every appended
// record. Delivery is at-least-once: poll never advances a group, commit does.
class MessageLog {
 public:
  explicit MessageLog(const std::filesystem::path& data_dir, LogOptions options = {});
  ~MessageLog();
  MessageLog(const MessageLog&) = delete;
  MessageLog& operator=(const MessageLog&) = delete;

  TopicInfo create_topic(const std::string& name, std::uint32_t partitions,
                         std::optional<std::uint64_t> retention_bytes = std::nullopt);
  // Creates the topic if absent; returns the existing definition otherwise.
  TopicInfo ensure_topic(const std::string& name, std::uint32_t partitions);
  bool has_topic(const std::string& name) const;
  TopicInfo topic(const std::string& name) const;
  std::vector<TopicInfo> list_topics() const;

  LogPosition append(const std::string& topic, std::string_view key,
                     std::string_view payload, std::int64_t event_time = 0);

  // Pushes buffered appends to stable storage.
  void flush();
  void flush(const std::string& topic);

  // Up to max_records starting at the group's committed offsets, interleaved
  // round-robin across partitions.
  std::vector<PolledRecord> poll(const std::string& group, const std::string& topic,
                                 std::size_t max_records);
  // committed[partition] = offset + 1 for the highest offset given per partition.
  void commit(const std::string& group, const std::vector<LogPosition>& positions);

  // Reads a partition directly, independent of any group.
  std::vector<PolledRecord> read(const std::string& topic, std::uint32_t partition,
                                 std::uint64_t from_offset, std::size_t max_records) const;

  std::uint64_t committed(const std::string& group, const std::string& topic,
                          std::uint32_t partition) const;
  std::uint64_t high_watermark(const std::string& topic, std::uint32_t partition) const;
  std::uint64_t log_start_offset(const std::string& topic, std::uint32_t partition) const;
  // Records not yet committed by `group`, summed over partitions.
  std::uint64_t lag(const std::string& group, const std::string& topic) const;

  const std::filesystem::path& root() const { return root_; }

 private:
  struct Topic {
    TopicInfo info;
    std::vector<std::unique_ptr<Partition>> partitions;
  };
  // group -> topic -> partition -> next offset to consume
  using GroupOffsets = std::map<std::string, std::map<std::uint32_t, std::uint64_t>>;

  Topic& find_topic(const std::string& name) const;
  Partition& find_partition(const std::string& topic, std::uint32_t partition) const;
  void load_groups();
  void persist_group(const std::string& group, const GroupOffsets& offsets) const;

  std::filesystem::path root_;
  LogOptions options_;
  mutable std::shared_mutex topics_mu_;
  std::map<std::string, std::unique_ptr<Topic>> topics_;
  mutable std::mutex groups_mu_;
  std::map<std::string, GroupOffsets> groups_;
};

}  // namespace mlsa::mqlog
