#include "mlsa/mqlog.h"

#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "mlsa/errors.h"
#include "mlsa/fileio.h"
#include "mlsa/hash.h"

namespace mlsa::mqlog {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint32_t kMaxRecordBytes = 1u << 30;

void put_u32(char* p, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) p[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
}
void put_u64(char* p, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) p[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
}
std::uint32_t get_u32(const char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}
std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

bool valid_name(std::string_view name) {
  if (name.empty() || name.size() > 200 || name == "groups" || name == "." || name == "..") {
    return false;
  }
  return std::all_of(name.begin(), name.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
  });
}

std::string io_message(const std::string& what, const fs::path& p) {
  return what + " " + p.string() + ": " + std::strerror(errno);
}


std::string segment_name(std::uint64_t base) {
  return "segment-" + std::to_string(base) + ".log";
}

}  // namespace

std::uint32_t partition_for(std::string_view key, std::uint32_t partitions) {
  return static_cast<std::uint32_t>(fnv1a64(key) % partitions);
}

// ---------------------------------------------------------------------------

class Partition {
 public:
  Partition(std::string topic, std::uint32_t id, fs::path dir, const LogOptions& options,
            std::optional<std::uint64_t> retention)
      : topic_(std::move(topic)), id_(id), dir_(std::move(dir)), options_(options),
        retention_(retention) {
    fs::create_directories(dir_);
    recover();
  }

  ~Partition() {
    if (active_) {
      std::fflush(active_);
      std::fclose(active_);
    }
  }

  LogPosition append(std::string_view payload, std::int64_t event_time) {
    if (payload.size() > kMaxRecordBytes) throw LogIoError("record too large");
    std::lock_guard lock(mu_);
    if (segments_.back().size_bytes >= options_.segment_bytes &&
        segments_.back().record_count > 0) {
      roll();
    }
    Segment& seg = segments_.back();
    const std::uint64_t offset = next_offset_;
    char header[kRecordHeaderBytes];
    put_u32(header, static_cast<std::uint32_t>(payload.size()));
    put_u64(header + 4, offset);
    put_u64(header + 12, static_cast<std::uint64_t>(event_time));
    if (std::fwrite(header, 1, sizeof(header), active_) != sizeof(header) ||
        std::fwrite(payload.data(), 1, payload.size(), active_) != payload.size()) {
      throw LogIoError(io_message("append failed on", seg.path));
    }
    if ((offset - seg.base_offset) % options_.index_interval == 0) {
      seg.index.push_back({offset, seg.size_bytes});
    }
    seg.size_bytes += kRecordHeaderBytes + payload.size();
    ++seg.record_count;
    ++next_offset_;
    dirty_ = true;
    return LogPosition{topic_, id_, offset};
  }

  void flush() {
    std::lock_guard lock(mu_);
    if (!active_) return;
    if (std::fflush(active_) != 0 || ::fdatasync(fileno(active_)) != 0) {
      throw LogIoError(io_message("flush failed on", segments_.back().path));
    }
    dirty_ = false;
  }

  std::vector<PolledRecord> read(std::uint64_t from, std::size_t max) {
    std::lock_guard lock(mu_);
    std::vector<PolledRecord> out;
    if (max == 0) return out;
    from = std::max(from, segments_.front().base_offset);
    if (from >= next_offset_) return out;
    if (dirty_) {
      if (std::fflush(active_) != 0) {
        throw LogIoError(io_message("flush failed on", segments_.back().path));
      }
      dirty_ = false;
    }
    auto seg_it = std::upper_bound(segments_.begin(), segments_.end(), from,
                                   [](std::uint64_t o, const Segment& s) { return o < s.base_offset; });
    --seg_it;
    std::string header(kRecordHeaderBytes, '\0');
    for (; seg_it != segments_.end() && out.size() < max; ++seg_it) {
      const Segment& seg = *seg_it;
      if (seg.record_count == 0) continue;
      FILE* f = std::fopen(seg.path.c_str(), "rb");
      if (!f) throw LogIoError(io_message("cannot open", seg.path));
      auto entry = std::upper_bound(seg.index.begin(), seg.index.end(), from,
                                    [](std::uint64_t o, const IndexEntry& e) { return o < e.offset; });
      std::uint64_t pos = 0;
      if (entry != seg.index.begin()) pos = std::prev(entry)->position;
      std::fseek(f, static_cast<long>(pos), SEEK_SET);
      while (pos < seg.size_bytes && out.size() < max) {
        if (std::fread(header.data(), 1, kRecordHeaderBytes, f) != kRecordHeaderBytes) {
          std::fclose(f);
          throw LogIoError("short read in " + seg.path.string());
        }
        const std::uint32_t len = get_u32(header.data());
        const std::uint64_t offset = get_u64(header.data() + 4);
        pos += kRecordHeaderBytes + len;
        if (offset < from) {
          std::fseek(f, static_cast<long>(len), SEEK_CUR);
          continue;
        }
        PolledRecord rec;
        rec.position = LogPosition{topic_, id_, offset};
        rec.event_time = static_cast<std::int64_t>(get_u64(header.data() + 12));
        rec.payload.resize(len);
        if (len > 0 && std::fread(rec.payload.data(), 1, len, f) != len) {
          std::fclose(f);
          throw LogIoError("short read in " + seg.path.string());
        }
        out.push_back(std::move(rec));
      }
      std::fclose(f);
      from = seg.base_offset + seg.record_count;
    }
    return out;
  }

  std::uint64_t high_watermark() {
    std::lock_guard lock(mu_);
    return next_offset_;
  }

  std::uint64_t start_offset() {
    std::lock_guard lock(mu_);
    return segments_.front().base_offset;
  }

 private:
  struct IndexEntry {
    std::uint64_t offset;
    std::uint64_t position;
  };
  struct Segment {
    std::uint64_t base_offset = 0;
    fs::path path;
    std::uint64_t size_bytes = 0;
    std::uint64_t record_count = 0;
    std::vector<IndexEntry> index;
  };

  void recover() {
    std::vector<std::uint64_t> bases;
    for (const auto& entry : fs::directory_iterator(dir_)) {
      const auto name = entry.path().filename().string();
      if (name.starts_with("segment-") && name.ends_with(".log")) {
        bases.push_back(std::stoull(name.substr(8, name.size() - 12)));
      }
    }
    std::sort(bases.begin(), bases.end());
    if (bases.empty()) bases.push_back(0);
    for (std::size_t i = 0; i < bases.size(); ++i) {
      Segment seg;
      seg.base_offset = bases[i];
      seg.path = dir_ / segment_name(bases[i]);
      if (!segments_.empty() &&
          segments_.back().base_offset + segments_.back().record_count != seg.base_offset) {
        throw LogIoError("offset gap before segment " + seg.path.string());
      }
      scan_segment(seg, i + 1 == bases.size());
      segments_.push_back(std::move(seg));
    }
    const Segment& last = segments_.back();
    next_offset_ = last.base_offset + last.record_count;
    active_ = std::fopen(last.path.c_str(), "ab");
    if (!active_) throw LogIoError(io_message("cannot open", last.path));
  }

  // Rebuilds the sparse index. A torn record at the tail of the last
  // segment is truncated away; anywhere else it is corruption.
  void scan_segment(Segment& seg, bool is_last) {
    if (!fs::exists(seg.path)) return;
    const auto file_size = fs::file_size(seg.path);
    FILE* f = std::fopen(seg.path.c_str(), "rb");
    if (!f) throw LogIoError(io_message("cannot open", seg.path));
    char header[kRecordHeaderBytes];
    std::uint64_t pos = 0;
    while (pos < file_size) {
      bool ok = file_size - pos >= kRecordHeaderBytes &&
                std::fread(header, 1, kRecordHeaderBytes, f) == kRecordHeaderBytes;
      std::uint32_t len = 0;
      if (ok) {
        len = get_u32(header);
        ok = get_u64(header + 4) == seg.base_offset + seg.record_count &&
             len <= kMaxRecordBytes && file_size - pos - kRecordHeaderBytes >= len;
      }
      if (!ok) {
        std::fclose(f);
        if (!is_last) throw LogIoError("corrupt record in " + seg.path.string());
        fs::resize_file(seg.path, pos);
        seg.size_bytes = pos;
        return;
      }
      if (seg.record_count % options_.index_interval == 0) {
        seg.index.push_back({seg.base_offset + seg.record_count, pos});
      }
      std::fseek(f, static_cast<long>(len), SEEK_CUR);
      pos += kRecordHeaderBytes + len;
      ++seg.record_count;
    }
    seg.size_bytes = pos;
    std::fclose(f);
  }

  void roll() {
    if (std::fflush(active_) != 0 || ::fdatasync(fileno(active_)) != 0) {
      throw LogIoError(io_message("flush failed on", segments_.back().path));
    }
    std::fclose(active_);
    active_ = nullptr;
    Segment seg;
    seg.base_offset = next_offset_;
    seg.path = dir_ / segment_name(next_offset_);
    active_ = std::fopen(seg.path.c_str(), "ab");
    if (!active_) throw LogIoError(io_message("cannot create", seg.path));
    segments_.push_back(std::move(seg));
    dirty_ = false;
    enforce_retention();
  }

  void enforce_retention() {
    if (!retention_) return;
    std::uint64_t total = 0;
    for (const auto& s : segments_) total += s.size_bytes;
    while (segments_.size() > 1 && total > *retention_) {
      total -= segments_.front().size_bytes;
      fs::remove(segments_.front().path);
      segments_.erase(segments_.begin());
    }
  }

  const std::string topic_;
  const std::uint32_t id_;
  const fs::path dir_;
  const LogOptions options_;
  const std::optional<std::uint64_t> retention_;

  std::mutex mu_;
  std::vector<Segment> segments_;
  std::uint64_t next_offset_ = 0;
  FILE* active_ = nullptr;
  bool dirty_ = false;
};

// ---------------------------------------------------------------------------

MessageLog::MessageLog(const fs::path& data_dir, LogOptions options)
    : root_(data_dir / "mqlog"), options_(options) {
  if (options_.index_interval == 0) options_.index_interval = 1;
  fs::create_directories(root_ / "groups");
  for (const auto& entry : fs::directory_iterator(root_)) {
    if (!entry.is_directory() || !fs::exists(entry.path() / "topic.json")) continue;
    std::ifstream in(entry.path() / "topic.json");
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw LogIoError("corrupt topic metadata in " + entry.path().string());
    }
    auto topic = std::make_unique<Topic>();
    topic->info.name = j.at("name").get<std::string>();
    topic->info.partitions = j.at("partitions").get<std::uint32_t>();
    if (j.contains("retention_bytes") && !j["retention_bytes"].is_null()) {
      topic->info.retention_bytes = j["retention_bytes"].get<std::uint64_t>();
    }
    for (std::uint32_t p = 0; p < topic->info.partitions; ++p) {
      topic->partitions.push_back(std::make_unique<Partition>(
          topic->info.name, p, entry.path() / std::to_string(p), options_,
          topic->info.retention_bytes));
    }
    topics_.emplace(topic->info.name, std::move(topic));
  }
  load_groups();
}

MessageLog::~MessageLog() {
  try {
    flush();
  } catch (...) {
  }
}

TopicInfo MessageLog::create_topic(const std::string& name, std::uint32_t partitions,
                                   std::optional<std::uint64_t> retention_bytes) {
  if (!valid_name(name)) throw Error("invalid topic name: '" + name + "'");
  if (partitions < 1) throw Error("topic needs at least one partition");
  std::unique_lock lock(topics_mu_);
  if (topics_.contains(name)) throw TopicExists("topic already exists: " + name);
  const fs::path dir = root_ / name;
  fs::create_directories(dir);
  auto topic = std::make_unique<Topic>();
  topic->info = TopicInfo{name, partitions, retention_bytes};
  for (std::uint32_t p = 0; p < partitions; ++p) {
    topic->partitions.push_back(std::make_unique<Partition>(
        name, p, dir / std::to_string(p), options_, retention_bytes));
  }
  json j = {{"name", name}, {"partitions", partitions}};
  j["retention_bytes"] = retention_bytes ? json(*retention_bytes) : json(nullptr);
  write_file_atomically<LogIoError>(dir / "topic.json", j.dump(2) + "\n");
  TopicInfo info = topic->info;
  topics_.emplace(name, std::move(topic));
  return info;
}

TopicInfo MessageLog::ensure_topic(const std::string& name, std::uint32_t partitions) {
  {
    std::shared_lock lock(topics_mu_);
    if (auto it = topics_.find(name); it != topics_.end()) return it->second->info;
  }
  try {
    return create_topic(name, partitions);
  } catch (const TopicExists&) {
    return topic(name);
  }
}

bool MessageLog::has_topic(const std::string& name) const {
  std::shared_lock lock(topics_mu_);
  return topics_.contains(name);
}

TopicInfo MessageLog::topic(const std::string& name) const { return find_topic(name).info; }

std::vector<TopicInfo> MessageLog::list_topics() const {
  std::shared_lock lock(topics_mu_);
  std::vector<TopicInfo> out;
  for (const auto& [_, t] : topics_) out.push_back(t->info);
  return out;
}

MessageLog::Topic& MessageLog::find_topic(const std::string& name) const {
  std::shared_lock lock(topics_mu_);
  auto it = topics_.find(name);
  if (it == topics_.end()) throw UnknownTopic("unknown topic: " + name);
  return *it->second;
}

Partition& MessageLog::find_partition(const std::string& topic, std::uint32_t partition) const {
  Topic& t = find_topic(topic);
  if (partition >= t.partitions.size()) {
    throw Error("partition " + std::to_string(partition) + " out of range for " + topic);
  }
  return *t.partitions[partition];
}

LogPosition MessageLog::append(const std::string& topic, std::string_view key,
                               std::string_view payload, std::int64_t event_time) {
  Topic& t = find_topic(topic);
  const auto p = partition_for(key, t.info.partitions);
  return t.partitions[p]->append(payload, event_time);
}

void MessageLog::flush() {
  std::shared_lock lock(topics_mu_);
  for (auto& [_, t] : topics_) {
    for (auto& p : t->partitions) p->flush();
  }
}

void MessageLog::flush(const std::string& topic) {
  for (auto& p : find_topic(topic).partitions) p->flush();
}

std::vector<PolledRecord> MessageLog::poll(const std::string& group, const std::string& topic,
                                           std::size_t max_records) {
  Topic& t = find_topic(topic);
  const auto n = t.info.partitions;
  std::vector<std::vector<PolledRecord>> per_partition(n);
  for (std::uint32_t p = 0; p < n; ++p) {
    per_partition[p] = t.partitions[p]->read(committed(group, topic, p), max_records);
  }
  std::vector<PolledRecord> out;
  std::vector<std::size_t> cursor(n, 0);
  bool progressed = true;
  while (out.size() < max_records && progressed) {
    progressed = false;
    for (std::uint32_t p = 0; p < n && out.size() < max_records; ++p) {
      if (cursor[p] < per_partition[p].size()) {
        out.push_back(std::move(per_partition[p][cursor[p]++]));
        progressed = true;
      }
    }
  }
  return out;
}

void MessageLog::commit(const std::string& group, const std::vector<LogPosition>& positions) {
  if (!valid_name(group)) throw Error("invalid group id: '" + group + "'");
  std::map<std::string, std::map<std::uint32_t, std::uint64_t>> next;
  for (const auto& pos : positions) {
    Partition& part = find_partition(pos.topic, pos.partition);
    const auto hw = part.high_watermark();
    if (pos.offset >= hw) {
      throw InvalidCommit("commit of offset " + std::to_string(pos.offset) + " on " +
                          pos.topic + "/" + std::to_string(pos.partition) +
                          " is beyond high watermark " + std::to_string(hw));
    }
    auto& slot = next[pos.topic][pos.partition];
    slot = std::max(slot, pos.offset + 1);
  }
  std::lock_guard lock(groups_mu_);
  GroupOffsets updated = groups_[group];
  for (const auto& [topic, parts] : next) {
    for (const auto& [p, off] : parts) updated[topic][p] = off;
  }
  persist_group(group, updated);
  groups_[group] = std::move(updated);
}

std::vector<PolledRecord> MessageLog::read(const std::string& topic, std::uint32_t partition,
                                           std::uint64_t from_offset,
                                           std::size_t max_records) const {
  return find_partition(topic, partition).read(from_offset, max_records);
}

std::uint64_t MessageLog::committed(const std::string& group, const std::string& topic,
                                    std::uint32_t partition) const {
  std::lock_guard lock(groups_mu_);
  auto g = groups_.find(group);
  if (g == groups_.end()) return 0;
  auto t = g->second.find(topic);
  if (t == g->second.end()) return 0;
  auto p = t->second.find(partition);
  return p == t->second.end() ? 0 : p->second;
}

std::uint64_t MessageLog::high_watermark(const std::string& topic, std::uint32_t partition) const {
  return find_partition(topic, partition).high_watermark();
}

std::uint64_t MessageLog::log_start_offset(const std::string& topic,
                                           std::uint32_t partition) const {
  return find_partition(topic, partition).start_offset();
}

std::uint64_t MessageLog::lag(const std::string& group, const std::string& topic) const {
  const Topic& t = find_topic(topic);
  std::uint64_t total = 0;
  for (std::uint32_t p = 0; p < t.info.partitions; ++p) {
    const auto hw = t.partitions[p]->high_watermark();
    const auto from = std::max(committed(group, topic, p), t.partitions[p]->start_offset());
    total += hw > from ? hw - from : 0;
  }
  return total;
}

void MessageLog::load_groups() {
  for (const auto& entry : fs::directory_iterator(root_ / "groups")) {
    if (entry.path().extension() != ".json") continue;
    std::ifstream in(entry.path());
    try {
      const auto j = json::parse(in);
      GroupOffsets offsets;
      for (const auto& [topic, parts] : j.at("offsets").items()) {
        for (const auto& [p, off] : parts.items()) {
          offsets[topic][static_cast<std::uint32_t>(std::stoul(p))] = off.get<std::uint64_t>();
        }
      }
      groups_[j.at("group_id").get<std::string>()] = std::move(offsets);
    } catch (const std::exception& e) {
      throw LogIoError("corrupt group file " + entry.path().string() + ": " + e.what());
    }
  }
}

void MessageLog::persist_group(const std::string& group, const GroupOffsets& offsets) const {
  json j;
  j["group_id"] = group;
  j["offsets"] = json::object();
  for (const auto& [topic, parts] : offsets) {
    for (const auto& [p, off] : parts) j["offsets"][topic][std::to_string(p)] = off;
  }
  write_file_atomically<LogIoError>(root_ / "groups" / (group + ".json"), j.dump(2) + "\n");
}

}  // namespace mlsa::mqlog
