#include "mlsa/archive.h"

#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <regex>

#include "mlsa/errors.h"
#include "mlsa/fileio.h"

namespace mlsa::archive {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path manifest_path(const fs::path& dir, std::uint64_t id) {
  return dir / ("segment-" + std::to_string(id) + ".manifest.json");
}

json manifest_json(const SegmentMeta& m) {
  return json{{"min_time", m.min_time},         {"max_time", m.max_time},
              {"record_count", m.record_count}, {"sealed", m.sealed},
              {"bytes", m.bytes},               {"compressed", m.compressed}};
}

void widen(SegmentMeta& m, std::int64_t t) {
  if (m.record_count == 0) {
    m.min_time = m.max_time = t;
  } else {
    m.min_time = std::min(m.min_time, t);
    m.max_time = std::max(m.max_time, t);
  }
}

std::string errno_text() { return std::strerror(errno); }

}  // namespace

bool read_segment_lines(const fs::path& path, std::uint64_t max_lines,
                        const std::function<void(std::string&&)>& on_line) {
  gzFile g = gzopen(path.c_str(), "rb");
  if (!g) return false;
  gzbuffer(g, 1 << 17);
  std::string line;
  char buf[1 << 16];
  std::uint64_t lines = 0;
  while (lines < max_lines) {
    char* got = gzgets(g, buf, sizeof(buf));
    if (!got) break;  // EOF, or a truncated gzip tail
    std::size_t n = std::strlen(buf);
    line.append(buf, n);
    if (n > 0 && buf[n - 1] == '\n') {
      line.pop_back();
      ++lines;
      on_line(std::move(line));
      line.clear();
    }
  }
  // A final line without '\n' is a write still in progress; ignore it.
  gzclose(g);
  return true;
}

Archive::Archive(const fs::path& data_dir, ArchiveOptions opts)
    : dir_(data_dir / "archive"), opts_(opts) {
  if (opts_.segment_bytes == 0 || opts_.segment_span_ms <= 0) {
    throw ArchiveError("archive segment limits must be positive");
  }
  std::error_code ec;
  if (!opts_.read_only) {
    fs::create_directories(dir_, ec);
    if (ec) throw ArchiveError("cannot create " + dir_.string() + ": " + ec.message());
  }
  load();
}

Archive::~Archive() {
  try {
    std::lock_guard lock(mu_);
    if (!opts_.read_only && !segments_.empty()) {
      close_writer();
      write_manifest(segments_.back().meta);
    }
  } catch (const std::exception&) {
  }
}

fs::path Archive::segment_path(std::uint64_t id, bool compressed) const {
  return dir_ / ("segment-" + std::to_string(id) + (compressed ? ".jsonl.gz" : ".jsonl"));
}

void Archive::load() {
  std::error_code ec;
  if (!fs::is_directory(dir_, ec)) return;
  static const std::regex kName(R"(segment-(\d+)\.jsonl(\.gz)?)");
  std::vector<std::pair<std::uint64_t, bool>> found;
  for (const auto& entry : fs::directory_iterator(dir_)) {
    std::smatch m;
    std::string name = entry.path().filename().string();
    if (std::regex_match(name, m, kName)) {
      found.emplace_back(std::stoull(m[1].str()), m[2].matched);
    }
  }
  std::sort(found.begin(), found.end());
  for (std::size_t i = 0; i < found.size(); ++i) {
    Segment seg;
    seg.meta.id = found[i].first;
    seg.meta.compressed = found[i].second;
    seg.meta.path = segment_path(seg.meta.id, seg.meta.compressed);
    bool have_manifest = false;
    std::ifstream in(manifest_path(dir_, seg.meta.id));
    if (in) {
      json j = json::parse(in, nullptr, false);
      if (!j.is_discarded() && j.is_object()) {
        try {
          seg.meta.min_time = j.at("min_time").get<std::int64_t>();
          seg.meta.max_time = j.at("max_time").get<std::int64_t>();
          seg.meta.record_count = j.at("record_count").get<std::uint64_t>();
          seg.meta.sealed = j.at("sealed").get<bool>();
          seg.meta.bytes = j.value("bytes", std::uint64_t{0});
          have_manifest = true;
        } catch (const json::exception&) {
        }
      }
    }
    bool last = i + 1 == found.size();
    if (opts_.read_only) {
      seg.maybe_stale = !have_manifest || !seg.meta.sealed;
      seg.visible_records = seg.maybe_stale ? UINT64_MAX : seg.meta.record_count;
    } else if (!have_manifest || !seg.meta.sealed) {
      recover_active(seg);
      if (!last) {
        seg.meta.sealed = true;
        write_manifest(seg.meta);
      }
    } else {
      seg.visible_records = seg.meta.record_count;
    }
    segments_.push_back(std::move(seg));
  }
  if (!opts_.read_only && !segments_.empty() && !segments_.back().meta.sealed) {
    open_writer(segments_.back());
  }
}

// Rebuilds metadata from the segment body and cuts off a torn final record.
void Archive::recover_active(Segment& seg) {
  SegmentMeta rebuilt = seg.meta;
  rebuilt.record_count = 0;
  rebuilt.bytes = 0;
  rebuilt.sealed = false;
  std::string body;
  SegmentMeta times;
  read_segment_lines(seg.meta.path, UINT64_MAX, [&](std::string&& line) {
    try {
      widen(times, parse_envelope(line).event_time);
      ++times.record_count;
    } catch (const Error&) {
      ++corrupt_records_;
    }
    ++rebuilt.record_count;
    rebuilt.bytes += line.size() + 1;
    body += line;
    body += '\n';
  });
  if (seg.meta.compressed) {
    // Recompress so the body is a clean gzip stream again.
    fs::path tmp = seg.meta.path.string() + ".tmp";
    gzFile g = gzopen(tmp.c_str(), "wb");
    if (!g) throw ArchiveError("cannot rewrite " + tmp.string());
    bool ok = body.empty() ||
              gzwrite(g, body.data(), static_cast<unsigned>(body.size())) ==
                  static_cast<int>(body.size());
    ok = gzclose(g) == Z_OK && ok;
    if (!ok) throw ArchiveError("cannot rewrite " + tmp.string());
    fs::rename(tmp, seg.meta.path);
  } else {
    std::error_code ec;
    if (fs::file_size(seg.meta.path, ec) != rebuilt.bytes && !ec) {
      fs::resize_file(seg.meta.path, rebuilt.bytes, ec);
      if (ec) throw ArchiveError("cannot truncate " + seg.meta.path.string());
    }
  }
  rebuilt.min_time = times.min_time;
  rebuilt.max_time = times.max_time;
  seg.meta = rebuilt;
  seg.visible_records = rebuilt.record_count;
  write_manifest(seg.meta);
}

void Archive::write_manifest(const SegmentMeta& meta) const {
  write_file_atomically<ArchiveError>(manifest_path(dir_, meta.id),
                                      manifest_json(meta).dump(2) + "\n");
}

void Archive::open_writer(Segment& seg) {
  if (seg.meta.compressed) {
    gz_ = gzopen(seg.meta.path.c_str(), "ab");
    if (!gz_) throw ArchiveError("cannot open " + seg.meta.path.string());
  } else {
    plain_ = std::fopen(seg.meta.path.c_str(), "ab");
    if (!plain_) throw ArchiveError("cannot open " + seg.meta.path.string() + ": " + errno_text());
  }
}

void Archive::close_writer() {
  if (plain_) {
    std::fclose(plain_);
    plain_ = nullptr;
  }
  if (gz_) {
    gzclose(static_cast<gzFile>(gz_));
    gz_ = nullptr;
  }
}

void Archive::open_new_segment() {
  Segment seg;
  seg.meta.id = segments_.empty() ? 0 : segments_.back().meta.id + 1;
  seg.meta.compressed = opts_.compress;
  seg.meta.path = segment_path(seg.meta.id, seg.meta.compressed);
  open_writer(seg);
  write_manifest(seg.meta);
  segments_.push_back(std::move(seg));
}

ArchivePosition Archive::append(const RecordEnvelope& env) {
  if (opts_.read_only) throw ArchiveError("archive opened read-only");
  std::string line = serialize(env);
  line += '\n';
  std::lock_guard lock(mu_);
  if (!segments_.empty() && !segments_.back().meta.sealed) {
    const SegmentMeta& m = segments_.back().meta;
    bool too_big = m.bytes + line.size() > opts_.segment_bytes;
    bool too_long = std::max(m.max_time, env.event_time) - std::min(m.min_time, env.event_time) >
                    opts_.segment_span_ms;
    if (m.record_count > 0 && (too_big || too_long)) seal_locked();
  }
  if (segments_.empty() || segments_.back().meta.sealed) open_new_segment();

  Segment& seg = segments_.back();
  if (gz_) {
    int n = gzwrite(static_cast<gzFile>(gz_), line.data(), static_cast<unsigned>(line.size()));
    if (n != static_cast<int>(line.size())) {
      throw ArchiveError("gzip write failed on " + seg.meta.path.string());
    }
  } else {
    if (std::fwrite(line.data(), 1, line.size(), plain_) != line.size() ||
        std::fflush(plain_) != 0) {
      std::string msg = errno_text();
      // Drop any partial bytes so the segment stays whole-record.
      std::fclose(plain_);
      plain_ = nullptr;
      std::error_code ec;
      fs::resize_file(seg.meta.path, seg.meta.bytes, ec);
      open_writer(seg);
      throw ArchiveError("write failed on " + seg.meta.path.string() + ": " + msg);
    }
  }
  widen(seg.meta, env.event_time);
  ArchivePosition pos{seg.meta.id, seg.meta.record_count};
  ++seg.meta.record_count;
  seg.meta.bytes += line.size();
  if (plain_) seg.visible_records = seg.meta.record_count;
  return pos;
}

void Archive::flush() {
  if (opts_.read_only) return;
  std::lock_guard lock(mu_);
  if (segments_.empty() || segments_.back().meta.sealed) return;
  Segment& seg = segments_.back();
  if (gz_ && gzflush(static_cast<gzFile>(gz_), Z_SYNC_FLUSH) != Z_OK) {
    throw ArchiveError("gzip flush failed on " + seg.meta.path.string());
  }
  if (plain_ && ::fdatasync(fileno(plain_)) != 0) {
    throw ArchiveError("fdatasync failed on " + seg.meta.path.string() + ": " + errno_text());
  }
  seg.visible_records = seg.meta.record_count;
  write_manifest(seg.meta);
}

void Archive::seal() {
  if (opts_.read_only) return;
  std::lock_guard lock(mu_);
  if (!segments_.empty() && !segments_.back().meta.sealed && segments_.back().meta.record_count) {
    seal_locked();
  }
}

void Archive::seal_locked() {
  Segment& seg = segments_.back();
  close_writer();
  seg.meta.sealed = true;
  seg.visible_records = seg.meta.record_count;
  write_manifest(seg.meta);
}

void Archive::scan(std::int64_t start, std::int64_t end, const std::optional<std::string>& contains,
                   const Visitor& visit) const {
  if (start > end) throw QueryError("scan range start > end");
  std::vector<Segment> snapshot;
  {
    std::lock_guard lock(mu_);
    snapshot = segments_;
  }
  for (const Segment& seg : snapshot) {
    if (seg.visible_records == 0) continue;
    if (!seg.maybe_stale && (seg.meta.max_time < start || seg.meta.min_time > end)) continue;
    ++segment_opens_;
    bool opened = read_segment_lines(seg.meta.path, seg.visible_records, [&](std::string&& line) {
      RecordEnvelope env;
      try {
        env = parse_envelope(line);
      } catch (const Error&) {
        ++corrupt_records_;
        return;
      }
      if (env.event_time < start || env.event_time > end) return;
      if (contains && env.text.find(*contains) == std::string::npos) return;
      visit(std::move(env));
    });
    if (!opened) throw ArchiveError("cannot open " + seg.meta.path.string());
  }
}

std::vector<RecordEnvelope> Archive::scan(std::int64_t start, std::int64_t end,
                                          const std::optional<std::string>& contains) const {
  std::vector<RecordEnvelope> out;
  scan(start, end, contains, [&](RecordEnvelope&& e) { out.push_back(std::move(e)); });
  return out;
}

std::vector<SegmentMeta> Archive::segments() const {
  std::lock_guard lock(mu_);
  std::vector<SegmentMeta> out;
  for (const auto& s : segments_) out.push_back(s.meta);
  return out;
}

std::uint64_t Archive::record_count() const {
  std::lock_guard lock(mu_);
  std::uint64_t n = 0;
  for (const auto& s : segments_) n += s.meta.record_count;
  return n;
}

}  // namespace mlsa::archive
