#include "mlsa/ingest.h"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstring>
#include <thread>

#include "mlsa/errors.h"
#include "mlsa/hash.h"

namespace mlsa::ingest {

using nlohmann::json;

namespace {

bool is_blank(std::string_view s) {
  for (char c : s) {
    if (!std::isspace(static_cast<unsigned char>(c))) return false;
  }
  return true;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

std::optional<std::int64_t> timestamp_of(const json& j) {
  auto it = j.find("timestamp");
  if (it == j.end() || !it->is_number_integer()) return std::nullopt;
  return it->get<std::int64_t>();
}

std::int64_t file_mtime_millis(const std::filesystem::path& path) {
  auto t = std::filesystem::last_write_time(path);
  auto sys = std::chrono::file_clock::to_sys(t);
  return std::chrono::duration_cast<std::chrono::milliseconds>(sys.time_since_epoch()).count();
}

}  // namespace

ReplaySource::ReplaySource(const std::filesystem::path& path, double speedup,
                           SleepUntil sleep_until)
    : source_id_("replay:" + path.string()), speedup_(speedup),
      sleep_until_(std::move(sleep_until)) {
  if (!(speedup > 0)) throw SourceError("replay speedup must be > 0");
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    throw SourceError("cannot open replay file: " + path.string());
  }
  in_.open(path, std::ios::binary);
  if (!in_) throw SourceError("cannot open replay file: " + path.string());
  last_arrival_ = file_mtime_millis(path);
  if (!sleep_until_) {
    sleep_until_ = [](std::chrono::steady_clock::time_point t) {
      std::this_thread::sleep_until(t);
    };
  }
}

std::optional<RawRecord> ReplaySource::next() {
  std::string line;
  while (std::getline(in_, line)) {
    strip_cr(line);
    if (is_blank(line)) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      ++malformed_;
      continue;
    }
    auto ts = timestamp_of(j);
    if (ts) {
      if (!first_timestamp_) {
        first_timestamp_ = *ts;
        start_ = std::chrono::steady_clock::now();
      } else if (std::isfinite(speedup_)) {
        double gap_ms = static_cast<double>(*ts - *first_timestamp_) / speedup_;
        if (gap_ms > 0) {
          ++sleeps_;
          sleep_until_(start_ + std::chrono::microseconds(
                                    static_cast<std::int64_t>(gap_ms * 1000.0)));
        }
      }
      last_arrival_ = std::max(last_arrival_, *ts);
    }
    return RawRecord{source_id_, last_arrival_, std::move(line)};
  }
  if (in_.bad()) throw SourceError("read failed on " + source_id_);
  return std::nullopt;
}

TcpLineSource::TcpLineSource(std::uint16_t port, std::string bind_address) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw SourceError(std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, bind_address.c_str(), &addr.sin_addr) != 1) {
    ::close(listen_fd_);
    throw SourceError("bad bind address: " + bind_address);
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
      ::listen(listen_fd_, 1) != 0) {
    std::string msg = std::strerror(errno);
    ::close(listen_fd_);
    throw SourceError("cannot listen on port " + std::to_string(port) + ": " + msg);
  }
  socklen_t len = sizeof(addr);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpLineSource::~TcpLineSource() {
  if (conn_fd_ >= 0) ::close(conn_fd_);
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

bool TcpLineSource::wait_readable(int fd) {
  pollfd p{fd, POLLIN, 0};
  while (!stopped_) {
    int rc = ::poll(&p, 1, 100);
    if (rc > 0) return true;
    if (rc < 0 && errno != EINTR) throw SourceError(std::string("poll: ") + std::strerror(errno));
  }
  return false;
}

std::optional<std::string> TcpLineSource::read_line() {
  for (;;) {
    auto nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return line;
    }
    if (eof_) {
      if (buffer_.empty()) return std::nullopt;
      std::string line = std::move(buffer_);
      buffer_.clear();
      return line;
    }
    if (conn_fd_ < 0) {
      if (!wait_readable(listen_fd_)) return std::nullopt;
      conn_fd_ = ::accept(listen_fd_, nullptr, nullptr);
      if (conn_fd_ < 0) throw SourceError(std::string("accept: ") + std::strerror(errno));
    }
    if (!wait_readable(conn_fd_)) return std::nullopt;
    char chunk[65536];
    ssize_t n = ::read(conn_fd_, chunk, sizeof(chunk));
    if (n < 0) {
      if (errno == EINTR) continue;
      throw SourceError(std::string("read: ") + std::strerror(errno));
    }
    if (n == 0) {
      eof_ = true;
    } else {
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }
}

std::optional<RawRecord> TcpLineSource::next() {
  while (auto line = read_line()) {
    strip_cr(*line);
    if (is_blank(*line)) continue;
    json j = json::parse(*line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      ++malformed_;
      continue;
    }
    last_arrival_ = std::max(last_arrival_, now_millis());
    return RawRecord{"tcp:" + std::to_string(port_), last_arrival_, std::move(*line)};
  }
  return std::nullopt;
}

RecordEnvelope extract(const RawRecord& raw) {
  json j = json::parse(raw.payload, nullptr, false);
  if (j.is_discarded()) throw ExtractionError("payload is not valid JSON");
  if (!j.is_object()) throw ExtractionError("payload is not a JSON object");

  RecordEnvelope env;
  auto id = j.find("id");
  if (id == j.end() || id->is_null()) {
    env.doc_id = to_hex(fnv1a64(raw.payload));
  } else if (id->is_string()) {
    env.doc_id = id->get<std::string>();
  } else if (id->is_number_integer()) {
    env.doc_id = id->dump();
  } else {
    throw ExtractionError("field 'id' must be a string or integer");
  }
  if (env.doc_id.empty()) throw ExtractionError("field 'id' is empty");

  auto ts = j.find("timestamp");
  if (ts == j.end() || ts->is_null()) {
    env.event_time = raw.arrival_time;
  } else if (ts->is_number_integer()) {
    env.event_time = ts->get<std::int64_t>();
  } else {
    throw ExtractionError("field 'timestamp' must be an integer");
  }
  if (env.event_time <= 0) throw ExtractionError("event time must be positive");

  auto text = j.find("text");
  if (text != j.end() && !text->is_null() && !text->is_string()) {
    throw ExtractionError("field 'text' must be a string");
  }
  if (text == j.end() || text->is_null() || is_blank(text->get_ref<const std::string&>())) {
    throw EmptyTextError("record " + env.doc_id + " has no text");
  }
  env.text = text->get<std::string>();

  auto user = j.find("user");
  if (user != j.end()) {
    if (user->is_string()) {
      env.author = user->get<std::string>();
    } else if (user->is_object() && user->contains("screen_name") &&
               (*user)["screen_name"].is_string()) {
      env.author = (*user)["screen_name"].get<std::string>();
    } else if (!user->is_null()) {
      throw ExtractionError("field 'user' must be a string");
    }
  }

  auto label = j.find("label");
  if (label != j.end() && !label->is_null()) {
    std::optional<Sentiment> s;
    if (label->is_string()) s = parse_sentiment(label->get_ref<const std::string&>());
    if (!s) throw ExtractionError("field 'label' must be \"positive\" or \"negative\"");
    env.label = s;
  }
  env.raw = raw.payload;
  return env;
}

std::string normalize_for_fingerprint(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    auto u = static_cast<unsigned char>(c);
    if (std::isspace(u)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::tolower(u)));
  }
  return out;
}

std::uint64_t fingerprint(std::string_view text) {
  return fnv1a64(normalize_for_fingerprint(text));
}

DedupFilter::DedupFilter(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("dedup capacity must be >= 1");
}

DedupVerdict DedupFilter::check(std::string_view text) {
  std::uint64_t fp = fingerprint(text);
  if (seen_.count(fp)) return DedupVerdict::kDrop;
  if (seen_.size() == capacity_) {
    seen_.erase(order_.front());
    order_.pop_front();
    ++evictions_;
  }
  seen_.insert(fp);
  order_.push_back(fp);
  return DedupVerdict::kKeep;
}

IngestCounters& IngestCounters::operator+=(const IngestCounters& o) {
  records_in += o.records_in;
  envelopes_out += o.envelopes_out;
  parse_skipped += o.parse_skipped;
  empty_dropped += o.empty_dropped;
  dup_dropped += o.dup_dropped;
  noise_dropped += o.noise_dropped;
  return *this;
}

IngestPipeline::IngestPipeline(std::size_t dedup_capacity) : dedup_(dedup_capacity) {}

std::optional<RecordEnvelope> IngestPipeline::process(const RawRecord& raw) {
  ++counters_.records_in;
  RecordEnvelope env;
  try {
    env = extract(raw);
  } catch (const EmptyTextError&) {
    ++counters_.empty_dropped;
    return std::nullopt;
  } catch (const ExtractionError&) {
    ++counters_.parse_skipped;
    return std::nullopt;
  }
  if (!noise_.accept(env)) {
    ++counters_.noise_dropped;
    return std::nullopt;
  }
  if (dedup_.check(env) == DedupVerdict::kDrop) {
    ++counters_.dup_dropped;
    return std::nullopt;
  }
  ++counters_.envelopes_out;
  return env;
}

IngestCounters IngestPipeline::run(RecordSource& source,
                                   const std::function<void(RecordEnvelope&&)>& sink) {
  std::uint64_t malformed_before = source.malformed_skipped();
  while (auto raw = source.next()) {
    if (auto env = process(*raw)) sink(std::move(*env));
  }
  std::uint64_t malformed = source.malformed_skipped() - malformed_before;
  counters_.records_in += malformed;
  counters_.parse_skipped += malformed;
  return counters_;
}

}  // namespace mlsa::ingest
