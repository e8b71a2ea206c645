#include "mlsa/http_api.h"

#include <charconv>

#include <httplib.h>

#include "mlsa/errors.h"

namespace mlsa::app {

using nlohmann::ordered_json;

namespace {

HttpResult error(int status, const std::string& message) {
  return {status, ordered_json{{"error", message}}.dump(2) + "\n"};
}

struct BadRequest : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::optional<std::string> single(const QueryParams& params, const std::string& name) {
  auto [lo, hi] = params.equal_range(name);
  if (lo == hi) return std::nullopt;
  if (std::next(lo) != hi) throw BadRequest("parameter '" + name + "' given more than once");
  return lo->second;
}

std::optional<std::int64_t> int_param(const QueryParams& params, const std::string& name) {
  auto s = single(params, name);
  if (!s) return std::nullopt;
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s->data(), s->data() + s->size(), v);
  if (s->empty() || ec != std::errc() || ptr != s->data() + s->size()) {
    throw BadRequest("parameter '" + name + "' must be an integer");
  }
  return v;
}

void allow_only(const QueryParams& params, std::initializer_list<const char*> names) {
  for (const auto& [k, v] : params) {
    bool known = false;
    for (const char* n : names) known = known || k == n;
    if (!known) throw BadRequest("unknown parameter '" + k + "'");
  }
}

bool blank(const std::string& s) {
  return s.find_first_not_of(" \t\r\n") == std::string::npos;
}

}  // namespace

HttpResult handle_get(Pipeline& pipeline, const std::string& path, const QueryParams& params) {
  try {
    if (path == "/search") {
      allow_only(params, {"q", "label", "k"});
      auto q = single(params, "q");
      if (!q || blank(*q)) throw BadRequest("parameter 'q' is required");
      std::optional<Sentiment> label;
      if (auto l = single(params, "label")) {
        label = parse_sentiment(*l);
        if (!label) throw BadRequest("parameter 'label' must be positive or negative");
      }
      const std::int64_t k = int_param(params, "k").value_or(10);
      if (k < 1 || k > 10000) throw BadRequest("parameter 'k' must be in [1, 10000]");
      return {200, pipeline.search_json(*q, label, static_cast<std::size_t>(k)).dump(2) + "\n"};
    }
    if (path == "/reports/counts") {
      allow_only(params, {});
      return {200, pipeline.counts_json()};
    }
    if (path == "/reports/timeline") {
      allow_only(params, {"window", "from", "to"});
      const std::int64_t window = int_param(params, "window").value_or(60000);
      if (window <= 0) throw BadRequest("parameter 'window' must be positive");
      auto from = int_param(params, "from");
      auto to = int_param(params, "to");
      if (from && to && *from > *to) throw BadRequest("'from' must not exceed 'to'");
      return {200, pipeline.timeline_json(window, from, to)};
    }
    return error(404, "no such endpoint: " + path);
  } catch (const BadRequest& e) {
    return error(400, e.what());
  } catch (const QueryError& e) {
    return error(400, e.what());
  } catch (const std::exception& e) {
    return error(500, e.what());
  }
}

HttpServer::HttpServer(Pipeline& pipeline)
    : pipeline_(pipeline), server_(std::make_unique<httplib::Server>()) {
  auto get = [this](const httplib::Request& req, httplib::Response& res) {
    QueryParams params(req.params.begin(), req.params.end());
    HttpResult r = handle_get(pipeline_, req.path, params);
    res.status = r.status;
    res.set_content(r.body, "application/json; charset=utf-8");
  };
  auto refuse = [](const httplib::Request&, httplib::Response& res) {
    HttpResult r = error(405, "endpoint is read-only");
    res.status = r.status;
    res.set_header("Allow", "GET");
    res.set_content(r.body, "application/json; charset=utf-8");
  };
  // Small JSON replies on keep-alive connections stall on delayed ACKs otherwise.
  server_->set_tcp_nodelay(true);
  server_->Get(".*", get);
  server_->Post(".*", refuse);
  server_->Put(".*", refuse);
  server_->Delete(".*", refuse);
  server_->Patch(".*", refuse);
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw SourceError("cannot bind HTTP endpoint on " + host + ":" + std::to_string(port));
  return bound;
}

void HttpServer::listen() { server_->listen_after_bind(); }

void HttpServer::stop() {
  if (server_) server_->stop();
}

}  // namespace mlsa::app
