#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>

#include "mlsa/pipeline.h"

namespace httplib {
class Server;
}

namespace mlsa::app {

struct HttpResult {
  int status = 200;
  std::string body;
};

using QueryParams = std::multimap<std::string, std::string>;

// Routes a GET request. Bad parameters give 400, unknown paths 404; bodies
// are JSON.
HttpResult handle_get(Pipeline& pipeline, const std::string& path, const QueryParams& params);

// Read-only JSON endpoint over a pipeline.
class HttpServer {
 public:
  explicit HttpServer(Pipeline& pipeline);
  ~HttpServer();

  // Binds host:port (0 picks a free port); returns the bound port.
  int bind(const std::string& host, int port);
  // Serves until stop(); call after bind().
  void listen();
  void stop();

 private:
  Pipeline& pipeline_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace mlsa::app
