#include "mlsa/http_api.h"

#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>

#include "mlsa/pipeline.h"
#include "test_util.h"

namespace mlsa::app {
namespace {

using mlsa::testing::TempDir;
using mlsa::testing::write_file;

struct Fixture {
  TempDir dir;
  std::unique_ptr<Pipeline> p;

  Fixture() {
    std::string lines;
    const char* texts[] = {"good movie", "bad movie", "good good day", "rainy day", "good food"};
    for (int i = 0; i < 5; ++i) {
      lines += nlohmann::json{{"id", "d" + std::to_string(i)},
                              {"timestamp", 1000 + i * 1000},
                              {"text", texts[i]},
                              {"label", i % 2 ? "negative" : "positive"}}
                   .dump() +
               "\n";
    }
    write_file(dir / "in.jsonl", lines);
    PipelineConfig cfg;
    cfg.data_dir = dir / "data";
    p = std::make_unique<Pipeline>(cfg);
    ingest::ReplaySource src(dir / "in.jsonl", std::numeric_limits<double>::infinity());
    p->ingest(src);
  }
};

TEST(HandleGet, Search) {
  Fixture f;
  auto r = handle_get(*f.p, "/search", {{"q", "good"}, {"k", "2"}});
  ASSERT_EQ(r.status, 200) << r.body;
  auto j = nlohmann::json::parse(r.body);
  ASSERT_EQ(j["hits"].size(), 2u);
  EXPECT_GE(j["hits"][0]["score"].get<double>(), j["hits"][1]["score"].get<double>());

  r = handle_get(*f.p, "/search", {{"q", "movie"}, {"label", "negative"}});
  ASSERT_EQ(r.status, 200);
  j = nlohmann::json::parse(r.body);
  ASSERT_EQ(j["hits"].size(), 1u);
  EXPECT_EQ(j["hits"][0]["doc_id"], "d1");
}

TEST(HandleGet, BadParametersAre400) {
  Fixture f;
  const std::vector<QueryParams> bad = {
      {},
      {{"q", ""}},
      {{"q", "  "}},
      {{"q", "good"}, {"k", "0"}},
      {{"q", "good"}, {"k", "abc"}},
      {{"q", "good"}, {"k", "10001"}},
      {{"q", "good"}, {"label", "neutral"}},
      {{"q", "good"}, {"q", "bad"}},
      {{"q", "good"}, {"extra", "1"}},
  };
  for (const auto& params : bad) {
    auto r = handle_get(*f.p, "/search", params);
    EXPECT_EQ(r.status, 400) << r.body;
    EXPECT_TRUE(nlohmann::json::parse(r.body).contains("error"));
  }
  EXPECT_EQ(handle_get(*f.p, "/reports/timeline", {{"window", "0"}}).status, 400);
  EXPECT_EQ(handle_get(*f.p, "/reports/timeline", {{"window", "x"}}).status, 400);
  EXPECT_EQ(handle_get(*f.p, "/reports/counts", {{"window", "1"}}).status, 400);
}

TEST(HandleGet, UnknownPathIs404) {
  Fixture f;
  EXPECT_EQ(handle_get(*f.p, "/", {}).status, 404);
  EXPECT_EQ(handle_get(*f.p, "/reports", {}).status, 404);
}

TEST(HandleGet, ReportsShareBytesWithPipeline) {
  Fixture f;
  auto r = handle_get(*f.p, "/reports/counts", {});
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.body, f.p->counts_json());
  r = handle_get(*f.p, "/reports/timeline", {{"window", "2000"}});
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.body, f.p->timeline_json(2000, std::nullopt, std::nullopt));
}

TEST(HttpServer, ServesGetAndRejectsWrites) {
  Fixture f;
  HttpServer server(*f.p);
  const int port = server.bind("127.0.0.1", 0);
  ASSERT_GT(port, 0);
  std::thread t([&] { server.listen(); });
  httplib::Client cli("127.0.0.1", port);
  auto res = cli.Get("/search?q=good%20food&k=1");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(nlohmann::json::parse(res->body)["hits"][0]["doc_id"], "d4");
  EXPECT_NE(res->get_header_value("Content-Type").find("application/json"), std::string::npos);
  res = cli.Get("/search?q=");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
  res = cli.Get("/missing");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 404);
  res = cli.Post("/search", "{}", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 405);
  server.stop();
  t.join();
}

}  // namespace
}  // namespace mlsa::app
