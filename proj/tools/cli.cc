#include "cli.h"

#include <atomic>
#include <csignal>
#include <cstdio>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "mlsa/analytics.h"
#include "mlsa/config.h"
#include "mlsa/errors.h"
#include "mlsa/http_api.h"
#include "mlsa/ingest.h"
#include "mlsa/model_bundle.h"
#include "mlsa/pipeline.h"
#include "mlsa/sentiment140.h"
#include "mlsa/streamproc.h"

namespace mlsa::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const SourceError*>(&e)) return kSourceError;
  if (dynamic_cast<const ExtractionError*>(&e) || dynamic_cast<const EmptyTextError*>(&e) ||
      dynamic_cast<const TrainDataError*>(&e) || dynamic_cast<const QueryError*>(&e) ||
      dynamic_cast<const ConfigError*>(&e)) {
    return kDataError;
  }
  if (dynamic_cast<const ModelLoadError*>(&e) || dynamic_cast<const ModelShapeError*>(&e)) {
    return kModelError;
  }
  return kInternalError;
}

std::string percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f%%", 100.0 * fraction);
  return buf;
}

void print_eval_table(std::ostream& out, const model::EvalReport& r, const std::string& caption) {
  out << caption << "\n";
  out << std::left << std::setw(12) << "Categories" << "Accuracy\n";
  out << std::setw(12) << "Positive" << percent(r.accuracy_positive) << "\n";
  out << std::setw(12) << "Negative" << percent(r.accuracy_negative) << "\n";
  out << std::setw(12) << "Total" << percent(r.accuracy_total) << "\n";
  const auto& c = r.confusion;
  out << "confusion: TP=" << c.true_positive << " FN=" << c.false_negative
      << " TN=" << c.true_negative << " FP=" << c.false_positive << "\n";
}

std::vector<sentiment140::Row> load_rows(const fs::path& csv, std::optional<std::size_t> sample,
                                         std::uint64_t seed, std::ostream& err) {
  sentiment140::ReadStats stats;
  auto rows = sentiment140::load(csv, &stats);
  err << "read " << stats.rows << " rows from " << csv.string();
  if (stats.skipped) err << " (" << stats.skipped << " skipped)";
  err << "\n";
  if (sample) {
    rows = sentiment140::stratified_sample(rows, *sample, seed);
    err << "stratified sample of " << rows.size() << " rows\n";
  }
  return rows;
}

ModelBundle load_model_for(const app::PipelineConfig& cfg) {
  return load_bundle(bundle_paths(cfg.resolved_model_path(), cfg.resolved_vocab_path()));
}

// Optional in-process source feeding the documents topic while the stream
// loop runs.
struct SourceArgs {
  std::optional<std::string> file;
  std::optional<int> tcp_port;
  bool any() const { return file || tcp_port; }
};

std::unique_ptr<ingest::RecordSource> open_source(const app::PipelineConfig& cfg,
                                                  const SourceArgs& args, std::ostream& err) {
  if (args.file && args.tcp_port) throw ConfigError("give either --file or --tcp-port, not both");
  if (args.file) {
    const double speedup =
        cfg.full_speed ? std::numeric_limits<double>::infinity() : cfg.replay_speedup;
    return std::make_unique<ingest::ReplaySource>(*args.file, speedup);
  }
  if (args.tcp_port) {
    if (*args.tcp_port < 0 || *args.tcp_port > 65535) throw ConfigError("--tcp-port out of range");
    auto src = std::make_unique<ingest::TcpLineSource>(static_cast<std::uint16_t>(*args.tcp_port),
                                                       cfg.tcp_bind);
    err << "listening for JSON lines on " << cfg.tcp_bind << ":" << src->port() << "\n";
    return src;
  }
  throw ConfigError("a source is required: --file PATH or --tcp-port N");
}

ordered_json counters_json(const ingest::IngestCounters& c) {
  return {{"records_in", c.records_in},       {"envelopes_out", c.envelopes_out},
          {"parse_skipped", c.parse_skipped}, {"empty_dropped", c.empty_dropped},
          {"dup_dropped", c.dup_dropped},     {"noise_dropped", c.noise_dropped},
          {"reconciles", c.reconciles()}};
}

// Runs an ingest source on a background thread; stop() unblocks it.
class SourceThread {
 public:
  SourceThread(app::Pipeline& p, std::unique_ptr<ingest::RecordSource> src,
               std::function<bool()> should_stop)
      : src_(std::move(src)) {
    thread_ = std::thread([this, &p, should_stop] {
      try {
        counters_ = p.ingest(*src_, should_stop);
      } catch (...) {
        error_ = std::current_exception();
      }
      done_ = true;
    });
  }
  ~SourceThread() { join(); }

  bool done() const { return done_; }
  void stop() {
    if (auto* tcp = dynamic_cast<ingest::TcpLineSource*>(src_.get())) tcp->stop();
  }
  void join() {
    if (thread_.joinable()) thread_.join();
  }
  const ingest::IngestCounters& counters() const { return counters_; }
  void rethrow() const {
    if (error_) std::rethrow_exception(error_);
  }

 private:
  std::unique_ptr<ingest::RecordSource> src_;
  std::thread thread_;
  std::atomic<bool> done_{false};
  ingest::IngestCounters counters_;
  std::exception_ptr error_;
};

struct StreamOptions {
  bool until_drained = false;
  std::optional<std::uint64_t> max_batches;
};

// The stream loop shared by `stream` and `serve --with-stream`.
ordered_json run_stream(app::Pipeline& p, const ModelBundle& bundle, const StreamOptions& opts,
                        const SourceArgs& source_args, const std::function<bool()>& external_stop,
                        std::ostream& err) {
  streamproc::StreamProcessor proc(p.log(), bundle, p.stream_config());
  std::atomic<bool> stopping{false};
  auto base_stop = [&] { return stopping || g_interrupted || p.stop_requested() || external_stop(); };
  proc.set_abort(base_stop);

  std::unique_ptr<SourceThread> source;
  if (source_args.any()) {
    source = std::make_unique<SourceThread>(p, open_source(p.config(), source_args, err), base_stop);
  }
  std::uint64_t batches = 0;
  const auto& cfg = p.config();
  auto should_stop = [&] {
    if (base_stop()) return true;
    if (opts.max_batches && batches >= *opts.max_batches) return true;
    if (opts.until_drained && (!source || source->done())) {
      if (source) source->rethrow();
      return p.log().lag(cfg.stream_group, cfg.documents_topic) == 0;
    }
    return false;
  };
  streamproc::MetricsSummary summary;
  try {
    summary = proc.run(should_stop, [&](const streamproc::BatchMetrics& m) {
      ++batches;
      p.pump_tee();
      p.maybe_snapshot_index();
      err << "batch " << m.batch_id << ": " << m.records << " records, " << std::fixed
          << std::setprecision(1) << m.total_ms << " ms, lag " << m.lag << "\n";
    });
  } catch (const LogIoError& e) {
    // Shutdown requested during a log outage; offsets stay uncommitted.
    err << "stream: stopped during retry: " << e.what() << "\n";
  }
  stopping = true;
  if (source) {
    source->stop();
    source->join();
    source->rethrow();
  }
  p.pump_tee();
  p.snapshot_index();
  ordered_json out = {{"batches", summary.batches},
                      {"records", summary.records},
                      {"parse_errors", summary.parse_errors},
                      {"retries", summary.retries},
                      {"max_lag", summary.max_lag},
                      {"p50_total_ms", summary.p50_total_ms},
                      {"p99_total_ms", summary.p99_total_ms},
                      {"indexed_docs", p.index().stats().doc_count}};
  if (source) out["ingest"] = counters_json(source->counters());
  return out;
}

}  // namespace

void install_signal_handlers() {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::signal(SIGPIPE, SIG_IGN);
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"mlsa: multilevel streaming sentiment analytics engine"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");
  // Global options are accepted after the subcommand too.
  app.fallthrough();

  std::optional<std::string> config_file;
  std::vector<app::Override> overrides;
  app.add_option("-c,--config", config_file, "TOML config file");
  app.add_option_function<std::string>(
      "--data-dir", [&](const std::string& v) { overrides.push_back({"data.dir", v}); },
      "Data directory (data.dir)");
  app.add_option_function<std::vector<std::string>>(
         "--set",
         [&](const std::vector<std::string>& vs) {
           for (const auto& v : vs) overrides.push_back(app::parse_override(v));
         },
         "Override any config key: --set section.key=value")
      ->take_all()
      ->allow_extra_args(false);

  // Dedicated flags are sugar for --set; later flags win.
  auto key_option = [&](CLI::App* sub, const std::string& name, const std::string& key,
                        const std::string& help) {
    sub->add_option_function<std::string>(
        name, [&overrides, key](const std::string& v) { overrides.push_back({key, v}); },
        help + " (" + key + ")")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  };
  auto model_options = [&](CLI::App* sub) {
    key_option(sub, "--model", "model.path", "model.bin path");
    key_option(sub, "--vocab", "model.vocab_path", "vocab.json path");
    key_option(sub, "--threads", "model.threads", "worker threads");
  };
  auto source_options = [&](CLI::App* sub, SourceArgs& s) {
    sub->add_option("--file", s.file, "Replay a JSON-lines file");
    sub->add_option("--tcp-port", s.tcp_port, "Accept JSON lines on a TCP port (0 = any)");
    sub->add_flag_callback(
        "--full-speed", [&overrides] { overrides.push_back({"ingest.full_speed", "true"}); },
        "Replay without delays (ingest.full_speed)");
    key_option(sub, "--speedup", "ingest.speedup", "Replay speed multiplier");
    key_option(sub, "--dedup-capacity", "ingest.dedup_capacity", "Duplicate filter window");
  };

  // ingest
  SourceArgs ingest_src;
  auto* ingest_cmd = app.add_subcommand("ingest", "Ingest a source into the log, archive and index");
  source_options(ingest_cmd, ingest_src);

  // train / evaluate
  std::string train_csv;
  std::optional<std::size_t> train_sample;
  auto* train_cmd = app.add_subcommand("train", "Train the LSTM classifier on a Sentiment140 CSV");
  train_cmd->add_option("--csv", train_csv, "Sentiment140-format CSV")->required();
  train_cmd->add_option("--sample", train_sample, "Train on a stratified sample of N rows");
  model_options(train_cmd);
  key_option(train_cmd, "--epochs", "model.epochs", "Training epochs");
  key_option(train_cmd, "--seed", "model.seed", "Random seed");
  key_option(train_cmd, "--embed-dim", "model.embed_dim", "Embedding width");
  key_option(train_cmd, "--hidden-dim", "model.hidden_dim", "Hidden width");
  key_option(train_cmd, "--seq-len", "textprep.seq_len", "Sequence length");
  key_option(train_cmd, "--batch-size", "model.batch_size", "Mini-batch size");
  key_option(train_cmd, "--learning-rate", "model.learning_rate", "Adam learning rate");
  key_option(train_cmd, "--clip-norm", "model.clip_norm", "Gradient clip");
  key_option(train_cmd, "--vocab-size", "textprep.vocab_size", "Vocabulary cap");
  key_option(train_cmd, "--min-freq", "textprep.min_freq", "Minimum token frequency");

  std::string eval_csv;
  std::optional<std::size_t> eval_sample;
  std::string eval_split = "all";
  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a saved model on a Sentiment140 CSV");
  eval_cmd->add_option("--csv", eval_csv, "Sentiment140-format CSV")->required();
  eval_cmd->add_option("--sample", eval_sample, "Use the same stratified sample as train --sample");
  eval_cmd->add_option("--split", eval_split, "all rows, or the held-out 30% (valid)")
      ->check(CLI::IsMember({"all", "valid"}));
  model_options(eval_cmd);

  // stream
  SourceArgs stream_src;
  StreamOptions stream_opts;
  auto* stream_cmd = app.add_subcommand("stream", "Score the documents topic in micro-batches");
  stream_cmd->add_flag("--until-drained", stream_opts.until_drained,
                       "Exit once the source is done and every record is committed");
  stream_cmd->add_option("--max-batches", stream_opts.max_batches, "Exit after N batches");
  key_option(stream_cmd, "--interval-ms", "stream.interval_ms", "Micro-batch interval");
  key_option(stream_cmd, "--max-batch", "stream.max_batch", "Records per batch at most");
  model_options(stream_cmd);
  source_options(stream_cmd, stream_src);

  // query
  auto* query_cmd = app.add_subcommand("query", "Aggregation reports");
  query_cmd->require_subcommand(1);
  std::string q_format = "json";
  std::optional<std::string> q_out;
  std::optional<std::string> counts_csv;
  bool counts_archive = false;
  std::optional<std::int64_t> q_from, q_to;
  std::int64_t q_window = 60000;
  auto* counts_cmd = query_cmd->add_subcommand("counts", "Counts per sentiment label");
  counts_cmd->add_option("--csv", counts_csv, "Count a Sentiment140 CSV instead of the labeled topic");
  counts_cmd->add_flag("--archive", counts_archive, "Count ground-truth labels in the archive");
  auto* timeline_cmd = query_cmd->add_subcommand("timeline", "Sentiment per tumbling window");
  timeline_cmd->add_option("--window", q_window, "Window length in ms");
  for (auto* sub : {counts_cmd, timeline_cmd}) {
    sub->add_option("--format", q_format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
    sub->add_option("--out", q_out, "Also write the report here");
    sub->add_option("--from", q_from, "Range start, epoch ms");
    sub->add_option("--to", q_to, "Range end, epoch ms");
  }

  // search
  std::string search_q;
  std::optional<std::string> search_label;
  std::size_t search_k = 10;
  auto* search_cmd = app.add_subcommand("search", "Ranked full-text search");
  search_cmd->add_option("query", search_q, "Search terms")->required();
  search_cmd->add_option("--label", search_label, "positive or negative");
  search_cmd->add_option("-k", search_k, "Number of hits")->check(CLI::Range(1, 10000));

  // serve
  bool with_stream = false;
  SourceArgs serve_src;
  StreamOptions serve_stream_opts;
  auto* serve_cmd = app.add_subcommand("serve", "Read-only HTTP endpoint");
  serve_cmd->add_flag("--with-stream", with_stream, "Run the stream processor in-process");
  key_option(serve_cmd, "--host", "serve.host", "Bind address");
  key_option(serve_cmd, "--port", "serve.port", "Port (0 = any)");
  key_option(serve_cmd, "--interval-ms", "stream.interval_ms", "Micro-batch interval");
  model_options(serve_cmd);
  source_options(serve_cmd, serve_src);

  auto* topics_cmd = app.add_subcommand("topics", "List topics, offsets and consumer lag");
  auto* stop_cmd = app.add_subcommand("stop", "Ask a running stream/serve to stop");
  auto* config_cmd = app.add_subcommand("config", "Print the effective configuration as TOML");
  std::optional<std::string> config_key;
  config_cmd->add_option("key", config_key, "Print only this key's value");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? kOk : kDataError;
  }

  try {
    const app::PipelineConfig cfg =
        app::load_config(config_file ? std::optional<fs::path>(*config_file) : std::nullopt,
                         overrides);

    if (*config_cmd) {
      if (config_key) {
        out << app::config_value(cfg, *config_key) << "\n";
      } else {
        out << app::to_toml(cfg);
      }
      return kOk;
    }

    if (*stop_cmd) {
      app::request_stop(cfg.data_dir);
      out << "stop requested for " << cfg.data_dir.string() << "\n";
      return kOk;
    }

    if (*train_cmd) {
      auto rows = load_rows(train_csv, train_sample, cfg.hyper.seed, err);
      auto data = labeled_texts(rows);
      model::TrainOptions opts;
      opts.threads = cfg.resolved_threads();
      opts.on_epoch = [&](std::size_t epoch, const model::EpochStats& s) {
        err << "epoch " << epoch << ": train_loss " << s.train_loss << " train_acc "
            << s.train_accuracy << " valid_loss " << s.valid_loss << " valid_acc "
            << s.valid_accuracy << "\n";
      };
      auto outcome = train_bundle(data, cfg.hyper, cfg.min_freq, opts);
      const auto paths = bundle_paths(cfg.resolved_model_path(), cfg.resolved_vocab_path());
      save_bundle(outcome.bundle, paths);
      err << "saved " << paths.model.string() << ", " << paths.vocab.string() << ", "
          << paths.meta.string() << "\n";
      print_eval_table(out, outcome.validation,
                       "Sentiment classification results (held-out " +
                           std::to_string(outcome.split.valid.size()) + " of " +
                           std::to_string(data.size()) + " tweets)");
      return kOk;
    }

    if (*eval_cmd) {
      const ModelBundle bundle = load_model_for(cfg);
      auto rows = load_rows(eval_csv, eval_sample, bundle.model.hyper.seed, err);
      auto data = labeled_texts(rows);
      auto examples = make_examples(data, bundle.vocab, bundle.model.hyper.seq_len);
      model::EvalReport report;
      std::string caption;
      if (eval_split == "valid") {
        auto split = model::stratified_split(examples, bundle.model.hyper.seed);
        report = model::evaluate_subset(bundle.model, examples, split.valid, cfg.resolved_threads());
        caption = "held-out " + std::to_string(split.valid.size()) + " of " +
                  std::to_string(examples.size()) + " tweets";
      } else {
        report = model::evaluate(bundle.model, examples, cfg.resolved_threads());
        caption = "all " + std::to_string(examples.size()) + " tweets";
      }
      print_eval_table(out, report, "Sentiment classification results (" + caption + ")");
      return kOk;
    }

    if (*counts_cmd && counts_csv) {
      auto report = analytics::count_by_label_csv(*counts_csv);
      const auto fmt = analytics::parse_format(q_format);
      out << analytics::render(report, fmt);
      if (q_out) analytics::export_report(report, fmt, *q_out);
      return kOk;
    }

    if (*ingest_cmd) {
      auto source = open_source(cfg, ingest_src, err);
      app::Pipeline p(cfg);
      std::atomic<bool> finished{false};
      std::thread watcher([&] {
        while (!finished) {
          if (g_interrupted || p.stop_requested()) {
            if (auto* tcp = dynamic_cast<ingest::TcpLineSource*>(source.get())) tcp->stop();
          }
          std::this_thread::sleep_for(std::chrono::milliseconds(50));
        }
      });
      ingest::IngestCounters c;
      try {
        c = p.ingest(*source, [&] { return g_interrupted.load(); });
      } catch (...) {
        finished = true;
        watcher.join();
        throw;
      }
      finished = true;
      watcher.join();
      p.snapshot_index();
      ordered_json summary = counters_json(c);
      summary["indexed_docs"] = p.index().stats().doc_count;
      summary["archived_records"] = p.archive().record_count();
      out << summary.dump(2) << "\n";
      return kOk;
    }

    if (*stream_cmd) {
      const ModelBundle bundle = load_model_for(cfg);
      app::Pipeline p(cfg);
      p.clear_stop();
      auto summary = run_stream(p, bundle, stream_opts, stream_src, [] { return false; }, err);
      out << summary.dump(2) << "\n";
      return kOk;
    }

    if (*serve_cmd) {
      std::optional<ModelBundle> bundle;
      if (with_stream) bundle = load_model_for(cfg);
      app::Pipeline p(cfg);
      p.clear_stop();
      app::HttpServer server(p);
      const int port = server.bind(cfg.http_host, cfg.http_port);
      out << "listening on http://" << cfg.http_host << ":" << port << std::endl;
      std::thread http([&] { server.listen(); });
      try {
        if (with_stream) {
          auto summary = run_stream(p, *bundle, serve_stream_opts, serve_src,
                                    [] { return false; }, err);
          err << summary.dump() << "\n";
        } else {
          if (serve_src.any()) throw ConfigError("--file/--tcp-port need --with-stream");
          while (!g_interrupted && !p.stop_requested()) {
            std::this_thread::sleep_for(std::chrono::milliseconds(100));
          }
        }
      } catch (...) {
        server.stop();
        http.join();
        throw;
      }
      server.stop();
      http.join();
      return kOk;
    }

    app::Pipeline p(cfg);

    if (*counts_cmd) {
      const auto fmt = analytics::parse_format(q_format);
      std::string body;
      if (counts_archive) {
        auto report = analytics::count_by_label_archive(
            p.archive(), q_from.value_or(std::numeric_limits<std::int64_t>::min()),
            q_to.value_or(std::numeric_limits<std::int64_t>::max()));
        body = analytics::render(report, fmt);
        analytics::export_report(report, fmt,
                                 q_out ? fs::path(*q_out)
                                       : cfg.data_dir / "reports" / ("counts-archive." + q_format));
      } else {
        if (q_from || q_to) throw QueryError("--from/--to apply to --archive counts only");
        auto report = analytics::count_by_label_topic(p.log(), cfg.labeled_topic);
        body = fmt == analytics::Format::kJson ? p.counts_json() : analytics::render(report, fmt);
        analytics::export_report(report, fmt,
                                 q_out ? fs::path(*q_out) : cfg.data_dir / "reports" / ("counts." + q_format));
      }
      out << body;
      return kOk;
    }

    if (*timeline_cmd) {
      const auto fmt = analytics::parse_format(q_format);
      auto tl = analytics::sentiment_over_time(p.log(), cfg.labeled_topic, q_window, q_from, q_to);
      out << (fmt == analytics::Format::kJson ? p.timeline_json(q_window, q_from, q_to)
                                              : analytics::render(tl, fmt));
      analytics::export_report(tl, fmt,
                               q_out ? fs::path(*q_out) : cfg.data_dir / "reports" / ("timeline." + q_format));
      return kOk;
    }

    if (*search_cmd) {
      std::optional<Sentiment> label;
      if (search_label) {
        label = parse_sentiment(*search_label);
        if (!label) throw QueryError("--label must be positive or negative");
      }
      if (search_q.find_first_not_of(" \t\r\n") == std::string::npos) {
        throw QueryError("search terms must not be empty");
      }
      out << p.search_json(search_q, label, search_k).dump(2) << "\n";
      return kOk;
    }

    if (*topics_cmd) {
      ordered_json topics = ordered_json::array();
      for (const auto& t : p.log().list_topics()) {
        ordered_json parts = ordered_json::array();
        for (std::uint32_t i = 0; i < t.partitions; ++i) {
          parts.push_back({{"partition", i},
                           {"log_start_offset", p.log().log_start_offset(t.name, i)},
                           {"high_watermark", p.log().high_watermark(t.name, i)}});
        }
        ordered_json lag = ordered_json::object();
        if (t.name == cfg.documents_topic) {
          lag[cfg.stream_group] = p.log().lag(cfg.stream_group, t.name);
          lag[app::kArchiveGroup] = p.log().lag(app::kArchiveGroup, t.name);
        }
        topics.push_back({{"name", t.name}, {"partitions", parts}, {"lag", lag}});
      }
      out << topics.dump(2) << "\n";
      return kOk;
    }
    err << "no command given\n";
    return kDataError;
  } catch (const std::exception& e) {
    err << "mlsa: " << e.what() << "\n";
    return exit_code_for(e);
  }
}

}  // namespace mlsa::cli
