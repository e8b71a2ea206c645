// Python bindings for the engine's main operations.
#include <pybind11/functional.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mlsa/analytics.h"
#include "mlsa/config.h"
#include "mlsa/errors.h"
#include "mlsa/index.h"
#include "mlsa/ingest.h"
#include "mlsa/model_bundle.h"
#include "mlsa/mqlog.h"
#include "mlsa/pipeline.h"
#include "mlsa/sentiment140.h"
#include "mlsa/textprep.h"

namespace py = pybind11;
using namespace mlsa;

namespace {

std::optional<Sentiment> label_arg(const std::optional<std::string>& s) {
  if (!s) return std::nullopt;
  auto l = parse_sentiment(*s);
  if (!l) throw QueryError("label must be 'positive' or 'negative'");
  return l;
}

py::object label_obj(const std::optional<Sentiment>& l) {
  if (!l) return py::none();
  return py::str(std::string(to_string(*l)));
}

py::dict envelope_dict(const RecordEnvelope& e) {
  py::dict d;
  d["doc_id"] = e.doc_id;
  d["event_time"] = e.event_time;
  d["text"] = e.text;
  d["author"] = e.author ? py::object(py::str(*e.author)) : py::none();
  d["label"] = label_obj(e.label);
  return d;
}

py::dict hit_dict(const index::SearchHit& h) {
  py::dict d;
  d["doc_id"] = h.doc_id;
  d["score"] = h.score;
  d["snippet"] = h.snippet;
  d["label"] = label_obj(h.label);
  d["event_time"] = h.event_time;
  return d;
}

py::dict counters_dict(const ingest::IngestCounters& c) {
  py::dict d;
  d["records_in"] = c.records_in;
  d["envelopes_out"] = c.envelopes_out;
  d["parse_skipped"] = c.parse_skipped;
  d["empty_dropped"] = c.empty_dropped;
  d["dup_dropped"] = c.dup_dropped;
  d["noise_dropped"] = c.noise_dropped;
  d["reconciles"] = c.reconciles();
  return d;
}

py::dict eval_dict(const model::EvalReport& r) {
  py::dict d;
  d["accuracy_positive"] = r.accuracy_positive;
  d["accuracy_negative"] = r.accuracy_negative;
  d["accuracy_total"] = r.accuracy_total;
  d["mean_loss"] = r.mean_loss;
  return d;
}

std::vector<LabeledText> labeled_pairs(const std::vector<std::pair<std::string, std::string>>& data) {
  std::vector<LabeledText> out;
  out.reserve(data.size());
  for (const auto& [text, label] : data) out.push_back({text, *label_arg(label)});
  return out;
}

}  // namespace

PYBIND11_MODULE(_mlsa, m) {
  m.doc() = "Streaming sentiment analytics engine";

  static py::exception<Error> base(m, "Error");
  py::register_exception<SourceError>(m, "SourceError", base.ptr());
  py::register_exception<ExtractionError>(m, "ExtractionError", base.ptr());
  py::register_exception<EmptyTextError>(m, "EmptyTextError", base.ptr());
  py::register_exception<TopicExists>(m, "TopicExists", base.ptr());
  py::register_exception<UnknownTopic>(m, "UnknownTopic", base.ptr());
  py::register_exception<InvalidCommit>(m, "InvalidCommit", base.ptr());
  py::register_exception<LogIoError>(m, "LogIoError", base.ptr());
  py::register_exception<ArchiveError>(m, "ArchiveError", base.ptr());
  py::register_exception<ModelShapeError>(m, "ModelShapeError", base.ptr());
  py::register_exception<ModelLoadError>(m, "ModelLoadError", base.ptr());
  py::register_exception<TrainDataError>(m, "TrainDataError", base.ptr());
  py::register_exception<QueryError>(m, "QueryError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());

  // Text preparation
  m.def("tokenize", &textprep::tokenize, py::arg("text"));

  py::class_<textprep::Vocabulary>(m, "Vocabulary")
      .def_static(
          "build",
          [](const std::vector<std::string>& texts, std::size_t max_size, std::size_t min_freq) {
            textprep::VocabularyBuilder b;
            for (const auto& t : texts) b.add_text(t);
            return b.build(max_size, min_freq);
          },
          py::arg("texts"), py::arg("max_size") = 20000, py::arg("min_freq") = 1)
      .def_static("load", &textprep::Vocabulary::load, py::arg("path"))
      .def("save", &textprep::Vocabulary::save, py::arg("path"))
      .def("lookup", &textprep::Vocabulary::lookup, py::arg("token"))
      .def("token", &textprep::Vocabulary::token, py::arg("id"))
      .def("content_hash", &textprep::Vocabulary::content_hash)
      .def("encode",
           [](const textprep::Vocabulary& v, const std::string& text, std::size_t length) {
             auto seq = textprep::encode(textprep::tokenize(text), v, length);
             return py::make_tuple(seq.ids, seq.true_length);
           },
           py::arg("text"), py::arg("length"))
      .def("__len__", &textprep::Vocabulary::size)
      .def(py::self == py::self);

  // Model
  py::class_<model::LstmHyperparams>(m, "Hyperparams")
      .def(py::init<>())
      .def_readwrite("vocab_size", &model::LstmHyperparams::vocab_size)
      .def_readwrite("embed_dim", &model::LstmHyperparams::embed_dim)
      .def_readwrite("hidden_dim", &model::LstmHyperparams::hidden_dim)
      .def_readwrite("seq_len", &model::LstmHyperparams::seq_len)
      .def_readwrite("batch_size", &model::LstmHyperparams::batch_size)
      .def_readwrite("epochs", &model::LstmHyperparams::epochs)
      .def_readwrite("learning_rate", &model::LstmHyperparams::learning_rate)
      .def_readwrite("clip_norm", &model::LstmHyperparams::clip_norm)
      .def_readwrite("seed", &model::LstmHyperparams::seed)
      .def("validate", &model::LstmHyperparams::validate);

  py::class_<ModelBundle>(m, "Model")
      .def_static(
          "load",
          [](const std::filesystem::path& model_path, std::optional<std::filesystem::path> vocab) {
            return load_bundle(bundle_paths(model_path, vocab));
          },
          py::arg("model_path"), py::arg("vocab_path") = py::none())
      .def(
          "save",
          [](const ModelBundle& b, const std::filesystem::path& model_path,
             std::optional<std::filesystem::path> vocab) {
            save_bundle(b, bundle_paths(model_path, vocab));
          },
          py::arg("model_path"), py::arg("vocab_path") = py::none())
      .def("score", &ModelBundle::score_text, py::arg("text"),
           "P(positive) for raw text", py::call_guard<py::gil_scoped_release>())
      .def("evaluate",
           [](const ModelBundle& b, const std::vector<std::pair<std::string, std::string>>& data,
              std::size_t threads) {
             auto texts = labeled_pairs(data);
             auto ex = make_examples(texts, b.vocab, b.model.hyper.seq_len);
             py::gil_scoped_release release;
             return model::evaluate(b.model, ex, threads);
           },
           py::arg("data"), py::arg("threads") = 1)
      .def_property_readonly("hyperparams", [](const ModelBundle& b) { return b.model.hyper; })
      .def_property_readonly("vocab", [](const ModelBundle& b) { return b.vocab; });

  py::class_<model::EvalReport>(m, "EvalReport")
      .def_readonly("accuracy_positive", &model::EvalReport::accuracy_positive)
      .def_readonly("accuracy_negative", &model::EvalReport::accuracy_negative)
      .def_readonly("accuracy_total", &model::EvalReport::accuracy_total)
      .def_readonly("mean_loss", &model::EvalReport::mean_loss)
      .def("to_dict", &eval_dict);

  m.def(
      "train",
      [](const std::vector<std::pair<std::string, std::string>>& data,
         const model::LstmHyperparams& hyper, std::size_t min_freq, std::size_t threads) {
        auto texts = labeled_pairs(data);
        model::TrainOptions opts;
        opts.threads = threads;
        TrainOutcome out = [&] {
          py::gil_scoped_release release;
          return train_bundle(texts, hyper, min_freq, opts);
        }();
        return py::make_tuple(std::move(out.bundle), out.validation);
      },
      py::arg("data"), py::arg("hyperparams") = model::LstmHyperparams{}, py::arg("min_freq") = 1,
      py::arg("threads") = 1,
      "Trains on (text, 'positive'|'negative') pairs; returns (Model, held-out EvalReport).");

  m.def(
      "load_sentiment140",
      [](const std::filesystem::path& path, std::optional<std::size_t> sample, std::uint64_t seed) {
        auto rows = sentiment140::load(path);
        if (sample) rows = sentiment140::stratified_sample(rows, *sample, seed);
        std::vector<std::pair<std::string, std::string>> out;
        out.reserve(rows.size());
        for (auto& r : rows) out.emplace_back(std::move(r.text), std::string(to_string(r.label)));
        return out;
      },
      py::arg("path"), py::arg("sample") = py::none(), py::arg("seed") = 42);

  // Ingest
  m.def(
      "extract",
      [](const std::string& payload, std::int64_t arrival_time) {
        return envelope_dict(ingest::extract({"python", arrival_time, payload}));
      },
      py::arg("payload"), py::arg("arrival_time") = 0);
  m.def("fingerprint", &ingest::fingerprint, py::arg("text"));

  // Message log
  py::class_<mqlog::MessageLog>(m, "MessageLog")
      .def(py::init<const std::filesystem::path&>(), py::arg("data_dir"))
      .def(
          "create_topic",
          [](mqlog::MessageLog& l, const std::string& name, std::uint32_t partitions) {
            l.create_topic(name, partitions);
          },
          py::arg("name"), py::arg("partitions"))
      .def(
          "append",
          [](mqlog::MessageLog& l, const std::string& topic, const std::string& key,
             const py::bytes& payload, std::int64_t event_time) {
            auto pos = l.append(topic, key, std::string(payload), event_time);
            return py::make_tuple(pos.partition, pos.offset);
          },
          py::arg("topic"), py::arg("key"), py::arg("payload"), py::arg("event_time") = 0)
      .def("flush", py::overload_cast<>(&mqlog::MessageLog::flush))
      .def(
          "poll",
          [](mqlog::MessageLog& l, const std::string& group, const std::string& topic,
             std::size_t max_records) {
            py::list out;
            for (auto& r : l.poll(group, topic, max_records)) {
              out.append(py::make_tuple(r.position.partition, r.position.offset, r.event_time,
                                        py::bytes(r.payload)));
            }
            return out;
          },
          py::arg("group"), py::arg("topic"), py::arg("max_records") = 100)
      .def(
          "commit",
          [](mqlog::MessageLog& l, const std::string& group, const std::string& topic,
             const std::vector<std::pair<std::uint32_t, std::uint64_t>>& positions) {
            std::vector<mqlog::LogPosition> pos;
            for (auto [p, o] : positions) pos.push_back({topic, p, o});
            l.commit(group, pos);
          },
          py::arg("group"), py::arg("topic"), py::arg("positions"))
      .def("high_watermark", &mqlog::MessageLog::high_watermark, py::arg("topic"),
           py::arg("partition"))
      .def("lag", &mqlog::MessageLog::lag, py::arg("group"), py::arg("topic"));

  // Index
  py::class_<index::InvertedIndex>(m, "Index")
      .def(py::init<>())
      .def(
          "add",
          [](index::InvertedIndex& idx, const std::string& doc_id, const std::string& text,
             const std::optional<std::string>& label, std::int64_t event_time) {
            idx.add({doc_id, text, label_arg(label), event_time});
          },
          py::arg("doc_id"), py::arg("text"), py::arg("label") = py::none(),
          py::arg("event_time") = 0)
      .def(
          "search",
          [](const index::InvertedIndex& idx, const std::string& query, std::size_t k,
             const std::optional<std::string>& label) {
            auto q = index::parse_query(query);
            if (label) q.label = label_arg(label);
            py::list out;
            for (const auto& h : idx.search(q, k)) out.append(hit_dict(h));
            return out;
          },
          py::arg("query"), py::arg("k") = 10, py::arg("label") = py::none())
      .def("__len__", [](const index::InvertedIndex& idx) { return idx.stats().doc_count; })
      .def("__contains__", &index::InvertedIndex::contains)
      .def("save", [](const index::InvertedIndex& idx, const std::filesystem::path& p) { idx.save(p); })
      .def_static("load", [](const std::filesystem::path& p) { return index::InvertedIndex::load(p); });

  // Reports
  m.def(
      "label_counts_csv",
      [](const std::filesystem::path& path, const std::string& format) {
        return analytics::render(analytics::count_by_label_csv(path), analytics::parse_format(format));
      },
      py::arg("path"), py::arg("format") = "json");

  // Whole pipeline over a data directory
  py::class_<app::Pipeline>(m, "Pipeline")
      .def(py::init([](const std::string& data_dir, const std::map<std::string, std::string>& settings) {
             std::vector<app::Override> ovr(settings.begin(), settings.end());
             ovr.insert(ovr.begin(), {"data.dir", data_dir});
             return std::make_unique<app::Pipeline>(app::load_config(std::nullopt, ovr));
           }),
           py::arg("data_dir"), py::arg("settings") = std::map<std::string, std::string>{})
      .def(
          "ingest_file",
          [](app::Pipeline& p, const std::filesystem::path& path) {
            ingest::ReplaySource src(path, std::numeric_limits<double>::infinity());
            ingest::IngestCounters c;
            {
              py::gil_scoped_release release;
              c = p.ingest(src);
            }
            return counters_dict(c);
          },
          py::arg("path"))
      .def("counts_json", &app::Pipeline::counts_json)
      .def("timeline_json", &app::Pipeline::timeline_json, py::arg("window_ms"),
           py::arg("start") = py::none(), py::arg("end") = py::none())
      .def(
          "search_json",
          [](const app::Pipeline& p, const std::string& q, const std::optional<std::string>& label,
             std::size_t k) { return p.search_json(q, label_arg(label), k).dump(); },
          py::arg("query"), py::arg("label") = py::none(), py::arg("k") = 10)
      .def("snapshot_index", [](app::Pipeline& p) { return p.snapshot_index(); });
}
