#include "mlsa/model_bundle.h"

#include <fstream>

#include "mlsa/errors.h"
#include "mlsa/fileio.h"
#include "mlsa/hash.h"

namespace mlsa {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

textprep::EncodedSequence ModelBundle::encode_text(std::string_view text) const {
  return textprep::encode(textprep::tokenize(text), vocab, model.hyper.seq_len);
}

float ModelBundle::score_text(std::string_view text) const {
  return model::predict(model, encode_text(text));
}

BundlePaths bundle_paths(const fs::path& model_path, const std::optional<fs::path>& vocab_path) {
  BundlePaths p;
  p.model = model_path;
  p.vocab = vocab_path ? *vocab_path : model_path.parent_path() / "vocab.json";
  fs::path meta = model_path;
  meta.replace_extension(".meta.json");
  p.meta = meta;
  return p;
}

namespace {

ordered_json history_json(const model::TrainHistory& h) {
  ordered_json epochs = ordered_json::array();
  for (const auto& e : h.epochs) {
    epochs.push_back({{"train_loss", e.train_loss},
                      {"train_accuracy", e.train_accuracy},
                      {"valid_loss", e.valid_loss},
                      {"valid_accuracy", e.valid_accuracy}});
  }
  return {{"epochs", epochs}, {"best_epoch", h.best_epoch}};
}

model::TrainHistory history_from(const ordered_json& j) {
  model::TrainHistory h;
  for (const auto& e : j.at("epochs")) {
    h.epochs.push_back({e.at("train_loss").get<double>(), e.at("train_accuracy").get<double>(),
                        e.at("valid_loss").get<double>(), e.at("valid_accuracy").get<double>()});
  }
  h.best_epoch = j.at("best_epoch").get<std::size_t>();
  return h;
}

}  // namespace

void save_bundle(const ModelBundle& bundle, const BundlePaths& paths) {
  if (!paths.model.parent_path().empty()) fs::create_directories(paths.model.parent_path());
  if (!paths.vocab.parent_path().empty()) fs::create_directories(paths.vocab.parent_path());
  model::save_model(bundle.model, paths.model);
  bundle.vocab.save(paths.vocab);
  const auto& hp = bundle.model.hyper;
  ordered_json meta = {
      {"format_version", model::kModelFormatVersion},
      {"vocab_hash", to_hex(bundle.vocab.content_hash())},
      {"vocab_size", bundle.vocab.size()},
      {"hyperparameters",
       {{"vocab_size", hp.vocab_size}, {"embed_dim", hp.embed_dim},
        {"hidden_dim", hp.hidden_dim}, {"seq_len", hp.seq_len},
        {"batch_size", hp.batch_size}, {"epochs", hp.epochs},
        {"learning_rate", hp.learning_rate}, {"clip_norm", hp.clip_norm},
        {"seed", hp.seed}}},
      {"history", history_json(bundle.history)}};
  write_file_atomically<ModelLoadError>(paths.meta, meta.dump(2) + "\n");
}

ModelBundle load_bundle(const BundlePaths& paths) {
  for (const auto& p : {paths.model, paths.vocab, paths.meta}) {
    if (!fs::exists(p)) throw ModelLoadError("missing model file " + p.string());
  }
  ModelBundle b;
  b.model = model::load_model(paths.model);
  try {
    b.vocab = textprep::Vocabulary::load(paths.vocab);
  } catch (const std::exception& e) {
    throw ModelLoadError("cannot load vocabulary " + paths.vocab.string() + ": " + e.what());
  }
  std::ifstream in(paths.meta);
  ordered_json meta = ordered_json::parse(in, nullptr, false);
  if (meta.is_discarded() || !meta.is_object() || !meta.contains("vocab_hash")) {
    throw ModelLoadError("malformed model metadata " + paths.meta.string());
  }
  const std::string want = meta["vocab_hash"].get<std::string>();
  const std::string have = to_hex(b.vocab.content_hash());
  if (want != have) {
    throw ModelLoadError("vocabulary " + paths.vocab.string() + " (hash " + have +
                         ") does not match the vocabulary the model was trained with (hash " +
                         want + ")");
  }
  if (b.vocab.size() > b.model.hyper.vocab_size) {
    throw ModelLoadError("vocabulary has more ids than the model's embedding rows");
  }
  try {
    if (meta.contains("history")) b.history = history_from(meta["history"]);
  } catch (const ordered_json::exception&) {
    throw ModelLoadError("malformed training history in " + paths.meta.string());
  }
  return b;
}

std::vector<LabeledText> labeled_texts(const std::vector<sentiment140::Row>& rows) {
  std::vector<LabeledText> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back({r.text, r.label});
  return out;
}

std::vector<model::Example> make_examples(std::span<const LabeledText> data,
                                          const textprep::Vocabulary& vocab,
                                          std::size_t seq_len) {
  std::vector<model::Example> out;
  out.reserve(data.size());
  for (const auto& d : data) {
    out.push_back({textprep::encode(textprep::tokenize(d.text), vocab, seq_len),
                   d.label == Sentiment::kPositive ? 1 : 0});
  }
  return out;
}

TrainOutcome train_bundle(std::span<const LabeledText> data, model::LstmHyperparams hyper,
                          std::size_t min_freq, const model::TrainOptions& options) {
  textprep::VocabularyBuilder builder;
  for (const auto& d : data) builder.add_text(d.text);
  textprep::Vocabulary vocab = builder.build(hyper.vocab_size, min_freq);
  hyper.vocab_size = vocab.size();
  auto examples = make_examples(data, vocab, hyper.seq_len);
  auto result = model::train(examples, hyper, options);
  TrainOutcome out;
  out.validation = model::evaluate_subset(result.model, examples, result.split.valid,
                                          options.threads);
  out.split = std::move(result.split);
  out.bundle = {std::move(result.model), std::move(vocab), std::move(result.history)};
  return out;
}

}  // namespace mlsa
