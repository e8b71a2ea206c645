#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "mlsa/sentiment140.h"
#include "mlsa/sentiment_model.h"
#include "mlsa/textprep.h"

namespace mlsa {

// A trained model together with the vocabulary it was trained against.
struct ModelBundle {
  model::LstmModel model;
  textprep::Vocabulary vocab;
  model::TrainHistory history;

  textprep::EncodedSequence encode_text(std::string_view text) const;
  // P(positive) for raw text: tokenize -> encode -> forward.
  float score_text(std::string_view text) const;
};

struct BundlePaths {
  std::filesystem::path model;  // model.bin
  std::filesystem::path vocab;  // vocab.json
  std::filesystem::path meta;   // model.meta.json
};

// meta sits next to the model file; vocab defaults to its sibling vocab.json.
BundlePaths bundle_paths(const std::filesystem::path& model_path,
                         const std::optional<std::filesystem::path>& vocab_path = {});

void save_bundle(const ModelBundle& bundle, const BundlePaths& paths);
// Throws ModelLoadError if a file is missing or unreadable, or if the
// vocabulary hash recorded with the model differs from the vocabulary file.
ModelBundle load_bundle(const BundlePaths& paths);

struct LabeledText {
  std::string text;
  Sentiment label = Sentiment::kNegative;
};

std::vector<LabeledText> labeled_texts(const std::vector<sentiment140::Row>& rows);

struct TrainOutcome {
  ModelBundle bundle;
  model::Split split;
  model::EvalReport validation;  // on the held-out 30%
};

// Builds the vocabulary over all texts (capped at hyper.vocab_size entries),
// sizes the embedding to the built vocabulary, trains and evaluates on the
// validation split. Throws TrainDataError on unusable data.
TrainOutcome train_bundle(std::span<const LabeledText> data, model::LstmHyperparams hyper,
                          std::size_t min_freq = 1, const model::TrainOptions& options = {});

std::vector<model::Example> make_examples(std::span<const LabeledText> data,
                                          const textprep::Vocabulary& vocab,
                                          std::size_t seq_len);

}  // namespace mlsa
