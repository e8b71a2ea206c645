#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "mlsa/textprep.h"

namespace mlsa::model {

struct LstmHyperparams {
  std::size_t vocab_size = 20000;
  std::size_t embed_dim = 64;
  std::size_t hidden_dim = 64;
  std::size_t seq_len = 40;
  std::size_t batch_size = 256;
  std::size_t epochs = 3;
  double learning_rate = 1e-3;
  double clip_norm = 5.0;
  std::uint64_t seed = 42;

  // Throws ModelShapeError when an invariant is violated.
  void validate() const;
  bool operator==(const LstmHyperparams&) const = default;
};

// Gate order used for every per-gate array: input, forget, output, candidate.
enum Gate : std::size_t { kInput = 0, kForget = 1, kOutput = 2, kCandidate = 3 };
inline constexpr std::size_t kGates = 4;

// Trainable parameters. Also used as the gradient container.
template <typename S>
struct LstmParams {
  using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using RowVector = Eigen::Matrix<S, 1, Eigen::Dynamic>;

  Matrix embedding;                 // V x d, row 0 is padding
  std::array<Matrix, kGates> input_w;      // d x h
  std::array<Matrix, kGates> recurrent_w;  // h x h
  std::array<RowVector, kGates> bias;      // h
  RowVector out_w;                  // h
  S out_b = 0;

  static LstmParams zeros(std::size_t vocab, std::size_t embed, std::size_t hidden);

  void set_zero();
  // this += scale * other
  void add_scaled(const LstmParams& other, S scale);
  // Visits every parameter block as a flat span, in serialization order.
  void for_each_block(const std::function<void(std::span<S>)>& fn);
  void for_each_block(const std::function<void(std::span<const S>)>& fn) const;
  std::size_t parameter_count() const;
  bool all_finite() const;

  template <typename T>
  LstmParams<T> cast() const;

  bool operator==(const LstmParams& o) const;
};

template <typename S>
struct LstmModelT {
  LstmHyperparams hyper;
  LstmParams<S> params;

  template <typename T>
  LstmModelT<T> cast() const {
    return LstmModelT<T>{hyper, params.template cast<T>()};
  }
  bool operator==(const LstmModelT& o) const {
    return hyper == o.hyper && params == o.params;
  }
};

using LstmModel = LstmModelT<float>;
using LstmModel64 = LstmModelT<double>;

// Per-step activations retained for backpropagation.
template <typename S>
struct ForwardCache {
  using RowVector = typename LstmParams<S>::RowVector;
  std::vector<textprep::TokenId> ids;  // first true_length ids
  std::vector<RowVector> x;            // embeddings
  std::array<std::vector<RowVector>, kGates> gates;  // post-activation
  std::vector<RowVector> c;       // c[0] = c_0 = 0, c[t] after step t
  std::vector<RowVector> h;       // h[0] = h_0 = 0
  std::vector<RowVector> tanh_c;  // tanh(c[t]) for t >= 1 (index t-1)
  S logit = 0;
};

template <typename S>
struct ForwardResult {
  S probability = 0;
  ForwardCache<S> cache;
};

template <typename S>
LstmModelT<S> init_model(const LstmHyperparams& hyper);

template <typename S>
ForwardResult<S> forward(const LstmModelT<S>& model,
                         const textprep::EncodedSequence& seq);

// Probability only; skips cache retention.
template <typename S>
S predict(const LstmModelT<S>& model, const textprep::EncodedSequence& seq);

// Binary cross-entropy with p clamped to [1e-7, 1 - 1e-7].
double loss(double p, int label);

// Accumulates scale * dLoss/dParams into `grads` (BPTT over the cached steps).
template <typename S>
void backward(const LstmModelT<S>& model, const ForwardCache<S>& cache,
              int label, LstmParams<S>& grads, S scale = S(1));

template <typename S>
LstmParams<S> backward(const LstmModelT<S>& model, const ForwardCache<S>& cache,
                       int label);

struct Example {
  textprep::EncodedSequence seq;
  int label = 0;  // 1 = positive
};

struct EpochStats {
  double train_loss = 0;
  double train_accuracy = 0;
  double valid_loss = 0;
  double valid_accuracy = 0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;  // 1-based; 0 when no epoch ran
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> valid;
};

// Per-class shuffle with `seed`; round(0.7 * n_class) of each class trains.
Split stratified_split(std::span<const Example> data, std::uint64_t seed,
                       double train_fraction = 0.7);

struct TrainOptions {
  std::size_t threads = 1;
  // Called after each epoch; useful for progress output.
  std::function<void(std::size_t epoch, const EpochStats&)> on_epoch;
};

struct TrainResult {
  LstmModel model;
  TrainHistory history;
  Split split;
};

// Mini-batch Adam (beta1 0.9, beta2 0.999, eps 1e-8) with global-norm
// clipping. Returns the epoch snapshot with the best validation accuracy.
TrainResult train(std::span<const Example> data, const LstmHyperparams& hyper,
                  const TrainOptions& options = {});

struct Confusion {
  std::uint64_t true_positive = 0;
  std::uint64_t false_negative = 0;
  std::uint64_t true_negative = 0;
  std::uint64_t false_positive = 0;

  std::uint64_t total() const {
    return true_positive + false_negative + true_negative + false_positive;
  }
};

struct EvalReport {
  double accuracy_positive = 0;
  double accuracy_negative = 0;
  double accuracy_total = 0;
  double mean_loss = 0;
  Confusion confusion;

  static EvalReport from_confusion(const Confusion& c);
};

EvalReport evaluate(const LstmModel& model, std::span<const Example> data,
                    std::size_t threads = 1);
EvalReport evaluate_subset(const LstmModel& model, std::span<const Example> data,
                           std::span<const std::size_t> indices,
                           std::size_t threads = 1);

inline constexpr std::uint32_t kModelFormatVersion = 1;

void save_model(const LstmModel& model, const std::filesystem::path& path);
LstmModel load_model(const std::filesystem::path& path);

}  // namespace mlsa::model
