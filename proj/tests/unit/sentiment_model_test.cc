#include "mlsa/sentiment_model.h"

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "mlsa/errors.h"
#include "model_oracles.h"
#include "test_util.h"

namespace mlsa::model {
namespace {

using textprep::EncodedSequence;

LstmHyperparams tiny_hyper(std::uint64_t seed = 1) {
  LstmHyperparams hp;
  hp.vocab_size = 5;
  hp.embed_dim = 3;
  hp.hidden_dim = 2;
  hp.seq_len = 4;
  hp.batch_size = 4;
  hp.epochs = 1;
  hp.seed = seed;
  return hp;
}

EncodedSequence seq_of(std::vector<textprep::TokenId> ids, std::size_t len) {
  return EncodedSequence{std::move(ids), len};
}

TEST(InitModel, SeededDeterminism) {
  auto hp = tiny_hyper(99);
  hp.vocab_size = 50;
  EXPECT_EQ(init_model<float>(hp), init_model<float>(hp));
  auto other = hp;
  other.seed = 100;
  EXPECT_FALSE(init_model<float>(hp) == init_model<float>(other));
}

TEST(InitModel, BiasesAndPaddingRow) {
  auto hp = tiny_hyper();
  hp.vocab_size = 40;
  hp.embed_dim = 6;
  hp.hidden_dim = 5;
  const auto m = init_model<float>(hp);
  EXPECT_TRUE(m.params.bias[kForget].isOnes());
  EXPECT_TRUE(m.params.bias[kInput].isZero());
  EXPECT_TRUE(m.params.bias[kOutput].isZero());
  EXPECT_TRUE(m.params.bias[kCandidate].isZero());
  EXPECT_EQ(m.params.out_b, 0.0f);
  EXPECT_TRUE(m.params.embedding.row(0).isZero());
  const double limit = std::sqrt(6.0 / (6 + 5));
  EXPECT_LE(m.params.input_w[kInput].cwiseAbs().maxCoeff(), limit);
  EXPECT_GT(m.params.input_w[kInput].cwiseAbs().maxCoeff(), 0.0f);
}

TEST(Forward, ZeroModelGivesOneHalf) {
  auto m = init_model<double>(tiny_hyper());
  m.params.set_zero();
  const auto r = forward(m, seq_of({1, 2, 3, 4}, 4));
  EXPECT_EQ(r.probability, 0.5);
  EXPECT_TRUE(r.cache.h.back().isZero());
}

TEST(Forward, EmptySequenceIsSigmoidOfOutputBias) {
  auto m = init_model<double>(tiny_hyper());
  m.params.out_b = 0.7;
  const auto r = forward(m, seq_of({0, 0, 0, 0}, 0));
  EXPECT_DOUBLE_EQ(r.probability, 1.0 / (1.0 + std::exp(-0.7)));
}

TEST(Forward, MatchesScalarOracle) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = testing::random_tiny_model(rng, 5, 3, 2, 4, 0.5);
    const auto seq = testing::random_sequence(rng, 5, 4);
    const double p = forward(m, seq).probability;
    EXPECT_LE(std::abs(p - testing::scalar_forward(m, seq.ids, seq.true_length)), 1e-12);
    EXPECT_EQ(predict(m, seq), p);
  }
}

TEST(Forward, RejectsOutOfRangeIds) {
  const auto m = init_model<float>(tiny_hyper());
  EXPECT_THROW(forward(m, seq_of({7, 0, 0, 0}, 1)), ModelShapeError);
  EXPECT_THROW(forward(m, seq_of({1, 0}, 3)), ModelShapeError);
}

TEST(ForwardProperty, GateRangesAndPaddingInvariance) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = testing::random_tiny_model(rng, 9, 4, 3, 6, 1.0);
    auto seq = testing::random_sequence(rng, 9, 6);
    const auto r = forward(m, seq);
    EXPECT_GT(r.probability, 0.0);
    EXPECT_LT(r.probability, 1.0);
    for (std::size_t s = 0; s < seq.true_length; ++s) {
      for (std::size_t k : {kInput, kForget, kOutput}) {
        EXPECT_GT(r.cache.gates[k][s].minCoeff(), 0.0);
        EXPECT_LT(r.cache.gates[k][s].maxCoeff(), 1.0);
      }
      EXPECT_GT(r.cache.gates[kCandidate][s].minCoeff(), -1.0);
      EXPECT_LT(r.cache.gates[kCandidate][s].maxCoeff(), 1.0);
    }
    seq.ids.insert(seq.ids.end(), 5, textprep::Vocabulary::kPadId);
    EXPECT_EQ(forward(m, seq).probability, r.probability);
  }
}

TEST(Loss, KnownValues) {
  EXPECT_NEAR(loss(0.5, 1), std::log(2.0), 1e-15);
  EXPECT_NEAR(loss(0.9, 0), -std::log(0.1), 1e-12);
  EXPECT_NEAR(loss(0.9, 0), 2.302585, 1e-6);
  EXPECT_NEAR(loss(1.0, 1), 1e-7, 1e-12);
  EXPECT_TRUE(std::isfinite(loss(0.0, 1)));
  EXPECT_NEAR(loss(0.0, 1), -std::log(1e-7), 1e-9);
}

TEST(Backward, MatchesFiniteDifferences) {
  std::mt19937_64 rng(77);
  testing::GradientCheck worst;
  for (int trial = 0; trial < 25; ++trial) {
    const auto m = testing::random_tiny_model(rng, 5, 3, 2, 4);
    const auto seq = testing::random_sequence(rng, 5, 4, 1);
    const int label = static_cast<int>(rng() % 2);
    const auto fwd = forward(m, seq);
    const auto analytic = testing::flatten(backward(m, fwd.cache, label));
    const auto numeric = testing::numeric_gradient(m, seq, label, 1e-5);
    const auto check = testing::compare_gradients(analytic, numeric);
    worst.max_relative_error = std::max(worst.max_relative_error, check.max_relative_error);
    worst.max_absolute_error = std::max(worst.max_absolute_error, check.max_absolute_error);
  }
  EXPECT_LT(worst.max_relative_error, 1e-4);
  EXPECT_LT(worst.max_absolute_error, 1e-8);
}

TEST(Backward, ZeroLengthOnlyTouchesOutputLayer) {
  std::mt19937_64 rng(8);
  const auto m = testing::random_tiny_model(rng, 5, 3, 2, 4);
  const auto fwd = forward(m, seq_of({0, 0, 0, 0}, 0));
  const auto g = backward(m, fwd.cache, 1);
  EXPECT_TRUE(g.embedding.isZero());
  for (std::size_t k = 0; k < kGates; ++k) {
    EXPECT_TRUE(g.input_w[k].isZero());
    EXPECT_TRUE(g.recurrent_w[k].isZero());
    EXPECT_TRUE(g.bias[k].isZero());
  }
  // h_T = 0, so only the output bias moves.
  EXPECT_TRUE(g.out_w.isZero());
  EXPECT_DOUBLE_EQ(g.out_b, fwd.probability - 1.0);
}

TEST(Backward, AccumulationIsLinear) {
  std::mt19937_64 rng(9);
  const auto m = testing::random_tiny_model(rng, 5, 3, 2, 4);
  const auto seq = testing::random_sequence(rng, 5, 4, 2);
  const auto fwd = forward(m, seq);
  const auto once = backward(m, fwd.cache, 0);
  auto twice = LstmParams<double>::zeros(5, 3, 2);
  backward(m, fwd.cache, 0, twice);
  backward(m, fwd.cache, 0, twice);
  const auto a = testing::flatten(once);
  const auto b = testing::flatten(twice);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(b[i], 2 * a[i], 1e-15 * std::abs(a[i]) + 1e-300);
}

TEST(Backward, PaddingRowGradientIsZero) {
  std::mt19937_64 rng(10);
  const auto m = testing::random_tiny_model(rng, 5, 3, 2, 4);
  // A pad id inside the true length still must not produce an embedding update.
  const auto fwd = forward(m, seq_of({2, 0, 3, 0}, 3));
  const auto g = backward(m, fwd.cache, 1);
  EXPECT_TRUE(g.embedding.row(0).isZero());
  EXPECT_FALSE(g.embedding.row(2).isZero());
}

// Dataset where token 2 always means positive and token 3 negative; the rest
// of every sequence is shared filler.
std::vector<Example> separable_dataset(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> filler(4, 19);
  std::uniform_int_distribution<std::size_t> len(2, 8);
  std::vector<Example> data;
  for (std::size_t i = 0; i < n; ++i) {
    Example ex;
    ex.label = static_cast<int>(i % 2);
    ex.seq.ids.assign(8, 0);
    ex.seq.true_length = len(rng);
    for (std::size_t t = 0; t < ex.seq.true_length; ++t) ex.seq.ids[t] = filler(rng);
    const std::size_t where = rng() % ex.seq.true_length;
    ex.seq.ids[where] = ex.label == 1 ? 2 : 3;
    data.push_back(std::move(ex));
  }
  return data;
}

TEST(StratifiedSplit, SeventyThirtyPreservesClassRatio) {
  auto data = separable_dataset(100, 1);
  const auto split = stratified_split(data, 42);
  ASSERT_EQ(split.train.size(), 70u);
  ASSERT_EQ(split.valid.size(), 30u);
  auto positives = [&](const std::vector<std::size_t>& idx) {
    return std::count_if(idx.begin(), idx.end(), [&](auto i) { return data[i].label == 1; });
  };
  EXPECT_NEAR(positives(split.train), 35, 1);
  EXPECT_NEAR(positives(split.valid), 15, 1);
  // Disjoint and covering.
  std::vector<std::size_t> all = split.train;
  all.insert(all.end(), split.valid.begin(), split.valid.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], i);
}

LstmHyperparams toy_hyper() {
  LstmHyperparams hp;
  hp.vocab_size = 20;
  hp.embed_dim = 8;
  hp.hidden_dim = 8;
  hp.seq_len = 8;
  hp.batch_size = 8;
  hp.epochs = 5;
  hp.learning_rate = 0.02;
  hp.seed = 1234;
  return hp;
}

TEST(Train, LearnsSeparableToySet) {
  const auto data = separable_dataset(200, 3);
  const auto result = train(data, toy_hyper());
  ASSERT_EQ(result.history.epochs.size(), 5u);
  const auto best = std::max_element(
      result.history.epochs.begin(), result.history.epochs.end(),
      [](auto& a, auto& b) { return a.valid_accuracy < b.valid_accuracy; });
  EXPECT_EQ(best->valid_accuracy, 1.0);
  const auto report = evaluate_subset(result.model, data, result.split.valid);
  EXPECT_EQ(report.accuracy_total, 1.0);
  EXPECT_TRUE(result.model.params.embedding.row(0).isZero());
  for (const auto& e : result.history.epochs) {
    EXPECT_GE(e.train_loss, 0.0);
    EXPECT_GE(e.valid_loss, 0.0);
  }
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  const auto data = separable_dataset(60, 4);
  auto hp = toy_hyper();
  hp.learning_rate = 0;
  hp.epochs = 1;
  const auto result = train(data, hp);
  EXPECT_EQ(result.model, init_model<float>(hp));
  EXPECT_EQ(result.history.epochs.size(), 1u);
}

TEST(Train, ZeroEpochsReturnsInitialization) {
  const auto data = separable_dataset(60, 4);
  auto hp = toy_hyper();
  hp.epochs = 0;
  const auto result = train(data, hp);
  EXPECT_EQ(result.model, init_model<float>(hp));
  EXPECT_TRUE(result.history.epochs.empty());
}

TEST(Train, DeterministicSingleThreaded) {
  const auto data = separable_dataset(120, 5);
  auto hp = toy_hyper();
  hp.epochs = 2;
  const auto a = train(data, hp);
  const auto b = train(data, hp);
  EXPECT_EQ(a.model, b.model);
  ASSERT_EQ(a.history.epochs.size(), b.history.epochs.size());
  for (std::size_t i = 0; i < a.history.epochs.size(); ++i) {
    EXPECT_EQ(a.history.epochs[i].train_loss, b.history.epochs[i].train_loss);
    EXPECT_EQ(a.history.epochs[i].valid_accuracy, b.history.epochs[i].valid_accuracy);
  }
}

TEST(Train, MultiThreadedStillLearns) {
  const auto data = separable_dataset(200, 3);
  TrainOptions opts;
  opts.threads = 3;
  const auto result = train(data, toy_hyper(), opts);
  EXPECT_EQ(evaluate_subset(result.model, data, result.split.valid, 2).accuracy_total, 1.0);
}

TEST(Train, RejectsSingleClassAndTinyData) {
  auto data = separable_dataset(40, 6);
  for (auto& e : data) e.label = 1;
  EXPECT_THROW(train(data, toy_hyper()), TrainDataError);
  EXPECT_THROW(train(separable_dataset(8, 6), toy_hyper()), TrainDataError);
}

TEST(Evaluate, ConfusionArithmetic) {
  Confusion c;
  c.true_positive = 8;
  c.false_negative = 2;
  c.true_negative = 7;
  c.false_positive = 3;
  const auto r = EvalReport::from_confusion(c);
  EXPECT_DOUBLE_EQ(r.accuracy_positive, 0.8);
  EXPECT_DOUBLE_EQ(r.accuracy_negative, 0.7);
  EXPECT_DOUBLE_EQ(r.accuracy_total, 0.75);
}

TEST(Evaluate, AllPositiveModelOnBalancedSet) {
  auto m = init_model<float>(toy_hyper());
  m.params.set_zero();
  m.params.out_b = 50.0f;  // p ~ 1 for every input
  const auto data = separable_dataset(50, 7);
  const auto r = evaluate(m, data);
  EXPECT_EQ(r.accuracy_positive, 1.0);
  EXPECT_EQ(r.accuracy_negative, 0.0);
  EXPECT_EQ(r.accuracy_total, 0.5);
  EXPECT_EQ(r.confusion.total(), 50u);
}

TEST(Serialization, RoundTripIsBitIdentical) {
  mlsa::testing::TempDir dir;
  auto hp = toy_hyper();
  hp.vocab_size = 37;
  auto m = init_model<float>(hp);
  m.params.out_b = -0.123f;
  save_model(m, dir / "model.bin");
  const auto loaded = load_model(dir / "model.bin");
  EXPECT_EQ(loaded, m);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) {
    auto seq = testing::random_sequence(rng, 37, 8);
    const float a = forward(m, seq).probability;
    const float b = forward(loaded, seq).probability;
    EXPECT_EQ(std::memcmp(&a, &b, sizeof(float)), 0);
  }
}

TEST(Serialization, RejectsTruncatedAndForeignFiles) {
  mlsa::testing::TempDir dir;
  const auto m = init_model<float>(toy_hyper());
  save_model(m, dir / "model.bin");
  const auto bytes = mlsa::testing::read_file(dir / "model.bin");
  mlsa::testing::write_file(dir / "short.bin", bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(load_model(dir / "short.bin"), ModelLoadError);
  mlsa::testing::write_file(dir / "header.bin", bytes.substr(0, 10));
  EXPECT_THROW(load_model(dir / "header.bin"), ModelLoadError);
  auto wrong_version = bytes;
  wrong_version[4] = 2;
  mlsa::testing::write_file(dir / "v2.bin", wrong_version);
  EXPECT_THROW(load_model(dir / "v2.bin"), ModelLoadError);
  auto wrong_magic = bytes;
  wrong_magic[0] = 'X';
  mlsa::testing::write_file(dir / "magic.bin", wrong_magic);
  EXPECT_THROW(load_model(dir / "magic.bin"), ModelLoadError);
  EXPECT_THROW(load_model(dir / "missing.bin"), ModelLoadError);
}

}  // namespace
}  // namespace mlsa::model
