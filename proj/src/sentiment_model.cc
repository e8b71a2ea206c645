#include "mlsa/sentiment_model.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

#include "mlsa/errors.h"
#include "mlsa/parallel.h"

namespace mlsa::model {
namespace {

constexpr double kProbClamp = 1e-7;

template <typename S>
S sigmoid(S z) {
  return S(1) / (S(1) + std::exp(-z));
}

// Uniform [lo, hi) from the top 53 bits; identical on every platform.
double uniform(std::mt19937_64& rng, double lo, double hi) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

template <typename M>
void fill_glorot(M& m, std::size_t fan_in, std::size_t fan_out,
                 std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = static_cast<typename M::Scalar>(uniform(rng, -limit, limit));
  }
}

}  // namespace

void LstmHyperparams::validate() const {
  if (vocab_size < 1 || embed_dim < 1 || hidden_dim < 1 || seq_len < 1 ||
      batch_size < 1) {
    throw ModelShapeError("hyperparameter dimensions must all be >= 1");
  }
  if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) {
    throw ModelShapeError("learning_rate must be finite and non-negative");
  }
  if (!(clip_norm > 0)) throw ModelShapeError("clip_norm must be > 0");
}

// ---------------------------------------------------------------------------
// LstmParams

template <typename S>
LstmParams<S> LstmParams<S>::zeros(std::size_t vocab, std::size_t embed,
                                   std::size_t hidden) {
  const auto v = static_cast<Eigen::Index>(vocab);
  const auto d = static_cast<Eigen::Index>(embed);
  const auto h = static_cast<Eigen::Index>(hidden);
  LstmParams p;
  p.embedding = Matrix::Zero(v, d);
  for (std::size_t k = 0; k < kGates; ++k) {
    p.input_w[k] = Matrix::Zero(d, h);
    p.recurrent_w[k] = Matrix::Zero(h, h);
    p.bias[k] = RowVector::Zero(h);
  }
  p.out_w = RowVector::Zero(h);
  p.out_b = 0;
  return p;
}

template <typename S>
void LstmParams<S>::set_zero() {
  for_each_block([](std::span<S> b) { std::fill(b.begin(), b.end(), S(0)); });
}

template <typename S>
void LstmParams<S>::for_each_block(const std::function<void(std::span<S>)>& fn) {
  auto span_of = [](auto& m) { return std::span<S>(m.data(), static_cast<std::size_t>(m.size())); };
  fn(span_of(embedding));
  for (auto& m : input_w) fn(span_of(m));
  for (auto& m : recurrent_w) fn(span_of(m));
  for (auto& m : bias) fn(span_of(m));
  fn(span_of(out_w));
  fn(std::span<S>(&out_b, 1));
}

template <typename S>
void LstmParams<S>::for_each_block(
    const std::function<void(std::span<const S>)>& fn) const {
  auto span_of = [](const auto& m) {
    return std::span<const S>(m.data(), static_cast<std::size_t>(m.size()));
  };
  fn(span_of(embedding));
  for (const auto& m : input_w) fn(span_of(m));
  for (const auto& m : recurrent_w) fn(span_of(m));
  for (const auto& m : bias) fn(span_of(m));
  fn(span_of(out_w));
  fn(std::span<const S>(&out_b, 1));
}

template <typename S>
void LstmParams<S>::add_scaled(const LstmParams& other, S scale) {
  embedding.noalias() += scale * other.embedding;
  for (std::size_t k = 0; k < kGates; ++k) {
    input_w[k].noalias() += scale * other.input_w[k];
    recurrent_w[k].noalias() += scale * other.recurrent_w[k];
    bias[k].noalias() += scale * other.bias[k];
  }
  out_w.noalias() += scale * other.out_w;
  out_b += scale * other.out_b;
}

template <typename S>
std::size_t LstmParams<S>::parameter_count() const {
  std::size_t n = 0;
  for_each_block([&](std::span<const S> b) { n += b.size(); });
  return n;
}

template <typename S>
bool LstmParams<S>::all_finite() const {
  bool ok = true;
  for_each_block([&](std::span<const S> b) {
    ok = ok && std::all_of(b.begin(), b.end(), [](S x) { return std::isfinite(x); });
  });
  return ok;
}

template <typename S>
template <typename T>
LstmParams<T> LstmParams<S>::cast() const {
  LstmParams<T> p;
  p.embedding = embedding.template cast<T>();
  for (std::size_t k = 0; k < kGates; ++k) {
    p.input_w[k] = input_w[k].template cast<T>();
    p.recurrent_w[k] = recurrent_w[k].template cast<T>();
    p.bias[k] = bias[k].template cast<T>();
  }
  p.out_w = out_w.template cast<T>();
  p.out_b = static_cast<T>(out_b);
  return p;
}

template <typename S>
bool LstmParams<S>::operator==(const LstmParams& o) const {
  auto same = [](const auto& a, const auto& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::memcmp(a.data(), b.data(), sizeof(S) * static_cast<std::size_t>(a.size())) == 0;
  };
  if (!same(embedding, o.embedding) || !same(out_w, o.out_w)) return false;
  for (std::size_t k = 0; k < kGates; ++k) {
    if (!same(input_w[k], o.input_w[k]) || !same(recurrent_w[k], o.recurrent_w[k]) ||
        !same(bias[k], o.bias[k])) {
      return false;
    }
  }
  return std::memcmp(&out_b, &o.out_b, sizeof(S)) == 0;
}

template struct LstmParams<float>;
template struct LstmParams<double>;
template LstmParams<double> LstmParams<float>::cast<double>() const;
template LstmParams<float> LstmParams<double>::cast<float>() const;
template LstmParams<float> LstmParams<float>::cast<float>() const;
template LstmParams<double> LstmParams<double>::cast<double>() const;

// ---------------------------------------------------------------------------
// init / forward / backward

template <typename S>
LstmModelT<S> init_model(const LstmHyperparams& hyper) {
  hyper.validate();
  const std::size_t v = hyper.vocab_size, d = hyper.embed_dim, h = hyper.hidden_dim;
  LstmModelT<S> m{hyper, LstmParams<S>::zeros(v, d, h)};
  std::mt19937_64 rng(hyper.seed);
  fill_glorot(m.params.embedding, v, d, rng);
  m.params.embedding.row(0).setZero();
  for (auto& w : m.params.input_w) fill_glorot(w, d, h, rng);
  for (auto& u : m.params.recurrent_w) fill_glorot(u, h, h, rng);
  fill_glorot(m.params.out_w, h, 1, rng);
  m.params.bias[kForget].setOnes();
  return m;
}

namespace {

template <typename S>
void check_shape(const LstmModelT<S>& model, const textprep::EncodedSequence& seq) {
  const auto& p = model.params;
  const auto d = p.embedding.cols();
  const auto h = p.out_w.size();
  if (p.embedding.rows() != static_cast<Eigen::Index>(model.hyper.vocab_size) ||
      d != static_cast<Eigen::Index>(model.hyper.embed_dim) ||
      h != static_cast<Eigen::Index>(model.hyper.hidden_dim)) {
    throw ModelShapeError("parameter shapes disagree with hyperparameters");
  }
  if (seq.true_length > seq.ids.size()) {
    throw ModelShapeError("true_length exceeds sequence length");
  }
  for (std::size_t t = 0; t < seq.true_length; ++t) {
    const auto id = seq.ids[t];
    if (id < 0 || static_cast<std::size_t>(id) >= model.hyper.vocab_size) {
      throw ModelShapeError("token id " + std::to_string(id) +
                            " out of range for vocabulary of size " +
                            std::to_string(model.hyper.vocab_size));
    }
  }
}

// One cell step. Writes the four post-activation gates and the new state.
template <typename S, typename Row>
void cell_step(const LstmParams<S>& p, const Row& x, Row& h, Row& c,
               std::array<Row, kGates>& gates, Row& tanh_c) {
  for (std::size_t k = 0; k < kGates; ++k) {
    gates[k].noalias() = x * p.input_w[k];
    gates[k].noalias() += h * p.recurrent_w[k];
    gates[k] += p.bias[k];
  }
  for (std::size_t k : {kInput, kForget, kOutput}) {
    gates[k] = gates[k].unaryExpr([](S z) { return sigmoid(z); });
  }
  gates[kCandidate] = gates[kCandidate].array().tanh().matrix();
  c = gates[kForget].cwiseProduct(c) + gates[kInput].cwiseProduct(gates[kCandidate]);
  tanh_c = c.array().tanh().matrix();
  h = gates[kOutput].cwiseProduct(tanh_c);
}

}  // namespace

template <typename S>
ForwardResult<S> forward(const LstmModelT<S>& model,
                         const textprep::EncodedSequence& seq) {
  check_shape(model, seq);
  using Row = typename LstmParams<S>::RowVector;
  const auto& p = model.params;
  const auto h_dim = p.out_w.size();
  const std::size_t steps = seq.true_length;

  ForwardResult<S> out;
  auto& cache = out.cache;
  cache.ids.assign(seq.ids.begin(), seq.ids.begin() + static_cast<std::ptrdiff_t>(steps));
  cache.x.reserve(steps);
  for (auto& g : cache.gates) g.reserve(steps);
  cache.c.reserve(steps + 1);
  cache.h.reserve(steps + 1);
  cache.tanh_c.reserve(steps);

  Row h = Row::Zero(h_dim), c = Row::Zero(h_dim), tanh_c(h_dim);
  std::array<Row, kGates> gates;
  for (auto& g : gates) g.resize(h_dim);
  cache.h.push_back(h);
  cache.c.push_back(c);
  for (std::size_t t = 0; t < steps; ++t) {
    Row x = p.embedding.row(seq.ids[t]);
    cell_step(p, x, h, c, gates, tanh_c);
    cache.x.push_back(std::move(x));
    for (std::size_t k = 0; k < kGates; ++k) cache.gates[k].push_back(gates[k]);
    cache.c.push_back(c);
    cache.h.push_back(h);
    cache.tanh_c.push_back(tanh_c);
  }
  cache.logit = h.dot(p.out_w) + p.out_b;
  out.probability = sigmoid(cache.logit);
  return out;
}

template <typename S>
S predict(const LstmModelT<S>& model, const textprep::EncodedSequence& seq) {
  check_shape(model, seq);
  using Row = typename LstmParams<S>::RowVector;
  const auto& p = model.params;
  const auto h_dim = p.out_w.size();
  Row h = Row::Zero(h_dim), c = Row::Zero(h_dim), tanh_c(h_dim);
  std::array<Row, kGates> gates;
  for (auto& g : gates) g.resize(h_dim);
  for (std::size_t t = 0; t < seq.true_length; ++t) {
    Row x = p.embedding.row(seq.ids[t]);
    cell_step(p, x, h, c, gates, tanh_c);
  }
  return sigmoid(S(h.dot(p.out_w) + p.out_b));
}

double loss(double p, int label) {
  const double q = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  return label == 1 ? -std::log(q) : -std::log(1.0 - q);
}

template <typename S>
void backward(const LstmModelT<S>& model, const ForwardCache<S>& cache,
              int label, LstmParams<S>& grads, S scale) {
  using Row = typename LstmParams<S>::RowVector;
  const auto& p = model.params;
  const S prob = sigmoid(cache.logit);
  // Inside the clamp band the loss is constant in p, so its derivative is 0.
  const bool clamped = static_cast<double>(prob) < kProbClamp ||
                       static_cast<double>(prob) > 1.0 - kProbClamp;
  const S dlogit = clamped ? S(0) : prob - static_cast<S>(label);

  const std::size_t steps = cache.x.size();
  const Row& h_last = cache.h[steps];
  grads.out_w.noalias() += (scale * dlogit) * h_last;
  grads.out_b += scale * dlogit;

  Row dh = dlogit * p.out_w;
  Row dc = Row::Zero(dh.size());
  std::array<Row, kGates> dz;
  for (std::size_t s = steps; s-- > 0;) {
    const Row& i = cache.gates[kInput][s];
    const Row& f = cache.gates[kForget][s];
    const Row& o = cache.gates[kOutput][s];
    const Row& g = cache.gates[kCandidate][s];
    const Row& tc = cache.tanh_c[s];
    const Row& c_prev = cache.c[s];
    const Row& h_prev = cache.h[s];

    const auto one = S(1);
    dc.array() += dh.array() * o.array() * (one - tc.array().square());
    dz[kOutput] = (dh.array() * tc.array() * o.array() * (one - o.array())).matrix();
    dz[kInput] = (dc.array() * g.array() * i.array() * (one - i.array())).matrix();
    dz[kForget] = (dc.array() * c_prev.array() * f.array() * (one - f.array())).matrix();
    dz[kCandidate] = (dc.array() * i.array() * (one - g.array().square())).matrix();

    Row dx = Row::Zero(cache.x[s].size());
    Row dh_prev = Row::Zero(dh.size());
    for (std::size_t k = 0; k < kGates; ++k) {
      grads.input_w[k].noalias() += scale * cache.x[s].transpose() * dz[k];
      grads.recurrent_w[k].noalias() += scale * h_prev.transpose() * dz[k];
      grads.bias[k].noalias() += scale * dz[k];
      dx.noalias() += dz[k] * p.input_w[k].transpose();
      dh_prev.noalias() += dz[k] * p.recurrent_w[k].transpose();
    }
    const auto id = cache.ids[s];
    if (id != textprep::Vocabulary::kPadId) {
      grads.embedding.row(id).noalias() += scale * dx;
    }
    dh = std::move(dh_prev);
    dc = dc.cwiseProduct(f);
  }
}

template <typename S>
LstmParams<S> backward(const LstmModelT<S>& model, const ForwardCache<S>& cache,
                       int label) {
  auto grads = LstmParams<S>::zeros(model.hyper.vocab_size, model.hyper.embed_dim,
                                    model.hyper.hidden_dim);
  backward(model, cache, label, grads, S(1));
  return grads;
}

template LstmModelT<float> init_model<float>(const LstmHyperparams&);
template LstmModelT<double> init_model<double>(const LstmHyperparams&);
template ForwardResult<float> forward(const LstmModelT<float>&, const textprep::EncodedSequence&);
template ForwardResult<double> forward(const LstmModelT<double>&, const textprep::EncodedSequence&);
template float predict(const LstmModelT<float>&, const textprep::EncodedSequence&);
template double predict(const LstmModelT<double>&, const textprep::EncodedSequence&);
template void backward(const LstmModelT<float>&, const ForwardCache<float>&, int,
                       LstmParams<float>&, float);
template void backward(const LstmModelT<double>&, const ForwardCache<double>&, int,
                       LstmParams<double>&, double);
template LstmParams<float> backward(const LstmModelT<float>&, const ForwardCache<float>&, int);
template LstmParams<double> backward(const LstmModelT<double>&, const ForwardCache<double>&, int);

// ---------------------------------------------------------------------------
// training

Split stratified_split(std::span<const Example> data, std::uint64_t seed,
                       double train_fraction) {
  std::array<std::vector<std::size_t>, 2> by_class;
  for (std::size_t i = 0; i < data.size(); ++i) {
    by_class[data[i].label == 1 ? 1 : 0].push_back(i);
  }
  std::mt19937_64 rng(seed);
  Split split;
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    const auto n_train = static_cast<std::size_t>(
        std::llround(train_fraction * static_cast<double>(members.size())));
    split.train.insert(split.train.end(), members.begin(),
                       members.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.valid.insert(split.valid.end(),
                       members.begin() + static_cast<std::ptrdiff_t>(n_train),
                       members.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.valid.begin(), split.valid.end());
  return split;
}

namespace {

std::vector<std::span<float>> mutable_blocks(LstmParams<float>& p) {
  std::vector<std::span<float>> out;
  p.for_each_block([&](std::span<float> b) { out.push_back(b); });
  return out;
}

class Adam {
 public:
  Adam(const LstmParams<float>& shape, double lr)
      : m_(shape), v_(shape), lr_(lr) {
    m_.set_zero();
    v_.set_zero();
  }

  void step(LstmParams<float>& params, LstmParams<float>& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    auto pb = mutable_blocks(params);
    auto gb = mutable_blocks(grads);
    auto mb = mutable_blocks(m_);
    auto vb = mutable_blocks(v_);
    for (std::size_t b = 0; b < pb.size(); ++b) {
      for (std::size_t i = 0; i < pb[b].size(); ++i) {
        const double g = gb[b][i];
        const double m = kBeta1 * mb[b][i] + (1.0 - kBeta1) * g;
        const double v = kBeta2 * vb[b][i] + (1.0 - kBeta2) * g * g;
        mb[b][i] = static_cast<float>(m);
        vb[b][i] = static_cast<float>(v);
        const double update = lr_ * (m / bc1) / (std::sqrt(v / bc2) + kEps);
        pb[b][i] = static_cast<float>(pb[b][i] - update);
      }
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  LstmParams<float> m_;
  LstmParams<float> v_;
  double lr_;
  std::uint64_t t_ = 0;
};

void clip_global_norm(LstmParams<float>& grads, double clip) {
  double sq = 0;
  grads.for_each_block([&](std::span<const float> b) {
    for (float g : b) sq += static_cast<double>(g) * g;
  });
  const double norm = std::sqrt(sq);
  if (norm > clip) {
    const auto factor = static_cast<float>(clip / norm);
    grads.for_each_block([&](std::span<float> b) {
      for (float& g : b) g *= factor;
    });
  }
}

struct BatchTally {
  double loss = 0;
  std::size_t correct = 0;
};

}  // namespace

TrainResult train(std::span<const Example> data, const LstmHyperparams& hyper,
                  const TrainOptions& options) {
  hyper.validate();
  if (data.size() < 10) {
    throw TrainDataError("training needs at least 10 labeled examples");
  }
  const auto positives = std::count_if(data.begin(), data.end(),
                                       [](const Example& e) { return e.label == 1; });
  if (positives == 0 || positives == static_cast<std::ptrdiff_t>(data.size())) {
    throw TrainDataError("training data contains a single class");
  }

  TrainResult result{init_model<float>(hyper), {}, stratified_split(data, hyper.seed)};
  auto& model = result.model;
  const auto& split = result.split;
  if (split.valid.empty() || split.train.empty()) {
    throw TrainDataError("split produced an empty partition");
  }

  const std::size_t threads = std::max<std::size_t>(1, options.threads);
  const auto zeros = [&] {
    return LstmParams<float>::zeros(hyper.vocab_size, hyper.embed_dim, hyper.hidden_dim);
  };
  std::vector<LstmParams<float>> thread_grads(threads, zeros());
  LstmParams<float> grads = zeros();
  Adam adam(model.params, hyper.learning_rate);

  std::mt19937_64 rng(hyper.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order = split.train;
  LstmModel best = model;
  double best_accuracy = -1;

  for (std::size_t epoch = 1; epoch <= hyper.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
      const std::size_t end = std::min(order.size(), start + hyper.batch_size);
      const std::size_t batch = end - start;
      const auto scale = 1.0f / static_cast<float>(batch);
      std::vector<BatchTally> tallies(threads);
      const std::size_t used = std::min(threads, batch);
      parallel_chunks(batch, used, [&](std::size_t b, std::size_t e, std::size_t t) {
        auto& g = thread_grads[t];
        g.set_zero();
        for (std::size_t i = b; i < e; ++i) {
          const Example& ex = data[order[start + i]];
          auto fwd = forward(model, ex.seq);
          tallies[t].loss += loss(fwd.probability, ex.label);
          tallies[t].correct += ((fwd.probability >= 0.5f) == (ex.label == 1)) ? 1 : 0;
          backward(model, fwd.cache, ex.label, g, scale);
        }
      });
      grads.set_zero();
      for (std::size_t t = 0; t < used; ++t) {
        grads.add_scaled(thread_grads[t], 1.0f);
        loss_sum += tallies[t].loss;
        correct += tallies[t].correct;
      }
      clip_global_norm(grads, hyper.clip_norm);
      adam.step(model.params, grads);
      // Padding row never moves, whatever the optimizer state.
      model.params.embedding.row(0).setZero();
    }

    EpochStats stats;
    stats.train_loss = loss_sum / static_cast<double>(order.size());
    stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
    const auto report = evaluate_subset(model, data, split.valid, threads);
    stats.valid_loss = report.mean_loss;
    stats.valid_accuracy = report.accuracy_total;
    result.history.epochs.push_back(stats);
    if (stats.valid_accuracy > best_accuracy) {
      best_accuracy = stats.valid_accuracy;
      best = model;
      result.history.best_epoch = epoch;
    }
    if (options.on_epoch) options.on_epoch(epoch, stats);
  }
  if (hyper.epochs > 0) model = std::move(best);
  return result;
}

// ---------------------------------------------------------------------------
// evaluation

EvalReport EvalReport::from_confusion(const Confusion& c) {
  EvalReport r;
  r.confusion = c;
  const auto pos = c.true_positive + c.false_negative;
  const auto neg = c.true_negative + c.false_positive;
  r.accuracy_positive = pos ? static_cast<double>(c.true_positive) / static_cast<double>(pos) : 0.0;
  r.accuracy_negative = neg ? static_cast<double>(c.true_negative) / static_cast<double>(neg) : 0.0;
  r.accuracy_total = c.total() ? static_cast<double>(c.true_positive + c.true_negative) /
                                     static_cast<double>(c.total())
                               : 0.0;
  return r;
}

EvalReport evaluate_subset(const LstmModel& model, std::span<const Example> data,
                           std::span<const std::size_t> indices, std::size_t threads) {
  if (indices.empty()) throw TrainDataError("evaluation set is empty");
  threads = std::max<std::size_t>(1, threads);
  std::vector<Confusion> parts(threads);
  std::vector<double> losses(threads, 0.0);
  parallel_chunks(indices.size(), threads, [&](std::size_t b, std::size_t e, std::size_t t) {
    for (std::size_t i = b; i < e; ++i) {
      const Example& ex = data[indices[i]];
      const float p = predict(model, ex.seq);
      losses[t] += loss(p, ex.label);
      const bool predicted_positive = p >= 0.5f;
      auto& c = parts[t];
      if (ex.label == 1) {
        ++(predicted_positive ? c.true_positive : c.false_negative);
      } else {
        ++(predicted_positive ? c.false_positive : c.true_negative);
      }
    }
  });
  Confusion total;
  double loss_sum = 0;
  for (std::size_t t = 0; t < threads; ++t) {
    total.true_positive += parts[t].true_positive;
    total.false_negative += parts[t].false_negative;
    total.true_negative += parts[t].true_negative;
    total.false_positive += parts[t].false_positive;
    loss_sum += losses[t];
  }
  auto report = EvalReport::from_confusion(total);
  report.mean_loss = loss_sum / static_cast<double>(indices.size());
  return report;
}

EvalReport evaluate(const LstmModel& model, std::span<const Example> data,
                    std::size_t threads) {
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), 0);
  return evaluate_subset(model, data, all, threads);
}

// ---------------------------------------------------------------------------
// serialization: "MLSA", u32 version, hyperparameter block, then every
// parameter block row-major as little-endian float32.

namespace {

constexpr char kMagic[4] = {'M', 'L', 'S', 'A'};
constexpr std::size_t kHyperBytes = 6 * 8 + 2 * 8 + 8;
constexpr std::size_t kHeaderBytes = 4 + 4 + kHyperBytes;

template <typename T>
void put_le(std::string& out, T value) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
  }
}

template <typename T>
T get_le(const char* p) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bits |= static_cast<U>(static_cast<unsigned char>(p[i])) << (8 * i);
  }
  return std::bit_cast<T>(bits);
}

std::uint64_t expected_param_count(const LstmHyperparams& h) {
  const std::uint64_t v = h.vocab_size, d = h.embed_dim, n = h.hidden_dim;
  return v * d + kGates * (d * n + n * n + n) + n + 1;
}

}  // namespace

void save_model(const LstmModel& model, const std::filesystem::path& path) {
  const auto& h = model.hyper;
  std::string buf;
  buf.reserve(kHeaderBytes + 4 * model.params.parameter_count());
  buf.append(kMagic, 4);
  put_le<std::uint32_t>(buf, kModelFormatVersion);
  for (std::uint64_t v : {h.vocab_size, h.embed_dim, h.hidden_dim, h.seq_len,
                          h.batch_size, h.epochs}) {
    put_le<std::uint64_t>(buf, v);
  }
  put_le<double>(buf, h.learning_rate);
  put_le<double>(buf, h.clip_norm);
  put_le<std::uint64_t>(buf, h.seed);
  model.params.for_each_block([&](std::span<const float> b) {
    for (float x : b) put_le<float>(buf, x);
  });

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw Error("cannot write model file: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

LstmModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelLoadError("cannot open model file: " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
  if (buf.size() < kHeaderBytes) throw ModelLoadError("model file truncated: " + path.string());
  if (std::memcmp(buf.data(), kMagic, 4) != 0) {
    throw ModelLoadError("not a model file (bad magic): " + path.string());
  }
  const auto version = get_le<std::uint32_t>(buf.data() + 4);
  if (version != kModelFormatVersion) {
    throw ModelLoadError("unsupported model format version " + std::to_string(version));
  }
  const char* p = buf.data() + 8;
  LstmHyperparams h;
  std::size_t* dims[] = {&h.vocab_size, &h.embed_dim, &h.hidden_dim,
                         &h.seq_len,    &h.batch_size, &h.epochs};
  for (auto* dim : dims) {
    *dim = static_cast<std::size_t>(get_le<std::uint64_t>(p));
    p += 8;
  }
  h.learning_rate = get_le<double>(p);
  h.clip_norm = get_le<double>(p + 8);
  h.seed = get_le<std::uint64_t>(p + 16);
  try {
    h.validate();
  } catch (const ModelShapeError& e) {
    throw ModelLoadError(std::string("corrupt hyperparameters: ") + e.what());
  }
  if (h.vocab_size > (1u << 26) || h.embed_dim > 4096 || h.hidden_dim > 4096) {
    throw ModelLoadError("implausible model dimensions in " + path.string());
  }
  const std::uint64_t count = expected_param_count(h);
  if (buf.size() != kHeaderBytes + 4 * count) {
    throw ModelLoadError("model file size mismatch (truncated or trailing bytes): " +
                         path.string());
  }
  LstmModel model{h, LstmParams<float>::zeros(h.vocab_size, h.embed_dim, h.hidden_dim)};
  const char* q = buf.data() + kHeaderBytes;
  model.params.for_each_block([&](std::span<float> b) {
    for (float& x : b) {
      x = get_le<float>(q);
      q += 4;
    }
  });
  return model;
}

}  // namespace mlsa::model
