// SPDX-License-Identifier: Apache-2.0
#include "mmfuse/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <thread>

#include "mmfuse/errors.hpp"
#include "mmfuse/optim.hpp"

namespace mmfuse {

namespace {

double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

std::size_t worker_count(std::size_t requested, std::size_t work) {
  std::size_t n = requested ? requested : std::max(1u, std::thread::hardware_concurrency());
  return std::max<std::size_t>(1, std::min(n, work / 16 + 1));
}

template <Real T>
std::vector<double> probabilities(const Model<T>& model, const std::vector<EncodedPost<T>>& posts,
                                  std::size_t threads) {
  std::vector<double> out(posts.size());
  const std::size_t workers = worker_count(threads, posts.size());
  auto run = [&](std::size_t begin, std::size_t end) {
    constexpr std::size_t chunk = 64;
    for (std::size_t i = begin; i < end; i += chunk) {
      const std::size_t j = std::min(end, i + chunk);
      std::vector<const EncodedPost<T>*> batch;
      for (std::size_t k = i; k < j; ++k) batch.push_back(&posts[k]);
      Tape<T> tape(false);
      const auto& z = batch_logits(tape, model, batch).value();
      for (std::size_t k = i; k < j; ++k) out[k] = sigmoid(static_cast<double>(z[k - i]));
    }
  };
  if (workers == 1) {
    run(0, posts.size());
    return out;
  }
  std::vector<std::thread> pool;
  const std::size_t per = (posts.size() + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t b = std::min(posts.size(), w * per), e = std::min(posts.size(), b + per);
    if (b < e) pool.emplace_back(run, b, e);
  }
  for (auto& t : pool) t.join();
  return out;
}

}  // namespace

std::vector<int> labels_of(const Dataset& data) {
  std::vector<int> y;
  y.reserve(data.size());
  for (const auto& p : data.posts) {
    if (!p.label) throw DataError("post '" + p.id + "' has no label");
    y.push_back(*p.label);
  }
  return y;
}

Vocab build_vocab(const Dataset& data, const ModelConfig& config) {
  std::vector<std::vector<std::string>> corpus;
  corpus.reserve(data.size());
  for (const auto& p : data.posts) {
    std::vector<std::string> words;
    if (config.modalities.text) {
      words = tokenize(p.caption);
      if (!config.ablations.no_ocr) {
        auto ocr = tokenize(p.ocr_text);
        words.insert(words.end(), ocr.begin(), ocr.end());
      }
    }
    if (config.modalities.hashtag) {
      for (const auto& h : p.hashtags) {
        try {
          words.push_back(normalize_hashtag(h));
        } catch (const InvalidHashtagError&) {
        }
      }
    }
    corpus.push_back(std::move(words));
  }
  return Vocab::build(corpus, config.vocab_max);
}

template <Real T>
TrainResult<T> train(const Dataset& train_set, const Dataset* val, const ModelConfig& config,
                     const TrainOptions& opts, const std::function<void(const EpochStats&)>& on_epoch) {
  config.validate();
  if (opts.batch_size < 2) throw ConfigError("batch size must be at least 2 (batchnorm needs batch statistics)");
  if (!(opts.lr >= 0.0 && opts.lr < 1.0)) throw ConfigError("learning rate must lie in [0, 1)");
  const std::vector<int> y = labels_of(train_set);
  const std::size_t pos = static_cast<std::size_t>(std::count(y.begin(), y.end(), 1));
  if (pos == 0 || pos == y.size()) throw ConfigError("training set holds a single class");
  if (y.size() < 2) throw ConfigError("training set needs at least two posts");
  const bool has_val = val && !val->empty();
  const std::vector<int> val_y = has_val ? labels_of(*val) : std::vector<int>{};

  TrainResult<T> result{Model<T>::create(config, build_vocab(train_set, config), opts.seed), {}, 0};
  Model<T>& model = result.model;
  const std::vector<EncodedPost<T>> encoded = encode_dataset(train_set, model);

  RmsProp<T> opt(static_cast<T>(opts.lr), static_cast<T>(opts.decay), static_cast<T>(opts.eps));
  opt.init(model.trainable());
  Rng shuffle_rng(opts.seed ^ 0x5DEECE66DULL);
  Rng dropout_rng(opts.seed ^ 0xB5026F5AA96619E9ULL);

  std::optional<Model<T>> best;
  EpochStats best_stats;
  std::vector<std::size_t> order(encoded.size());
  for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0;
    std::size_t correct = 0, seen = 0;
    for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
      const std::size_t end = std::min(order.size(), start + opts.batch_size);
      if (end - start < 2) break;  // a lone trailing post cannot form batch statistics
      std::vector<const EncodedPost<T>*> batch;
      std::vector<T> labels;
      for (std::size_t k = start; k < end; ++k) {
        batch.push_back(&encoded[order[k]]);
        labels.push_back(static_cast<T>(y[order[k]]));
      }
      Tape<T> tape;
      Var<T> logits = batch_logits(tape, model, batch, Mode::train, dropout_rng);
      Var<T> loss = sigmoid_bce(logits, labels);
      GradientMap<T> grads = tape.backward(loss);
      for (std::size_t k = 0; k < batch.size(); ++k) {
        const double p = sigmoid(static_cast<double>(logits.value()[k]));
        const int label = y[order[start + k]];
        loss_sum += bce_loss(p, label);
        correct += decide(p) == label;
      }
      seen += batch.size();
      opt.step(model.trainable(), grads);
    }

    EpochStats s;
    s.epoch = epoch;
    s.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
    s.train_acc = seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
    if (has_val) {
      const auto p = predict_proba(model, *val, opts.threads);
      s.val_loss = mean_bce_loss(p, val_y);
      std::size_t ok = 0;
      for (std::size_t i = 0; i < p.size(); ++i) ok += decide(p[i]) == val_y[i];
      s.val_acc = static_cast<double>(ok) / static_cast<double>(p.size());
    }
    result.history.push_back(s);
    if (on_epoch) on_epoch(s);

    const double acc = has_val ? s.val_acc : s.train_acc;
    const double lss = has_val ? s.val_loss : s.train_loss;
    const double best_acc = has_val ? best_stats.val_acc : best_stats.train_acc;
    const double best_loss = has_val ? best_stats.val_loss : best_stats.train_loss;
    if (!best || acc > best_acc || (acc == best_acc && lss < best_loss)) {
      best = model;
      best_stats = s;
      result.best_epoch = epoch;
    }
  }
  if (best) result.model = std::move(*best);
  return result;
}

template <Real T>
std::vector<double> predict_proba(const Model<T>& model, const Dataset& data, std::size_t threads) {
  return probabilities(model, encode_dataset(data, model), threads);
}

template <Real T>
Evaluation evaluate(const Model<T>& model, const Dataset& data, std::size_t threads) {
  if (data.empty()) throw DataError("cannot evaluate on an empty dataset");
  const std::vector<int> y = labels_of(data);
  Evaluation e;
  e.probabilities = predict_proba(model, data, threads);
  std::vector<int> pred;
  pred.reserve(y.size());
  for (double p : e.probabilities) pred.push_back(decide(p));
  e.metrics = compute_metrics(pred, y);
  e.loss = mean_bce_loss(e.probabilities, y);
  return e;
}

void write_history(std::ostream& out, const std::vector<EpochStats>& history) {
  out << "epoch,train_loss,train_acc,val_loss,val_acc\n";
  char buf[160];
  for (const auto& s : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", s.epoch, s.train_loss, s.train_acc, s.val_loss,
                  s.val_acc);
    out << buf;
  }
}

#define MMFUSE_INSTANTIATE(T)                                                                              \
  template TrainResult<T> train(const Dataset&, const Dataset*, const ModelConfig&, const TrainOptions&,    \
                                const std::function<void(const EpochStats&)>&);                            \
  template std::vector<double> predict_proba(const Model<T>&, const Dataset&, std::size_t);                \
  template Evaluation evaluate(const Model<T>&, const Dataset&, std::size_t);

MMFUSE_INSTANTIATE(float)
MMFUSE_INSTANTIATE(double)

}  // namespace mmfuse
