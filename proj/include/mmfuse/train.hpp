// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

#include "mmfuse/data.hpp"
#include "mmfuse/metrics.hpp"
#include "mmfuse/model.hpp"

namespace mmfuse {

struct TrainOptions {
  double lr = 1e-4;
  double decay = 0.9;
  double eps = 1e-8;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  std::size_t threads = 0;  // evaluation shards; 0 = hardware concurrency
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0, train_acc = 0;
  double val_loss = 0, val_acc = 0;
};

template <Real T>
struct TrainResult {
  Model<T> model;  // snapshot of the best epoch
  std::vector<EpochStats> history;
  std::size_t best_epoch = 0;
};

/// Vocabulary over caption, OCR and hashtag words of a training set.
Vocab build_vocab(const Dataset& data, const ModelConfig& config);

/// Seeded mini-batch RMSprop on the mean cross-entropy. Train metrics are
/// running averages over the epoch's train-mode batches; validation metrics
/// use infer mode. The returned model is the epoch with the best validation
/// accuracy (ties: lower validation loss); train metrics decide when `val`
/// is null or empty. `on_epoch` sees each epoch as it completes.
template <Real T>
TrainResult<T> train(const Dataset& train_set, const Dataset* val, const ModelConfig& config,
                     const TrainOptions& opts, const std::function<void(const EpochStats&)>& on_epoch = {});

/// Infer-mode probabilities in dataset order, sharded across threads.
template <Real T>
std::vector<double> predict_proba(const Model<T>& model, const Dataset& data, std::size_t threads = 0);

struct Evaluation {
  Metrics metrics;
  double loss = 0;
  std::vector<double> probabilities;
};

/// Throws DataError when the dataset is empty or unlabeled.
template <Real T>
Evaluation evaluate(const Model<T>& model, const Dataset& data, std::size_t threads = 0);

std::vector<int> labels_of(const Dataset& data);

/// `epoch,train_loss,train_acc,val_loss,val_acc` with 17 significant digits.
void write_history(std::ostream& out, const std::vector<EpochStats>& history);

}  // namespace mmfuse
