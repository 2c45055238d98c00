#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gnnxar/adam.hpp"
#include "gnnxar/error.hpp"
#include "gnnxar/tensor.hpp"

namespace gnnxar {

struct SplitSpec {
  double train = 0.70;
  double test = 0.20;
  double validation = 0.10;
  std::uint64_t seed = 0;

  void validate() const {
    if (train < 0 || test < 0 || validation < 0 || std::abs(train + test + validation - 1.0) > 1e-9) {
      throw DataError("split fractions must be non-negative and sum to 1");
    }
  }
};

struct SplitResult {
  std::vector<std::size_t> train, test, validation;
  std::vector<std::string> warnings;
};

// Stratified random split. Within each class the shuffled indices are cut at
// round(n * train) and round(n * (train + test)); classes with fewer than
// three windows go entirely to train.
inline SplitResult split(std::span<const int> labels, const SplitSpec& spec) {
  spec.validate();
  if (labels.empty()) throw DataError("cannot split an empty dataset");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

  SplitResult out;
  std::mt19937_64 rng(spec.seed);
  for (auto& [label, idx] : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const double n = static_cast<double>(idx.size());
    if (idx.size() < 3) {
      out.warnings.push_back("class " + std::to_string(label) + " has " + std::to_string(idx.size()) +
                             " windows; placed in train");
      out.train.insert(out.train.end(), idx.begin(), idx.end());
      continue;
    }
    const auto cut1 = static_cast<std::size_t>(std::llround(n * spec.train));
    const auto cut2 = std::min(idx.size(), static_cast<std::size_t>(std::llround(n * (spec.train + spec.test))));
    out.train.insert(out.train.end(), idx.begin(), idx.begin() + cut1);
    out.test.insert(out.test.end(), idx.begin() + cut1, idx.begin() + cut2);
    out.validation.insert(out.validation.end(), idx.begin() + cut2, idx.end());
  }
  for (auto* part : {&out.train, &out.test, &out.validation}) std::sort(part->begin(), part->end());
  return out;
}

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t patience = 50;
  std::size_t max_epochs = 2000;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;

  void validate() const {
    if (patience < 1) throw DataError("patience must be >= 1");
    if (batch_size < 1) throw DataError("batch size must be >= 1");
    if (max_epochs < 1) throw DataError("max epochs must be >= 1");
  }
};

class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  // Returns true when val_loss is a new strict minimum.
  bool observe(double val_loss) {
    if (val_loss < best_) {
      best_ = val_loss;
      since_best_ = 0;
      return true;
    }
    ++since_best_;
    return false;
  }

  bool should_stop() const { return since_best_ >= patience_; }
  double best() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t since_best_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

template <class M, class S>
concept Trainable = requires(const M& m, const S& s) {
  { m.named_params() } -> std::convertible_to<std::vector<NamedTensor>>;
  { m.loss(s) } -> std::convertible_to<Tensor>;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  bool early_stopped = false;
};

template <class M, class S>
  requires Trainable<M, S>
double mean_loss(const M& model, std::span<const S> samples) {
  double total = 0.0;
  for (const auto& s : samples) total += model.loss(s).item();
  return samples.empty() ? 0.0 : total / static_cast<double>(samples.size());
}

// Mini-batch Adam on the mean cross-entropy. Gradients of a batch are
// accumulated graph by graph. Parameters of the best validation epoch are
// written back into the model before returning.
template <class M, class S>
  requires Trainable<M, S>
TrainResult train_loop(M& model, std::span<const S> train, std::span<const S> val, const TrainConfig& cfg,
                       const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  cfg.validate();
  if (train.empty() || val.empty()) throw DataError("training and validation sets must be nonempty");

  auto params = model.named_params();
  Adam opt(params, AdamConfig{cfg.learning_rate});
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  EarlyStopping stopper(cfg.patience);
  std::vector<std::vector<double>> best(params.size());
  auto snapshot = [&] {
    for (std::size_t k = 0; k < params.size(); ++k)
      best[k].assign(params[k].tensor.values().begin(), params[k].tensor.values().end());
  };
  snapshot();

  TrainResult result;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_no) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double inv = 1.0 / static_cast<double>(end - start);
      opt.zero_grad();
      for (std::size_t i = start; i < end; ++i) {
        Tensor l = model.loss(train[order[i]]);
        if (!std::isfinite(l.item())) {
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch_no));
        }
        epoch_loss += l.item();
        scale(l, inv).backward();
      }
      opt.step();
    }
    EpochRecord rec{epoch, epoch_loss / static_cast<double>(order.size()), mean_loss(model, val)};
    if (!std::isfinite(rec.val_loss)) {
      throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));
    }
    result.history.push_back(rec);
    if (stopper.observe(rec.val_loss)) {
      result.best_epoch = epoch;
      result.best_val_loss = rec.val_loss;
      snapshot();
    }
    if (on_epoch) on_epoch(rec);
    if (stopper.should_stop()) {
      result.early_stopped = true;
      break;
    }
  }

  for (std::size_t k = 0; k < params.size(); ++k) {
    auto v = params[k].tensor.mutable_values();
    std::copy(best[k].begin(), best[k].end(), v.begin());
  }
  return result;
}

struct MetricsReport {
  std::size_t num_classes = 0;
  std::vector<double> precision, recall, f1;
  std::vector<std::size_t> support;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  double weighted_f1 = 0.0;
  double accuracy = 0.0;
  double micro_recall = 0.0;
  std::size_t total = 0;
};

inline MetricsReport compute_metrics(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                                     std::size_t num_classes) {
  if (truth.size() != predicted.size()) throw DataError("truth/prediction length mismatch");
  MetricsReport r;
  r.num_classes = num_classes;
  r.total = truth.size();
  r.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= num_classes || predicted[i] >= num_classes) throw DataError("class index out of range");
    ++r.confusion[truth[i]][predicted[i]];
  }
  r.precision.assign(num_classes, 0.0);
  r.recall.assign(num_classes, 0.0);
  r.f1.assign(num_classes, 0.0);
  r.support.assign(num_classes, 0);
  std::size_t correct = 0, recall_num = 0, recall_den = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::size_t col = 0;
    for (std::size_t t = 0; t < num_classes; ++t) col += r.confusion[t][c];
    for (std::size_t p = 0; p < num_classes; ++p) r.support[c] += r.confusion[c][p];
    const double tp = static_cast<double>(r.confusion[c][c]);
    correct += r.confusion[c][c];
    recall_num += r.confusion[c][c];
    recall_den += r.support[c];
    r.precision[c] = col ? tp / static_cast<double>(col) : 0.0;
    r.recall[c] = r.support[c] ? tp / static_cast<double>(r.support[c]) : 0.0;
    const double pr = r.precision[c] + r.recall[c];
    r.f1[c] = pr > 0.0 ? 2.0 * r.precision[c] * r.recall[c] / pr : 0.0;
  }
  if (r.total) {
    r.accuracy = static_cast<double>(correct) / static_cast<double>(r.total);
    r.micro_recall = static_cast<double>(recall_num) / static_cast<double>(recall_den);
    for (std::size_t c = 0; c < num_classes; ++c)
      r.weighted_f1 += r.f1[c] * static_cast<double>(r.support[c]) / static_cast<double>(r.total);
  }
  return r;
}

template <class M, class S>
MetricsReport evaluate(const M& model, std::span<const S> samples, std::size_t num_classes) {
  std::vector<std::size_t> truth, pred;
  truth.reserve(samples.size());
  pred.reserve(samples.size());
  for (const auto& s : samples) {
    truth.push_back(static_cast<std::size_t>(s.label));
    pred.push_back(model.predict(s));
  }
  return compute_metrics(truth, pred, num_classes);
}

}  // namespace gnnxar
