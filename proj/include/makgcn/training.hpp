#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "makgcn/data.hpp"
#include "makgcn/model.hpp"

namespace makgcn {

struct TrainConfig {
  double lr_max = 0.1;
  double lr_min = 0.0;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 250;
  std::size_t patience = 30;
  std::uint64_t seed = 1;
  DType dtype = DType::f32;

  void validate() const;  // ConfigError naming the field
  // Batch size used for validation passes inside fit.
  std::size_t eval_batch_size() const { return batch_size > 64 ? batch_size : 64; }
};

// lr_min + (lr_max - lr_min) * (1 + cos(pi * t / T)) / 2. For t > T the result
// is clamped to lr_min and a warning goes to `warn` when given.
double cosine_lr(std::size_t t, std::size_t total, double lr_max, double lr_min,
                 std::ostream* warn = nullptr);

// g = grad + wd * p; buf = momentum * buf + g; p -= lr * buf.
// Parameters without a gradient are skipped.
template <typename T>
void sgd_step(std::span<Parameter<T>* const> params, double lr, double momentum, double weight_decay);

class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

  // Records one epoch (1-based); true when the loss strictly improves the best.
  bool observe(double val_loss);
  bool should_stop() const { return since_best_ >= patience_ && epochs_ > 0; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_; }
  std::size_t epochs() const { return epochs_; }

 private:
  std::size_t patience_;
  std::size_t epochs_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t since_best_ = 0;
  double best_ = 0.0;
};

enum class Averaging { weighted, macro };

struct Metrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::vector<std::vector<std::uint64_t>> confusion;  // [true][predicted]

  static Metrics from_confusion(std::vector<std::vector<std::uint64_t>> confusion,
                                Averaging averaging = Averaging::weighted);
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

inline constexpr const char* kHistoryHeader = "epoch,lr,train_loss,val_loss,val_acc";
// One comma-separated history line (no newline), values at round-trip precision.
std::string history_row(const EpochRecord& r);
void write_history(std::ostream& out, const std::vector<EpochRecord>& history);

// (B, C, N) batch of the selected samples, plus their labels.
template <typename T>
Tensor<T> stack_batch(const std::vector<Sample>& samples, std::span<const std::size_t> indices,
                      std::vector<int>* labels = nullptr);

// Eval-mode logits for every sample, in order, as (S, num_classes).
template <typename T>
std::vector<std::vector<T>> predict_logits(Model<T>& model, const std::vector<Sample>& samples,
                                           std::size_t batch_size = 64);

// Index of the largest entry, lowest index on ties.
template <typename T>
int argmax(std::span<const T> values);

template <typename T>
struct Evaluation {
  Metrics metrics;
  double loss = 0.0;  // mean cross-entropy
  std::vector<int> predictions;
};

template <typename T>
Evaluation<T> evaluate(Model<T>& model, const std::vector<Sample>& samples,
                       std::size_t batch_size = 64, Averaging averaging = Averaging::weighted);

// Copy of every parameter and buffer, in state() order.
template <typename T>
struct StateSnapshot {
  std::vector<std::vector<T>> params;
  std::vector<std::vector<T>> buffers;

  static StateSnapshot capture(Model<T>& model);
  void restore(Model<T>& model) const;
};

template <typename T>
struct FitResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  double best_val_accuracy = 0.0;
  bool stopped_early = false;
};

template <typename T>
struct FitHooks {
  // Called after the model improved on validation loss, with the best state loaded.
  std::function<void(const EpochRecord&, Model<T>&)> on_improve;
  std::function<void(const EpochRecord&)> on_epoch;
};

// Seeded SGD training with cosine schedule and early stopping. The model ends
// holding the best-validation state. Throws DivergenceError on a non-finite
// training loss.
template <typename T>
FitResult<T> fit(Model<T>& model, const std::vector<Sample>& train, const std::vector<Sample>& val,
                 const TrainConfig& config, const FitHooks<T>& hooks = {});

}  // namespace makgcn
