#include "makgcn/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>

#include "makgcn/errors.hpp"

namespace makgcn {

void TrainConfig::validate() const {
  if (!(lr_min >= 0.0)) throw ConfigError("lr_min", "must be >= 0");
  if (!(lr_max > lr_min)) throw ConfigError("lr_max", "must exceed lr_min");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum", "must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay", "must be >= 0");
  if (batch_size < 1) throw ConfigError("batch", "must be >= 1");
  if (max_epochs < 1) throw ConfigError("epochs", "must be >= 1");
  if (patience < 1) throw ConfigError("patience", "must be >= 1");
}

double cosine_lr(std::size_t t, std::size_t total, double lr_max, double lr_min, std::ostream* warn) {
  if (total < 1) throw ConfigError("epochs", "cosine schedule needs T >= 1");
  if (t > total) {
    if (warn) *warn << "warning: schedule step " << t << " beyond T = " << total << ", using lr_min\n";
    return lr_min;
  }
  if (2 * t == total) return lr_min + 0.5 * (lr_max - lr_min);  // cos(pi/2) is not exactly 0
  const double phase = std::numbers::pi * static_cast<double>(t) / static_cast<double>(total);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(phase));
}

template <typename T>
void sgd_step(std::span<Parameter<T>* const> params, double lr, double momentum, double weight_decay) {
  for (Parameter<T>* p : params) {
    Tensor<T>& value = p->value;
    if (!value.has_grad()) continue;
    if (!p->momentum.defined()) p->momentum = Tensor<T>(value.shape());
    auto w = value.data();
    auto g = std::as_const(value).grad();
    auto buf = p->momentum.data();
    const T lr_t = static_cast<T>(lr), m_t = static_cast<T>(momentum), wd_t = static_cast<T>(weight_decay);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const T step = g[i] + wd_t * w[i];
      buf[i] = m_t * buf[i] + step;
      w[i] -= lr_t * buf[i];
    }
  }
}

bool EarlyStopper::observe(double val_loss) {
  ++epochs_;
  if (epochs_ == 1 || val_loss < best_) {
    best_ = val_loss;
    best_epoch_ = epochs_;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

Metrics Metrics::from_confusion(std::vector<std::vector<std::uint64_t>> confusion, Averaging averaging) {
  const std::size_t g = confusion.size();
  Metrics m;
  std::uint64_t total = 0, correct = 0;
  std::vector<std::uint64_t> support(g, 0), predicted(g, 0);
  for (std::size_t i = 0; i < g; ++i) {
    if (confusion[i].size() != g) throw DimensionError("confusion matrix must be square");
    for (std::size_t j = 0; j < g; ++j) {
      total += confusion[i][j];
      support[i] += confusion[i][j];
      predicted[j] += confusion[i][j];
    }
    correct += confusion[i][i];
  }
  if (total == 0) throw InvalidInputError("metrics need at least one prediction");
  m.accuracy = static_cast<double>(correct) / static_cast<double>(total);
  double weight_sum = 0.0;
  for (std::size_t c = 0; c < g; ++c) {
    const double tp = static_cast<double>(confusion[c][c]);
    const double prec = predicted[c] ? tp / static_cast<double>(predicted[c]) : 0.0;
    const double rec = support[c] ? tp / static_cast<double>(support[c]) : 0.0;
    const double f1 = prec + rec > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    const double w = averaging == Averaging::weighted ? static_cast<double>(support[c]) : 1.0;
    m.precision += w * prec;
    m.recall += w * rec;
    m.f1 += w * f1;
    weight_sum += w;
  }
  m.precision /= weight_sum;
  m.recall /= weight_sum;
  m.f1 /= weight_sum;
  m.confusion = std::move(confusion);
  return m;
}

std::string history_row(const EpochRecord& r) {
  std::ostringstream os;
  os.precision(17);
  os << r.epoch << ',' << r.lr << ',' << r.train_loss << ',' << r.val_loss << ',' << r.val_accuracy;
  return os.str();
}

void write_history(std::ostream& out, const std::vector<EpochRecord>& history) {
  out << kHistoryHeader << '\n';
  for (const auto& r : history) out << history_row(r) << '\n';
}

template <typename T>
Tensor<T> stack_batch(const std::vector<Sample>& samples, std::span<const std::size_t> indices,
                      std::vector<int>* labels) {
  if (indices.empty()) throw InvalidInputError("empty batch");
  const Sample& first = samples.at(indices[0]);
  const std::size_t c = first.channels, n = first.n_points;
  std::vector<T> values;
  values.reserve(indices.size() * c * n);
  if (labels) labels->clear();
  for (std::size_t i : indices) {
    const Sample& s = samples.at(i);
    if (s.channels != c || s.n_points != n || s.values.size() != c * n) {
      throw DataError("samples in one batch must share shape (" + std::to_string(c) + ", " +
                      std::to_string(n) + ")");
    }
    for (double v : s.values) values.push_back(static_cast<T>(v));
    if (labels) labels->push_back(s.label);
  }
  return Tensor<T>(Shape{indices.size(), c, n}, std::move(values));
}

template <typename T>
int argmax(std::span<const T> values) {
  return static_cast<int>(std::max_element(values.begin(), values.end()) - values.begin());
}

template <typename T>
std::vector<std::vector<T>> predict_logits(Model<T>& model, const std::vector<Sample>& samples,
                                           std::size_t batch_size) {
  NoGradGuard no_grad;
  std::vector<std::vector<T>> out;
  out.reserve(samples.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    idx.resize(std::min(batch_size, samples.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor<T> logits = model.forward(stack_batch<T>(samples, idx), Mode::eval);
    const std::size_t g = logits.dim(1);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      out.emplace_back(logits.data().begin() + b * g, logits.data().begin() + (b + 1) * g);
    }
  }
  return out;
}

template <typename T>
Evaluation<T> evaluate(Model<T>& model, const std::vector<Sample>& samples, std::size_t batch_size,
                       Averaging averaging) {
  if (samples.empty()) throw InvalidInputError("evaluate: empty dataset");
  const std::size_t g = model.config().num_classes;
  const auto logits = predict_logits(model, samples, batch_size);
  std::vector<std::vector<std::uint64_t>> confusion(g, std::vector<std::uint64_t>(g, 0));
  Evaluation<T> ev;
  double loss = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const int label = samples[i].label;
    if (label < 0 || static_cast<std::size_t>(label) >= g) {
      throw DataError("label " + std::to_string(label) + " outside the model's " + std::to_string(g) + " classes");
    }
    const std::span<const T> row(logits[i]);
    const int pred = argmax(row);
    ev.predictions.push_back(pred);
    ++confusion[label][pred];
    // Same max-shifted form as the training loss.
    const double mx = static_cast<double>(*std::max_element(row.begin(), row.end()));
    double z = 0.0;
    for (T v : row) z += std::exp(static_cast<double>(v) - mx);
    loss += std::log(z) + mx - static_cast<double>(row[label]);
  }
  ev.loss = loss / static_cast<double>(samples.size());
  ev.metrics = Metrics::from_confusion(std::move(confusion), averaging);
  return ev;
}

template <typename T>
StateSnapshot<T> StateSnapshot<T>::capture(Model<T>& model) {
  StateSnapshot s;
  const auto refs = model.state();
  for (auto* p : refs.params) s.params.push_back(p->value.storage());
  for (auto* b : refs.buffers) s.buffers.push_back(b->value.storage());
  return s;
}

template <typename T>
void StateSnapshot<T>::restore(Model<T>& model) const {
  const auto refs = model.state();
  if (refs.params.size() != params.size() || refs.buffers.size() != buffers.size()) {
    throw UsageError("snapshot taken from a different model");
  }
  for (std::size_t i = 0; i < params.size(); ++i) refs.params[i]->value.storage() = params[i];
  for (std::size_t i = 0; i < buffers.size(); ++i) refs.buffers[i]->value.storage() = buffers[i];
}

template <typename T>
FitResult<T> fit(Model<T>& model, const std::vector<Sample>& train, const std::vector<Sample>& val,
                 const TrainConfig& config, const FitHooks<T>& hooks) {
  config.validate();
  if (train.empty() || val.empty()) throw DataError("fit needs non-empty train and validation sets");
  const std::size_t g = model.config().num_classes;
  for (const auto* set : {&train, &val}) {
    for (const auto& s : *set) {
      if (s.label < 0 || static_cast<std::size_t>(s.label) >= g) {
        throw DataError("label " + std::to_string(s.label) + " outside the model's " + std::to_string(g) +
                        " classes");
      }
    }
  }

  FitResult<T> result;
  EarlyStopper stopper(config.patience);
  StateSnapshot<T> best;
  auto params = model.parameters();
  std::vector<std::size_t> order(train.size());
  std::vector<int> labels;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const double lr = cosine_lr(epoch - 1, config.max_epochs, config.lr_max, config.lr_min);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(config.seed, {0xE90C, epoch}));
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
    Rng dropout_rng(derive_seed(config.seed, {0xD809, epoch}));

    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t size = std::min(config.batch_size, order.size() - start);
      // A lone trailing sample gives degenerate batch statistics.
      if (size == 1 && start > 0) break;
      const std::span<const std::size_t> idx(order.data() + start, size);
      const Tensor<T> logits = model.forward(stack_batch<T>(train, idx, &labels), Mode::train, &dropout_rng);
      const Tensor<T> loss = softmax_cross_entropy(logits, std::span<const int>(labels));
      const double value = static_cast<double>(loss.item());
      if (!std::isfinite(value)) {
        throw DivergenceError("training loss became non-finite at epoch " + std::to_string(epoch) +
                              ", batch starting at " + std::to_string(start));
      }
      model.zero_grad();
      backward(loss);
      sgd_step<T>(params, lr, config.momentum, config.weight_decay);
      loss_sum += value * static_cast<double>(size);
      seen += size;
    }

    const Evaluation<T> ev = evaluate(model, val, config.eval_batch_size());
    if (!std::isfinite(ev.loss)) {
      throw DivergenceError("validation loss became non-finite at epoch " + std::to_string(epoch));
    }
    const EpochRecord record{epoch, lr, loss_sum / static_cast<double>(seen), ev.loss, ev.metrics.accuracy};
    result.history.push_back(record);
    if (hooks.on_epoch) hooks.on_epoch(record);
    if (stopper.observe(record.val_loss)) {
      best = StateSnapshot<T>::capture(model);
      result.best_epoch = epoch;
      result.best_val_loss = record.val_loss;
      result.best_val_accuracy = record.val_accuracy;
      if (hooks.on_improve) hooks.on_improve(record, model);
    }
    if (stopper.should_stop()) {
      result.stopped_early = epoch < config.max_epochs;
      break;
    }
  }
  best.restore(model);
  return result;
}

#define MAKGCN_TRAINING(T)                                                                           \
  template void sgd_step<T>(std::span<Parameter<T>* const>, double, double, double);                 \
  template Tensor<T> stack_batch<T>(const std::vector<Sample>&, std::span<const std::size_t>,        \
                                    std::vector<int>*);                                              \
  template int argmax<T>(std::span<const T>);                                                        \
  template std::vector<std::vector<T>> predict_logits<T>(Model<T>&, const std::vector<Sample>&,      \
                                                         std::size_t);                               \
  template Evaluation<T> evaluate<T>(Model<T>&, const std::vector<Sample>&, std::size_t, Averaging); \
  template struct StateSnapshot<T>;                                                                  \
  template FitResult<T> fit<T>(Model<T>&, const std::vector<Sample>&, const std::vector<Sample>&,    \
                               const TrainConfig&, const FitHooks<T>&);

MAKGCN_TRAINING(float)
MAKGCN_TRAINING(double)

}  // namespace makgcn
