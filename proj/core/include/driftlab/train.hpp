#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "driftlab/corpus.hpp"
#include "driftlab/metrics.hpp"
#include "driftlab/model.hpp"
#include "driftlab/strategies.hpp"

namespace driftlab {

inline constexpr double kDefaultLearningRate = 1e-2;
/// Learning rate used for pretrained transformers; kept as a preset.
inline constexpr double kPretrainedLearningRate = 2e-5;
inline constexpr std::size_t kDefaultIftWarmup = 3;

struct OptimizerState {
  struct Moments {
    Tensor m;
    Tensor v;
  };

  double lr = kDefaultLearningRate;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::uint64_t step = 0;
  /// Keyed by parameter name so tensors added mid-run get fresh moments.
  std::map<std::string, Moments, std::less<>> moments;

  void reset() {
    step = 0;
    moments.clear();
  }
};

/// One AdamW update with decoupled decay:
/// θ ← θ − lr·(m̂/(√v̂ + ε) + wd·θ). Frozen tensors are skipped and biases get no decay.
void adamw_step(OptimizerState& optimizer, ModelState& model, const Gradients& grads);

struct TrainConfig {
  std::size_t max_epochs = 20;
  std::size_t patience = 3;
  /// Unset means the regime default: 3 for IFT, 0 otherwise.
  std::optional<std::size_t> warmup_epochs;
  std::size_t batch_size = 32;
  std::uint64_t shuffle_seed = 0;
  double lr = kDefaultLearningRate;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Keep optimizer moments across IFT periods instead of resetting them.
  bool carry_optimizer = false;
  std::size_t min_docs_per_period = 1;
  MetricOptions metrics;

  void validate() const;
  OptimizerState make_optimizer() const;
};

/// Tracks the best validation score over eligible epochs (1-based epoch ≥
/// warmup) and signals a stop after `patience` eligible epochs without a
/// strict improvement.
class EarlyStopper {
 public:
  EarlyStopper(std::size_t patience, std::size_t warmup_epochs);

  struct Verdict {
    bool improved = false;
    bool stop = false;
  };
  Verdict observe(std::size_t epoch, double metric);

  std::optional<std::size_t> best_epoch() const { return best_epoch_; }
  double best_metric() const { return best_metric_; }

 private:
  std::size_t patience_;
  std::size_t warmup_;
  std::optional<std::size_t> best_epoch_;
  double best_metric_ = 0.0;
  std::size_t stale_ = 0;
};

struct EpochLog {
  Period period = 0;
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_macro_f1 = 0.0;
};

struct TrainedModel {
  ModelState model;
  std::size_t best_epoch = 0;
  double best_val_metric = 0.0;
  std::vector<EpochLog> log;
};

/// Epoch loop with early stopping on validation macro-F1. The strategy's
/// period hooks run around the loop and its step hooks inside it.
TrainedModel fit_period(ModelState model, const DocRefs& train, const DocRefs& val, const TrainConfig& config,
                        OptimizerState& optimizer, Strategy& strategy, const PeriodContext& context);

/// fit_period with a fresh optimizer and no strategy.
TrainedModel fit_period(ModelState model, const DocRefs& train, const DocRefs& val, const TrainConfig& config);

enum class BaselineVariant { Full, Old, Recent };

std::string_view to_string(BaselineVariant v);

/// Trains from initialization on the plan's training documents (or one half of them).
TrainedModel train_baseline(const Corpus& corpus, const SplitPlan& plan, BaselineVariant variant,
                            const ModelConfig& model_config, const TrainConfig& config);

/// Fine-tunes one period at a time, each period starting from the previous
/// period's best model. Strategy state persists across periods.
class IncrementalTrainer {
 public:
  /// An unset warmup defaults to 3 epochs.
  IncrementalTrainer(ModelState initial, TrainConfig config, Strategy* strategy = nullptr);
  IncrementalTrainer(const IncrementalTrainer&) = delete;
  IncrementalTrainer& operator=(const IncrementalTrainer&) = delete;

  /// One fit_period on `period_docs`; periods must arrive in ascending order.
  const TrainedModel& advance(Period period, const DocRefs& period_docs, const DocRefs& val);

  const ModelState& model() const { return current_.model; }
  const TrainedModel& current() const { return current_; }
  std::size_t fit_count() const { return fits_; }
  const std::vector<EpochLog>& log() const { return log_; }

 private:
  TrainConfig config_;
  Strategy base_strategy_;
  Strategy* strategy_;
  OptimizerState optimizer_;
  std::vector<PeriodGroup> history_;
  TrainedModel current_;
  std::vector<EpochLog> log_;
  std::size_t fits_ = 0;
};

struct IftResult {
  TrainedModel final;
  /// Best model after each period, in period order.
  std::vector<std::pair<Period, ModelState>> checkpoints;
  std::size_t fit_count = 0;
};

/// IFT over the plan's training periods (sparse periods merged per
/// min_docs_per_period), validating every period on the plan's val bucket.
IftResult train_ift(const Corpus& corpus, const SplitPlan& plan, const ModelConfig& model_config,
                    const TrainConfig& config, Strategy* strategy = nullptr);

}  // namespace driftlab
