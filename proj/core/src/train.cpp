#include "driftlab/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

#include "driftlab/errors.hpp"

namespace driftlab {

void adamw_step(OptimizerState& opt, ModelState& model, const Gradients& grads) {
  if (grads.tensors.size() != model.params.size())
    throw std::invalid_argument(
        fmt::format("adamw_step: {} gradients for {} parameters", grads.tensors.size(), model.params.size()));
  ++opt.step;
  const double t = static_cast<double>(opt.step);
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    auto& p = model.params[i];
    if (!p.trainable) continue;
    const Tensor& g = grads.tensors[i];
    if (!g.same_shape(p.value))
      throw std::invalid_argument(fmt::format("adamw_step: gradient for '{}' has shape {}, expected {}", p.name,
                                              shape_string(g.shape()), shape_string(p.value.shape())));
    auto it = opt.moments.find(p.name);
    if (it == opt.moments.end())
      it = opt.moments.emplace(p.name, OptimizerState::Moments{Tensor(p.value.shape()), Tensor(p.value.shape())})
               .first;
    auto& m = it->second.m.data();
    auto& v = it->second.v.data();
    auto& theta = p.value.data();
    const auto& gd = g.data();
    const double decay = p.is_bias ? 0.0 : opt.weight_decay;
    for (std::size_t k = 0; k < theta.size(); ++k) {
      m[k] = opt.beta1 * m[k] + (1.0 - opt.beta1) * gd[k];
      v[k] = opt.beta2 * v[k] + (1.0 - opt.beta2) * gd[k] * gd[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      theta[k] -= opt.lr * (mhat / (std::sqrt(vhat) + opt.eps) + decay * theta[k]);
    }
  }
  model.touch();
}

void TrainConfig::validate() const {
  if (max_epochs < 1) throw ValidationError("max_epochs must be >= 1");
  if (patience < 1) throw ValidationError("patience must be >= 1");
  if (warmup_epochs && *warmup_epochs >= max_epochs)
    throw ValidationError(fmt::format("warmup_epochs ({}) must be < max_epochs ({})", *warmup_epochs, max_epochs));
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (!(lr > 0.0)) throw ValidationError("lr must be positive");
  if (weight_decay < 0.0) throw ValidationError("weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ValidationError("beta1 must lie in [0, 1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) throw ValidationError("beta2 must lie in (0, 1)");
  if (!(eps > 0.0)) throw ValidationError("eps must be positive");
  if (min_docs_per_period < 1) throw ValidationError("min_docs_per_period must be >= 1");
  if (!(metrics.threshold > 0.0 && metrics.threshold < 1.0)) throw ValidationError("threshold must lie in (0, 1)");
}

OptimizerState TrainConfig::make_optimizer() const {
  OptimizerState o;
  o.lr = lr;
  o.weight_decay = weight_decay;
  o.beta1 = beta1;
  o.beta2 = beta2;
  o.eps = eps;
  return o;
}

EarlyStopper::EarlyStopper(std::size_t patience, std::size_t warmup_epochs) : patience_(patience), warmup_(warmup_epochs) {
  if (patience < 1) throw ValidationError("patience must be >= 1");
}

EarlyStopper::Verdict EarlyStopper::observe(std::size_t epoch, double metric) {
  if (epoch < warmup_) return {};
  if (!best_epoch_ || metric > best_metric_) {
    best_epoch_ = epoch;
    best_metric_ = metric;
    stale_ = 0;
    return {true, false};
  }
  ++stale_;
  return {false, stale_ >= patience_};
}

TrainedModel fit_period(ModelState model, const DocRefs& train, const DocRefs& val, const TrainConfig& config,
                        OptimizerState& optimizer, Strategy& strategy, const PeriodContext& context) {
  if (train.empty()) throw ValidationError("fit_period: empty training split");
  if (val.empty()) throw ValidationError("fit_period: empty validation split");
  const std::size_t warmup = config.warmup_epochs.value_or(0);
  EarlyStopper stopper(config.patience, warmup);

  strategy.begin_period(model, context);
  Rng rng(config.shuffle_seed);
  DocRefs order = train;
  TrainedModel out{model, 0, 0.0, {}};
  Gradients grads;
  DocRefs batch;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    rng.shuffle(std::span<const Document*>(order));
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, order.size() - start);
      batch.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                   order.begin() + static_cast<std::ptrdiff_t>(start + n));
      const DocRefs replay = strategy.replay_batch();
      batch.insert(batch.end(), replay.begin(), replay.end());
      double loss = strategy.objective(model, batch, grads);
      loss += strategy.add_penalty(model, batch, grads);
      strategy.transform_gradient(model, grads);
      adamw_step(optimizer, model, grads);
      loss_sum += loss;
      ++steps;
    }
    const double val_f1 = evaluate(model, val, config.metrics).macro_f1;
    out.log.push_back({context.period, epoch, loss_sum / static_cast<double>(steps), val_f1});
    const auto verdict = stopper.observe(epoch, val_f1);
    if (verdict.improved) {
      out.model = model;
      out.best_epoch = epoch;
      out.best_val_metric = val_f1;
    }
    if (verdict.stop) break;
  }
  if (!stopper.best_epoch()) throw std::logic_error("fit_period: no epoch reached the end of warmup");
  strategy.end_period(out.model, context, train);
  return out;
}

TrainedModel fit_period(ModelState model, const DocRefs& train, const DocRefs& val, const TrainConfig& config) {
  auto optimizer = config.make_optimizer();
  Strategy plain;
  const PeriodGroup group{train.empty() ? 0 : train.back()->timestamp, train};
  const PeriodContext context{group.period, std::span<const PeriodGroup>(&group, 1), config.batch_size};
  return fit_period(std::move(model), train, val, config, optimizer, plain, context);
}

std::string_view to_string(BaselineVariant v) {
  switch (v) {
    case BaselineVariant::Full: return "full";
    case BaselineVariant::Old: return "old";
    case BaselineVariant::Recent: return "recent";
  }
  return "?";
}

TrainedModel train_baseline(const Corpus& corpus, const SplitPlan& plan, BaselineVariant variant,
                            const ModelConfig& model_config, const TrainConfig& config) {
  config.validate();
  DocRefs train = corpus.select(plan.train);
  const DocRefs val = corpus.select(plan.val);
  if (train.empty()) throw ValidationError("baseline: empty training bucket");
  if (variant != BaselineVariant::Full) {
    auto [old_half, recent] = halve_training(train);
    train = variant == BaselineVariant::Old ? std::move(old_half) : std::move(recent);
  }
  return fit_period(init_model(model_config), train, val, config);
}

IncrementalTrainer::IncrementalTrainer(ModelState initial, TrainConfig config, Strategy* strategy)
    : config_(std::move(config)),
      strategy_(strategy ? strategy : &base_strategy_),
      optimizer_(config_.make_optimizer()),
      current_{std::move(initial), 0, 0.0, {}} {
  if (!config_.warmup_epochs) config_.warmup_epochs = kDefaultIftWarmup;
  config_.validate();
}

const TrainedModel& IncrementalTrainer::advance(Period period, const DocRefs& period_docs, const DocRefs& val) {
  if (!history_.empty() && period <= history_.back().period)
    throw ValidationError(fmt::format("IFT periods must ascend: {} after {}", period, history_.back().period));
  history_.push_back({period, period_docs});
  if (!config_.carry_optimizer) optimizer_.reset();
  TrainConfig cfg = config_;
  cfg.shuffle_seed = config_.shuffle_seed + fits_;
  const PeriodContext context{period, history_, cfg.batch_size};
  current_ = fit_period(std::move(current_.model), period_docs, val, cfg, optimizer_, *strategy_, context);
  log_.insert(log_.end(), current_.log.begin(), current_.log.end());
  ++fits_;
  return current_;
}

IftResult train_ift(const Corpus& corpus, const SplitPlan& plan, const ModelConfig& model_config,
                    const TrainConfig& config, Strategy* strategy) {
  config.validate();
  const DocRefs val = corpus.select(plan.val);
  const auto groups = group_by_period(corpus.select(plan.train), config.min_docs_per_period);
  if (groups.empty()) throw ValidationError("IFT: no training periods");
  IncrementalTrainer trainer(init_model(model_config), config, strategy);
  IftResult out;
  for (const auto& g : groups) {
    trainer.advance(g.period, g.docs, val);
    out.checkpoints.emplace_back(g.period, trainer.model());
  }
  out.final = trainer.current();
  out.final.log = trainer.log();
  out.fit_count = trainer.fit_count();
  return out;
}

}  // namespace driftlab
