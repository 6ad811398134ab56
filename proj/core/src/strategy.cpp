#include <algorithm>
#include <stdexcept>

#include <fmt/format.h>

#include "driftlab/errors.hpp"
#include "driftlab/strategies.hpp"

namespace driftlab {

void Strategy::begin_period(ModelState&, const PeriodContext& ctx) { batch_size_ = ctx.batch_size; }

DocRefs Strategy::replay_batch() { return {}; }

double Strategy::objective(const ModelState& model, std::span<const Document* const> batch, Gradients& grads) {
  auto tg = task_gradient(model, batch);
  grads = std::move(tg.grads);
  return tg.loss;
}

double Strategy::add_penalty(const ModelState&, std::span<const Document* const>, Gradients&) { return 0.0; }

void Strategy::transform_gradient(const ModelState&, Gradients&) {}

void Strategy::end_period(const ModelState&, const PeriodContext&, const DocRefs&) {}

std::string_view to_string(StrategyKind k) {
  switch (k) {
    case StrategyKind::None: return "ift";
    case StrategyKind::Ewc: return "ewc";
    case StrategyKind::Er: return "er";
    case StrategyKind::Agem: return "agem";
    case StrategyKind::Lora: return "lora";
    case StrategyKind::Adapter: return "adapter";
    case StrategyKind::Coral: return "coral";
    case StrategyKind::Irm: return "irm";
    case StrategyKind::GroupDro: return "groupdro";
  }
  return "?";
}

namespace {

class EwcStrategy final : public Strategy {
 public:
  explicit EwcStrategy(const StrategyConfig& c) {
    state_.lambda = c.ewc_lambda;
    state_.gamma = c.ewc_gamma;
  }
  std::string_view name() const override { return "ewc"; }

  double add_penalty(const ModelState& model, std::span<const Document* const>, Gradients& grads) override {
    if (state_.lambda == 0.0 || !state_.anchored()) return 0.0;
    auto p = ewc_penalty(model, state_);
    grads.add_scaled(p.grads, 1.0);
    return p.value;
  }

  void end_period(const ModelState& model, const PeriodContext&, const DocRefs& docs) override {
    if (state_.lambda == 0.0 || docs.empty()) return;
    ewc_end_period(model, docs, state_);
  }

 private:
  EwcState state_;
};

class ErStrategy final : public Strategy {
 public:
  explicit ErStrategy(const StrategyConfig& c)
      : buffer_(c.er_capacity, mix_seed(c.seed, 11)), replay_every_(c.er_replay_every), fraction_(c.er_fraction) {
    if (replay_every_ < 1) throw ValidationError("er replay_every must be >= 1");
  }
  std::string_view name() const override { return "er"; }

  DocRefs replay_batch() override {
    auto batch = er_step(++step_, buffer_, replay_every_, batch_size_);
    return batch ? std::move(*batch) : DocRefs{};
  }

  void end_period(const ModelState&, const PeriodContext& ctx, const DocRefs& docs) override {
    er_end_period(buffer_, ctx.period, docs, fraction_);
  }

 private:
  ReplayBuffer buffer_;
  std::size_t replay_every_;
  double fraction_;
  std::size_t step_ = 0;
};

class AgemStrategy final : public Strategy {
 public:
  explicit AgemStrategy(const StrategyConfig& c) : memory_(c.agem_capacity, mix_seed(c.seed, 12)) {}
  std::string_view name() const override { return "agem"; }

  void transform_gradient(const ModelState& model, Gradients& grads) override {
    if (memory_.empty()) return;
    const DocRefs ref = memory_.sample(batch_size_);
    const auto ref_grad = task_gradient(model, ref);
    const auto projected = agem_project(grads.flatten(model), ref_grad.grads.flatten(model));
    grads.unflatten(model, projected);
  }

  void end_period(const ModelState&, const PeriodContext& ctx, const DocRefs& docs) override {
    for (const Document* d : docs) reservoir_insert(memory_, {d, ctx.period});
  }

 private:
  ReplayBuffer memory_;
};

/// Trains the first period with every weight free, then freezes the base and
/// trains only the attached expansion from the second period on.
class ExpansionStrategy final : public Strategy {
 public:
  explicit ExpansionStrategy(const StrategyConfig& c) : config_(c) {
    if (c.kind == StrategyKind::Adapter) adapter_bottleneck(1, c.adapter_reduction);
    if (c.kind == StrategyKind::Lora && c.lora_rank < 1) throw ValidationError("LoRA rank must be >= 1");
  }
  std::string_view name() const override { return to_string(config_.kind); }

  void begin_period(ModelState& model, const PeriodContext& ctx) override {
    Strategy::begin_period(model, ctx);
    if (!config_.expansion_enabled || periods_done_ == 0 || model.lora || model.adapter) return;
    if (config_.kind == StrategyKind::Lora) {
      // A target narrower than the configured rank caps it; alpha follows so
      // the alpha/r scale stays as configured.
      std::size_t rank = config_.lora_rank;
      for (const auto& t : config_.lora_targets) {
        if (const auto i = model.index_of(t)) rank = std::min({rank, model.params[*i].value.rows(), model.params[*i].value.cols()});
      }
      const double alpha = config_.lora_alpha * static_cast<double>(rank) / static_cast<double>(config_.lora_rank);
      attach_lora(model, config_.lora_targets, rank, alpha);
    } else
      attach_adapter(model, config_.adapter_reduction);
  }

  void end_period(const ModelState&, const PeriodContext&, const DocRefs&) override { ++periods_done_; }

 private:
  StrategyConfig config_;
  std::size_t periods_done_ = 0;
};

/// Common plumbing for objectives defined over domains drawn from the sliding
/// window that ends at the current period. The current batch stands in for
/// the current period's domain.
class InvariantStrategy : public Strategy {
 public:
  explicit InvariantStrategy(const StrategyConfig& c)
      : window_length_(c.window_length), domains_per_window_(c.domains_per_window), rng_(mix_seed(c.seed, 13)) {
    if (window_length_ < 1) throw ValidationError("window length must be >= 1");
    if (domains_per_window_ < 1) throw ValidationError("domains_per_window must be >= 1");
  }

  void begin_period(ModelState& model, const PeriodContext& ctx) override {
    Strategy::begin_period(model, ctx);
    history_.assign(ctx.history.begin(), ctx.history.end());
    current_ = ctx.period;
    std::vector<Period> periods;
    for (const auto& g : history_) periods.push_back(g.period);
    const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(window_length_), periods.size());
    window_ = DomainWindow{static_cast<int>(periods.size() - len),
                           {periods.end() - static_cast<std::ptrdiff_t>(len), periods.end()}};
  }

 protected:
  std::size_t domain_count() const { return std::min(domains_per_window_, window_.periods.size()); }

  std::vector<DocRefs> sample_domains(std::span<const Document* const> current) {
    auto batch = make_domain_batches(history_, window_, domains_per_window_, batch_size_, rng_);
    std::vector<DocRefs> out;
    for (auto& d : batch.domains) {
      if (d.period == current_) out.emplace_back(current.begin(), current.end());
      else out.push_back(std::move(d.docs));
    }
    return out;
  }

 private:
  int window_length_;
  std::size_t domains_per_window_;
  Rng rng_;
  std::vector<PeriodGroup> history_;
  Period current_ = 0;
  DomainWindow window_{0, {}};
};

class CoralStrategy final : public InvariantStrategy {
 public:
  explicit CoralStrategy(const StrategyConfig& c) : InvariantStrategy(c), lambda_(c.coral_lambda) {}
  std::string_view name() const override { return "coral"; }

  double add_penalty(const ModelState& model, std::span<const Document* const> batch, Gradients& grads) override {
    if (lambda_ == 0.0 || domain_count() < 2) return 0.0;
    const auto domains = sample_domains(batch);
    std::vector<ForwardCache> caches;
    std::vector<Tensor> features;
    for (const auto& d : domains) {
      auto [logits, cache] = forward(model, d);
      features.push_back(extract_features(model, cache));
      caches.push_back(std::move(cache));
    }
    const auto pen = coral_penalty(features, lambda_);
    for (std::size_t e = 0; e < domains.size(); ++e) {
      const Tensor zero(domains[e].size(), model.config.n_labels);
      grads.add_scaled(backward(model, caches[e], zero, &pen.grads[e]), 1.0);
    }
    return pen.value;
  }

 private:
  double lambda_;
};

class IrmStrategy final : public InvariantStrategy {
 public:
  explicit IrmStrategy(const StrategyConfig& c) : InvariantStrategy(c), lambda_(c.irm_lambda) {}
  std::string_view name() const override { return "irm"; }

  double add_penalty(const ModelState& model, std::span<const Document* const> batch, Gradients& grads) override {
    if (lambda_ == 0.0) return 0.0;
    const auto domains = sample_domains(batch);
    std::vector<ForwardCache> caches;
    std::vector<Tensor> logits, targets;
    for (const auto& d : domains) {
      auto [z, cache] = forward(model, d);
      logits.push_back(std::move(z));
      targets.push_back(target_matrix(d, model.config.n_labels));
      caches.push_back(std::move(cache));
    }
    const auto pen = irm_penalty(logits, targets, lambda_);
    for (std::size_t e = 0; e < domains.size(); ++e) grads.add_scaled(backward(model, caches[e], pen.grads[e]), 1.0);
    return pen.value;
  }

 private:
  double lambda_;
};

class GroupDroStrategy final : public InvariantStrategy {
 public:
  explicit GroupDroStrategy(const StrategyConfig& c) : InvariantStrategy(c), eta_(c.dro_eta) {}
  std::string_view name() const override { return "groupdro"; }

  void begin_period(ModelState& model, const PeriodContext& ctx) override {
    InvariantStrategy::begin_period(model, ctx);
    state_ = GroupDroState::uniform(domain_count(), eta_);
  }

  double objective(const ModelState& model, std::span<const Document* const> batch, Gradients& grads) override {
    const auto domains = sample_domains(batch);
    std::vector<double> losses;
    std::vector<Gradients> per_domain;
    for (const auto& d : domains) {
      auto tg = task_gradient(model, d);
      losses.push_back(tg.loss);
      per_domain.push_back(std::move(tg.grads));
    }
    const double weighted = groupdro_update(losses, state_);
    grads = Gradients::zeros_like(model);
    for (std::size_t e = 0; e < per_domain.size(); ++e) grads.add_scaled(per_domain[e], state_.q[e]);
    return weighted;
  }

 private:
  double eta_;
  GroupDroState state_;
};

}  // namespace

std::unique_ptr<Strategy> make_strategy(const StrategyConfig& c) {
  switch (c.kind) {
    case StrategyKind::None: return std::make_unique<Strategy>();
    case StrategyKind::Ewc: return std::make_unique<EwcStrategy>(c);
    case StrategyKind::Er: return std::make_unique<ErStrategy>(c);
    case StrategyKind::Agem: return std::make_unique<AgemStrategy>(c);
    case StrategyKind::Lora:
    case StrategyKind::Adapter: return std::make_unique<ExpansionStrategy>(c);
    case StrategyKind::Coral: return std::make_unique<CoralStrategy>(c);
    case StrategyKind::Irm: return std::make_unique<IrmStrategy>(c);
    case StrategyKind::GroupDro: return std::make_unique<GroupDroStrategy>(c);
  }
  throw std::logic_error("unknown strategy kind");
}

}  // namespace driftlab
