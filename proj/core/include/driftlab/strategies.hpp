#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "driftlab/corpus.hpp"
#include "driftlab/model.hpp"
#include "driftlab/random.hpp"

namespace driftlab {

// ---------------------------------------------------------------------------
// Shared pieces

struct TaskGradient {
  double loss = 0.0;
  Gradients grads;
};

/// forward → bce_loss → backward over one batch.
TaskGradient task_gradient(const ModelState& model, std::span<const Document* const> batch);

/// A penalty value with its gradient w.r.t. model parameters.
struct PenaltyResult {
  double value = 0.0;
  Gradients grads;
};

// ---------------------------------------------------------------------------
// EWC (online, diagonal empirical Fisher)

inline constexpr double kDefaultEwcLambda = 0.5;
inline constexpr double kDefaultEwcGamma = 1.0;

struct EwcState {
  /// Aligned with ModelState::params; frozen tensors carry zero Fisher.
  std::vector<Tensor> anchor;
  std::vector<Tensor> fisher;
  double lambda = kDefaultEwcLambda;
  double gamma = kDefaultEwcGamma;
  bool anchored() const { return !anchor.empty(); }
};

/// (λ/2)·Σ F(θ − θ*)² and its gradient λ·F(θ − θ*). Zero before the first anchor.
PenaltyResult ewc_penalty(const ModelState& model, const EwcState& state);

/// Per-parameter mean over documents of the squared per-document BCE gradient.
std::vector<Tensor> empirical_fisher(const ModelState& model, const DocRefs& docs);

/// F ← γ·F + F_new, anchor ← θ.
void ewc_end_period(const ModelState& model, const DocRefs& period_docs, EwcState& state);

// ---------------------------------------------------------------------------
// Replay memory

struct ReplayItem {
  const Document* doc;
  Period period;
};

class ReplayBuffer {
 public:
  /// No capacity means an unbounded, growing memory.
  explicit ReplayBuffer(std::optional<std::size_t> capacity = std::nullopt, std::uint64_t seed = 0)
      : capacity_(capacity), rng_(seed) {}

  const std::vector<ReplayItem>& items() const { return items_; }
  std::vector<ReplayItem>& items() { return items_; }
  std::optional<std::size_t> capacity() const { return capacity_; }
  std::uint64_t seen_count() const { return seen_; }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  Rng& rng() { return rng_; }

  /// Uniform draw of min(n, size) distinct items.
  DocRefs sample(std::size_t n);

  void note_seen() { ++seen_; }

 private:
  std::optional<std::size_t> capacity_;
  std::vector<ReplayItem> items_;
  std::uint64_t seen_ = 0;
  Rng rng_;
};

inline constexpr std::size_t kDefaultReplayEvery = 10;
inline constexpr std::size_t kDefaultAgemCapacity = 1000;

/// Replay batch on steps that are multiples of `replay_every` when the buffer is non-empty.
std::optional<DocRefs> er_step(std::size_t step_index, ReplayBuffer& buffer, std::size_t replay_every,
                               std::size_t batch_size);

/// Stores round(fraction·n) of the period's documents (all by default).
void er_end_period(ReplayBuffer& buffer, Period period, const DocRefs& period_docs, double fraction = 1.0);

/// Algorithm R: append while below capacity, otherwise overwrite a uniform
/// slot with probability capacity/seen.
void reservoir_insert(ReplayBuffer& buffer, ReplayItem item);

/// g if g·g_ref ≥ 0, else g − (g·g_ref / g_ref·g_ref)·g_ref.
std::vector<double> agem_project(std::span<const double> g, std::span<const double> g_ref);

// ---------------------------------------------------------------------------
// Temporal-invariant objectives

inline constexpr double kDefaultCoralLambda = 0.001;
inline constexpr double kDefaultIrmLambda = 1.0;
inline constexpr double kDefaultGroupDroEta = 0.01;
inline constexpr int kDefaultWindowLength = 5;
inline constexpr std::size_t kDefaultDomainsPerWindow = 3;

struct DomainPenalty {
  double value = 0.0;
  /// One gradient matrix per domain, shaped like that domain's input.
  std::vector<Tensor> grads;
};

/// λ · mean over domain pairs of ‖μ_s − μ_t‖² + ‖C_s − C_t‖²_F / (4h²).
DomainPenalty coral_penalty(const std::vector<Tensor>& features, double lambda = kDefaultCoralLambda);

/// λ · mean over domains of (mean z·(σ(z) − y))², the squared gradient of
/// each domain's risk w.r.t. a scalar dummy classifier at 1.
DomainPenalty irm_penalty(const std::vector<Tensor>& logits, const std::vector<Tensor>& targets,
                          double lambda = kDefaultIrmLambda);

struct GroupDroState {
  std::vector<double> q;
  double eta = kDefaultGroupDroEta;

  static GroupDroState uniform(std::size_t domains, double eta = kDefaultGroupDroEta);
};

/// Exponentiated-gradient update of q followed by the q-weighted loss.
double groupdro_update(std::span<const double> losses, GroupDroState& state);

struct DomainBatch {
  DomainWindow window;
  std::vector<PeriodGroup> domains;
};

/// Takes the `domains_per_window` most recent periods of the window (all of
/// them when the window is shorter) and samples up to `batch_size` documents
/// uniformly without replacement from each.
DomainBatch make_domain_batches(std::span<const PeriodGroup> history, const DomainWindow& window,
                                std::size_t domains_per_window, std::size_t batch_size, Rng& rng);

// ---------------------------------------------------------------------------
// Strategy interface driven by fit_period

struct PeriodContext {
  Period period = 0;
  /// Every period trained so far, ascending, including the current one.
  std::span<const PeriodGroup> history;
  std::size_t batch_size = 32;
};

/// Hooks fit_period calls per step, in order: replay_batch, objective,
/// add_penalty, transform_gradient. Period boundaries bracket them.
class Strategy {
 public:
  virtual ~Strategy() = default;
  virtual std::string_view name() const { return "ift"; }

  virtual void begin_period(ModelState& model, const PeriodContext& ctx);
  /// Extra documents trained alongside the current batch.
  virtual DocRefs replay_batch();
  /// Task loss over the batch; writes its gradient into `grads`.
  virtual double objective(const ModelState& model, std::span<const Document* const> batch, Gradients& grads);
  /// Adds penalty gradients into `grads` and returns the penalty value.
  virtual double add_penalty(const ModelState& model, std::span<const Document* const> batch, Gradients& grads);
  virtual void transform_gradient(const ModelState& model, Gradients& grads);
  virtual void end_period(const ModelState& model, const PeriodContext& ctx, const DocRefs& period_docs);

 protected:
  std::size_t batch_size_ = 32;
};

enum class StrategyKind { None, Ewc, Er, Agem, Lora, Adapter, Coral, Irm, GroupDro };

std::string_view to_string(StrategyKind k);

struct StrategyConfig {
  StrategyKind kind = StrategyKind::None;
  std::uint64_t seed = 0;

  double ewc_lambda = kDefaultEwcLambda;
  double ewc_gamma = kDefaultEwcGamma;

  std::size_t er_replay_every = kDefaultReplayEvery;
  double er_fraction = 1.0;
  std::optional<std::size_t> er_capacity;

  std::size_t agem_capacity = kDefaultAgemCapacity;

  /// When false, LoRA/adapter strategies never attach their expansion.
  bool expansion_enabled = true;
  std::vector<std::string> lora_targets{std::string(param::kEncWeight), std::string(param::kOutWeight)};
  std::size_t lora_rank = kDefaultLoraRank;
  double lora_alpha = kDefaultLoraAlpha;
  std::size_t adapter_reduction = kDefaultAdapterReduction;

  double coral_lambda = kDefaultCoralLambda;
  double irm_lambda = kDefaultIrmLambda;
  double dro_eta = kDefaultGroupDroEta;
  int window_length = kDefaultWindowLength;
  std::size_t domains_per_window = kDefaultDomainsPerWindow;
};

std::unique_ptr<Strategy> make_strategy(const StrategyConfig& config);

}  // namespace driftlab
