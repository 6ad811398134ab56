#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

#include "driftlab/errors.hpp"
#include "driftlab/strategies.hpp"

namespace driftlab {

TaskGradient task_gradient(const ModelState& model, std::span<const Document* const> batch) {
  auto [logits, cache] = forward(model, batch);
  auto loss = bce_loss(logits, target_matrix(batch, model.config.n_labels));
  return {loss.loss, backward(model, cache, loss.grad)};
}

// ---------------------------------------------------------------------------
// EWC

PenaltyResult ewc_penalty(const ModelState& model, const EwcState& state) {
  PenaltyResult r{0.0, Gradients::zeros_like(model)};
  if (!state.anchored()) return r;
  if (state.anchor.size() != model.params.size() || state.fisher.size() != model.params.size())
    throw std::invalid_argument("EWC state does not match the model's parameter structure");
  double sum = 0.0;
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    const auto& theta = model.params[i].value.data();
    const auto& anchor = state.anchor[i].data();
    const auto& fisher = state.fisher[i].data();
    if (anchor.size() != theta.size() || fisher.size() != theta.size())
      throw std::invalid_argument(fmt::format("EWC shape mismatch on '{}'", model.params[i].name));
    auto& g = r.grads.tensors[i].data();
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double diff = theta[k] - anchor[k];
      sum += fisher[k] * diff * diff;
      g[k] = state.lambda * fisher[k] * diff;
    }
  }
  r.value = 0.5 * state.lambda * sum;
  return r;
}

std::vector<Tensor> empirical_fisher(const ModelState& model, const DocRefs& docs) {
  if (docs.empty()) throw ValidationError("Fisher estimate needs at least one document");
  std::vector<Tensor> fisher;
  for (const auto& p : model.params) fisher.emplace_back(p.value.shape());
  for (const Document* d : docs) {
    const auto tg = task_gradient(model, std::span<const Document* const>(&d, 1));
    for (std::size_t i = 0; i < fisher.size(); ++i) {
      if (!model.params[i].trainable) continue;
      auto& f = fisher[i].data();
      const auto& g = tg.grads.tensors[i].data();
      for (std::size_t k = 0; k < f.size(); ++k) f[k] += g[k] * g[k];
    }
  }
  const double inv = 1.0 / static_cast<double>(docs.size());
  for (auto& f : fisher) f.scale_inplace(inv);
  return fisher;
}

void ewc_end_period(const ModelState& model, const DocRefs& period_docs, EwcState& state) {
  auto fresh = empirical_fisher(model, period_docs);
  if (state.anchored()) {
    if (state.fisher.size() != fresh.size()) throw std::invalid_argument("EWC state does not match the model");
    for (std::size_t i = 0; i < fresh.size(); ++i) {
      if (!state.fisher[i].same_shape(fresh[i])) throw std::invalid_argument("EWC Fisher shape mismatch");
      auto& f = fresh[i].data();
      const auto& old = state.fisher[i].data();
      for (std::size_t k = 0; k < f.size(); ++k) f[k] += state.gamma * old[k];
    }
  }
  state.fisher = std::move(fresh);
  state.anchor.clear();
  for (const auto& p : model.params) state.anchor.push_back(p.value);
}

// ---------------------------------------------------------------------------
// Replay memory

DocRefs ReplayBuffer::sample(std::size_t n) {
  const std::size_t k = std::min(n, items_.size());
  std::vector<std::size_t> idx(items_.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  DocRefs out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::size_t>(rng_.below(idx.size() - i));
    std::swap(idx[i], idx[j]);
    out.push_back(items_[idx[i]].doc);
  }
  return out;
}

std::optional<DocRefs> er_step(std::size_t step_index, ReplayBuffer& buffer, std::size_t replay_every,
                               std::size_t batch_size) {
  if (replay_every < 1) throw ValidationError("replay interval must be >= 1");
  if (buffer.empty() || step_index % replay_every != 0) return std::nullopt;
  return buffer.sample(batch_size);
}

void er_end_period(ReplayBuffer& buffer, Period period, const DocRefs& period_docs, double fraction) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ValidationError("replay fraction must lie in [0, 1]");
  const auto keep = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(period_docs.size())));
  std::vector<std::size_t> chosen(period_docs.size());
  std::iota(chosen.begin(), chosen.end(), std::size_t{0});
  if (keep < period_docs.size()) {
    for (std::size_t i = 0; i < keep; ++i) {
      const auto j = i + static_cast<std::size_t>(buffer.rng().below(chosen.size() - i));
      std::swap(chosen[i], chosen[j]);
    }
    chosen.resize(keep);
    std::sort(chosen.begin(), chosen.end());
  }
  for (std::size_t i : chosen) {
    if (buffer.capacity()) {
      reservoir_insert(buffer, {period_docs[i], period});
    } else {
      buffer.note_seen();
      buffer.items().push_back({period_docs[i], period});
    }
  }
}

void reservoir_insert(ReplayBuffer& buffer, ReplayItem item) {
  if (!buffer.capacity()) throw std::logic_error("reservoir_insert requires a capacity");
  const std::size_t cap = *buffer.capacity();
  buffer.note_seen();
  auto& items = buffer.items();
  if (items.size() < cap) {
    items.push_back(item);
    return;
  }
  const auto j = buffer.rng().below(buffer.seen_count());
  if (j < cap) items[static_cast<std::size_t>(j)] = item;
}

std::vector<double> agem_project(std::span<const double> g, std::span<const double> g_ref) {
  if (g.size() != g_ref.size())
    throw std::invalid_argument(fmt::format("A-GEM length mismatch {} vs {}", g.size(), g_ref.size()));
  std::vector<double> out(g.begin(), g.end());
  const double ref_sq = dot(g_ref, g_ref);
  if (ref_sq == 0.0) return out;
  const double d = dot(g, g_ref);
  if (d >= 0.0) return out;
  axpy(-d / ref_sq, g_ref, out);
  return out;
}

}  // namespace driftlab
