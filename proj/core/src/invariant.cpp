#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

#include "driftlab/errors.hpp"
#include "driftlab/strategies.hpp"

namespace driftlab {

namespace {

struct Moments {
  std::vector<double> mean;
  Tensor cov;  // h×h, zero when n = 1
};

Moments moments(const Tensor& x) {
  const std::size_t n = x.rows(), h = x.cols();
  Moments m{std::vector<double>(h, 0.0), Tensor(h, h)};
  for (std::size_t i = 0; i < n; ++i) axpy(1.0 / static_cast<double>(n), x.row(i), m.mean);
  if (n < 2) return m;
  std::vector<double> c(h);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < h; ++a) c[a] = x(i, a) - m.mean[a];
    for (std::size_t a = 0; a < h; ++a) axpy(c[a] / static_cast<double>(n - 1), c, m.cov.row(a));
  }
  return m;
}

double sigmoid(double z) { return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

}  // namespace

DomainPenalty coral_penalty(const std::vector<Tensor>& features, double lambda) {
  const std::size_t D = features.size();
  if (D < 2) throw ValidationError("CORAL needs at least two domains");
  const std::size_t h = features[0].cols();
  for (const auto& f : features) {
    if (f.rows() < 1) throw ValidationError("CORAL domain has no rows");
    if (f.cols() != h) throw std::invalid_argument("CORAL feature dimension mismatch");
  }
  std::vector<Moments> mom;
  for (const auto& f : features) mom.push_back(moments(f));

  const double cov_w = 1.0 / (4.0 * static_cast<double>(h * h));
  const double pairs = static_cast<double>(D * (D - 1) / 2);
  const double scale = lambda / pairs;
  std::vector<std::vector<double>> g_mean(D, std::vector<double>(h, 0.0));
  std::vector<Tensor> g_cov(D, Tensor(h, h));
  double total = 0.0;
  for (std::size_t s = 0; s < D; ++s) {
    for (std::size_t t = s + 1; t < D; ++t) {
      for (std::size_t a = 0; a < h; ++a) {
        const double dm = mom[s].mean[a] - mom[t].mean[a];
        total += dm * dm;
        g_mean[s][a] += 2.0 * dm * scale;
        g_mean[t][a] -= 2.0 * dm * scale;
      }
      for (std::size_t k = 0; k < h * h; ++k) {
        const double dc = mom[s].cov[k] - mom[t].cov[k];
        total += cov_w * dc * dc;
        g_cov[s][k] += 2.0 * cov_w * dc * scale;
        g_cov[t][k] -= 2.0 * cov_w * dc * scale;
      }
    }
  }

  DomainPenalty out{scale * total, {}};
  for (std::size_t s = 0; s < D; ++s) {
    const Tensor& x = features[s];
    const std::size_t n = x.rows();
    Tensor g(n, h);
    std::vector<double> c(h);
    for (std::size_t i = 0; i < n; ++i) {
      auto gi = g.row(i);
      axpy(1.0 / static_cast<double>(n), g_mean[s], gi);
      if (n < 2) continue;
      for (std::size_t a = 0; a < h; ++a) c[a] = x(i, a) - mom[s].mean[a];
      const double w = 2.0 / static_cast<double>(n - 1);
      for (std::size_t a = 0; a < h; ++a) gi[a] += w * dot(g_cov[s].row(a), c);
    }
    out.grads.push_back(std::move(g));
  }
  return out;
}

DomainPenalty irm_penalty(const std::vector<Tensor>& logits, const std::vector<Tensor>& targets, double lambda) {
  if (logits.empty()) throw ValidationError("IRM needs at least one domain");
  if (logits.size() != targets.size()) throw std::invalid_argument("IRM: logits/targets domain count mismatch");
  const double E = static_cast<double>(logits.size());
  DomainPenalty out;
  double total = 0.0;
  for (std::size_t e = 0; e < logits.size(); ++e) {
    const Tensor& z = logits[e];
    const Tensor& y = targets[e];
    if (!z.same_shape(y)) throw std::invalid_argument("IRM: logits/targets shape mismatch");
    Tensor g(z.shape());
    if (z.size() == 0) {
      out.grads.push_back(std::move(g));
      continue;
    }
    const double M = static_cast<double>(z.size());
    double grad_w = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) grad_w += z[i] * (sigmoid(z[i]) - y[i]);
    grad_w /= M;
    total += grad_w * grad_w;
    const double coef = lambda / E * 2.0 * grad_w / M;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double s = sigmoid(z[i]);
      g[i] = coef * (s - y[i] + z[i] * s * (1.0 - s));
    }
    out.grads.push_back(std::move(g));
  }
  out.value = lambda * total / E;
  return out;
}

GroupDroState GroupDroState::uniform(std::size_t domains, double eta) {
  if (domains == 0) throw ValidationError("GroupDRO needs at least one domain");
  return {std::vector<double>(domains, 1.0 / static_cast<double>(domains)), eta};
}

double groupdro_update(std::span<const double> losses, GroupDroState& state) {
  if (losses.size() != state.q.size())
    throw std::invalid_argument(fmt::format("GroupDRO: {} losses for {} domains", losses.size(), state.q.size()));
  for (double l : losses)
    if (!std::isfinite(l)) throw std::domain_error("GroupDRO: non-finite domain loss");
  std::vector<double> logw(losses.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t e = 0; e < losses.size(); ++e) {
    logw[e] = std::log(state.q[e]) + state.eta * losses[e];
    mx = std::max(mx, logw[e]);
  }
  double z = 0.0;
  for (auto& w : logw) z += (w = std::exp(w - mx));
  double weighted = 0.0;
  for (std::size_t e = 0; e < losses.size(); ++e) {
    state.q[e] = logw[e] / z;
    weighted += state.q[e] * losses[e];
  }
  return weighted;
}

DomainBatch make_domain_batches(std::span<const PeriodGroup> history, const DomainWindow& window,
                                std::size_t domains_per_window, std::size_t batch_size, Rng& rng) {
  if (domains_per_window < 1) throw ValidationError("domains_per_window must be >= 1");
  if (batch_size < 1) throw ValidationError("batch size must be >= 1");
  if (window.periods.empty()) throw ValidationError("empty domain window");
  DomainBatch out{window, {}};
  const std::size_t k = std::min(domains_per_window, window.periods.size());
  for (std::size_t i = window.periods.size() - k; i < window.periods.size(); ++i) {
    const Period p = window.periods[i];
    auto it = std::find_if(history.begin(), history.end(), [p](const PeriodGroup& g) { return g.period == p; });
    if (it == history.end() || it->docs.empty())
      throw ValidationError(fmt::format("domain window period {} has no documents", p));
    const auto& docs = it->docs;
    const std::size_t n = std::min(batch_size, docs.size());
    std::vector<std::size_t> idx(docs.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    PeriodGroup g{p, {}};
    for (std::size_t s = 0; s < n; ++s) {
      const auto j = s + static_cast<std::size_t>(rng.below(idx.size() - s));
      std::swap(idx[s], idx[j]);
      g.docs.push_back(docs[idx[s]]);
    }
    out.domains.push_back(std::move(g));
  }
  return out;
}

}  // namespace driftlab
