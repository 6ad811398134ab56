#include "driftlab/drift.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include <fmt/format.h>

#include "driftlab/errors.hpp"

namespace driftlab {

VocabDistribution vocab_distribution(const DocRefs& docs, std::size_t vocab_size, double smoothing) {
  if (smoothing < 0.0) throw ValidationError("smoothing must be non-negative");
  if (vocab_size == 0) throw ValidationError("vocabulary is empty");
  std::vector<double> counts(vocab_size, 0.0);
  double total = 0.0;
  for (const Document* d : docs) {
    for (const auto& tc : d->tokens) {
      if (tc.token >= vocab_size) throw ValidationError(fmt::format("token id {} out of range", tc.token));
      counts[tc.token] += tc.count;
      total += tc.count;
    }
  }
  const double denom = total + smoothing * static_cast<double>(vocab_size);
  if (denom <= 0.0) throw ValidationError("cannot estimate a distribution from no tokens without smoothing");
  for (auto& c : counts) c = (c + smoothing) / denom;
  return {std::move(counts), smoothing};
}

namespace {

void check_normalized(const std::vector<double>& p, const char* which) {
  double s = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw ValidationError(fmt::format("{} has a negative or NaN entry", which));
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-9) throw ValidationError(fmt::format("{} is not normalized (sum {})", which, s));
}

}  // namespace

double js_divergence(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw ValidationError(fmt::format("length mismatch {} vs {}", p.size(), q.size()));
  check_normalized(p, "p");
  check_normalized(q, "q");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    // Each side's term is computed independently and the two are added, so
    // swapping p and q yields the same floating-point sum.
    const double tp = p[i] > 0.0 ? p[i] * std::log(p[i] / m) : 0.0;
    const double tq = q[i] > 0.0 ? q[i] * std::log(q[i] / m) : 0.0;
    s += tp + tq;
  }
  return std::clamp(0.5 * s, 0.0, std::numbers::ln2);
}

double js_divergence(const VocabDistribution& p, const VocabDistribution& q) { return js_divergence(p.probs, q.probs); }

ConditionalDivergence conditional_divergence(const DocRefs& split_a, const DocRefs& split_b, const Corpus& corpus,
                                             double smoothing) {
  std::set<LabelId> in_a, in_b;
  for (const Document* d : split_a) in_a.insert(d->labels.begin(), d->labels.end());
  for (const Document* d : split_b) in_b.insert(d->labels.begin(), d->labels.end());
  ConditionalDivergence out;
  for (LabelId l : in_a) {
    if (!in_b.count(l)) continue;
    DocRefs a, b;
    for (const Document* d : split_a)
      if (d->has_label(l)) a.push_back(d);
    for (const Document* d : split_b)
      if (d->has_label(l)) b.push_back(d);
    out.per_label[l] = js_divergence(vocab_distribution(a, corpus.vocab_size(), smoothing),
                                     vocab_distribution(b, corpus.vocab_size(), smoothing));
  }
  if (out.per_label.empty()) throw ValidationError("no label is present in both splits");
  double s = 0.0;
  for (const auto& [l, v] : out.per_label) s += v;
  out.mean = s / static_cast<double>(out.per_label.size());
  return out;
}

DivergenceReport divergence_report(const Corpus& corpus, const SplitPlan& plan, double smoothing) {
  const DocRefs train = corpus.select(plan.train);
  const DocRefs test = corpus.select(plan.test);
  if (train.empty() || test.empty()) throw ValidationError("divergence report needs non-empty train and test buckets");
  const auto [old_half, recent] = halve_training(train);

  DivergenceReport r;
  const auto test_dist = vocab_distribution(test, corpus.vocab_size(), smoothing);
  r.jsd_old_x = js_divergence(vocab_distribution(old_half, corpus.vocab_size(), smoothing), test_dist);
  r.jsd_recent_x = js_divergence(vocab_distribution(recent, corpus.vocab_size(), smoothing), test_dist);
  try {
    r.jsd_old_xy = conditional_divergence(old_half, test, corpus, smoothing).mean;
    r.jsd_recent_xy = conditional_divergence(recent, test, corpus, smoothing).mean;
  } catch (const ValidationError&) {
    r.jsd_old_xy.reset();
    r.jsd_recent_xy.reset();
  }
  return r;
}

}  // namespace driftlab
