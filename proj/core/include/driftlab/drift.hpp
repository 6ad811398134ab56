#pragma once

#include <map>
#include <optional>
#include <vector>

#include "driftlab/corpus.hpp"

namespace driftlab {

/// Token-frequency distribution over a vocabulary.
struct VocabDistribution {
  std::vector<double> probs;
  double smoothing = 0.0;
};

/// probs[i] = (count_i + α) / (total + α·V)
VocabDistribution vocab_distribution(const DocRefs& docs, std::size_t vocab_size, double smoothing = 0.0);

/// Jensen–Shannon divergence with natural log, in [0, ln 2].
double js_divergence(const VocabDistribution& p, const VocabDistribution& q);
double js_divergence(const std::vector<double>& p, const std::vector<double>& q);

struct ConditionalDivergence {
  std::map<LabelId, double> per_label;
  double mean = 0.0;
};

/// Per-label JSD over documents carrying that label in each split. Labels
/// absent from either split are excluded. Throws ValidationError when no
/// label is shared.
ConditionalDivergence conditional_divergence(const DocRefs& split_a, const DocRefs& split_b, const Corpus& corpus,
                                             double smoothing = 0.0);

/// Table-1-shaped report: Old/Recent halves of the train bucket against the
/// test bucket, marginal (x) and label-conditional (x|y).
struct DivergenceReport {
  double jsd_old_x = 0.0;
  double jsd_recent_x = 0.0;
  std::optional<double> jsd_old_xy;
  std::optional<double> jsd_recent_xy;
};

DivergenceReport divergence_report(const Corpus& corpus, const SplitPlan& plan, double smoothing = 0.0);

}  // namespace driftlab
