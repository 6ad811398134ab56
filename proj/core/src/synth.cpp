#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <fmt/format.h>

#include "driftlab/corpus.hpp"
#include "driftlab/errors.hpp"
#include "driftlab/random.hpp"

namespace driftlab {

namespace {

std::size_t sample_cdf(const std::vector<double>& cdf, Rng& rng) {
  const double u = rng.uniform() * cdf.back();
  auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  return static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - cdf.begin(), static_cast<std::ptrdiff_t>(cdf.size()) - 1));
}

}  // namespace

// Each label owns a start keyword block; its end block is part fresh tokens,
// part the start block of the next label, so drift both introduces new
// vocabulary and re-assigns old keywords.
Corpus synth_drift_corpus(const SynthParams& p, const SynthShape& shape) {
  if (p.n_periods < 1 || p.docs_per_period < 1 || p.vocab_size < 1 || p.n_labels < 1)
    throw ValidationError("synth_drift_corpus: all sizes must be positive");
  if (!(p.drift_rate >= 0.0 && p.drift_rate <= 1.0))
    throw ValidationError("synth_drift_corpus: drift_rate must lie in [0, 1]");
  for (double share : {shape.background_share, shape.rotated_share, shape.prior_spread})
    if (!(share >= 0.0 && share <= 1.0)) throw ValidationError("synth_drift_corpus: shape shares must lie in [0, 1]");
  if (shape.min_length < 1 || shape.length_spread < 0)
    throw ValidationError("synth_drift_corpus: document lengths must be positive");

  Rng rng(p.seed);
  const auto V = static_cast<std::size_t>(p.vocab_size);
  const auto N = static_cast<std::size_t>(p.n_labels);

  std::vector<TokenId> perm(V);
  std::iota(perm.begin(), perm.end(), TokenId{0});
  rng.shuffle(std::span<TokenId>(perm));

  const std::size_t k = std::max<std::size_t>(1, V / (4 * N));
  auto block_token = [&](std::size_t block, std::size_t i) { return perm[(block * k + i) % V]; };

  std::vector<std::vector<TokenId>> start_block(N), end_block(N);
  const auto rotated = static_cast<std::size_t>(std::floor(shape.rotated_share * static_cast<double>(k)));
  for (std::size_t l = 0; l < N; ++l) {
    for (std::size_t i = 0; i < k; ++i) start_block[l].push_back(block_token(l, i));
    for (std::size_t i = 0; i < k - rotated; ++i) end_block[l].push_back(block_token(N + l, i));
    for (std::size_t i = 0; i < rotated; ++i) end_block[l].push_back(block_token((l + 1) % N, i));
  }

  // Zipf background over the permutation read backwards, so keyword tokens
  // (front of the permutation) are the rarest background tokens.
  std::vector<double> background_cdf(V);
  double acc = 0.0;
  for (std::size_t r = 0; r < V; ++r) {
    acc += 1.0 / std::pow(static_cast<double>(r + 1), 0.8);
    background_cdf[r] = acc;
  }

  std::vector<double> prior_start(N), prior_end(N);
  for (auto& w : prior_start) w = rng.uniform(1.0 - shape.prior_spread, 1.0 + shape.prior_spread);
  for (auto& w : prior_end) w = rng.uniform(1.0 - shape.prior_spread, 1.0 + shape.prior_spread);

  std::vector<std::string> token_names(V), label_names(N);
  const int tw = static_cast<int>(std::to_string(V - 1).size());
  for (std::size_t i = 0; i < V; ++i) token_names[i] = fmt::format("w{:0{}}", i, tw);
  const int lw = static_cast<int>(std::to_string(N - 1).size());
  for (std::size_t i = 0; i < N; ++i) label_names[i] = fmt::format("L{:0{}}", i, lw);

  std::vector<Document> docs;
  docs.reserve(static_cast<std::size_t>(p.n_periods) * static_cast<std::size_t>(p.docs_per_period));
  for (int period = 0; period < p.n_periods; ++period) {
    const double progress = p.n_periods > 1 ? static_cast<double>(period) / (p.n_periods - 1) : 0.0;
    const double w = p.drift_rate * progress;

    std::vector<double> prior(N);
    for (std::size_t l = 0; l < N; ++l) prior[l] = (1.0 - w) * prior_start[l] + w * prior_end[l];

    for (int di = 0; di < p.docs_per_period; ++di) {
      const double u = rng.uniform();
      std::size_t n_doc_labels = u < 0.55 ? 1 : (u < 0.9 ? 2 : 3);
      n_doc_labels = std::min(n_doc_labels, N);
      std::vector<LabelId> labels;
      std::vector<double> remaining = prior;
      for (std::size_t j = 0; j < n_doc_labels; ++j) {
        std::vector<double> cdf(N);
        std::partial_sum(remaining.begin(), remaining.end(), cdf.begin());
        const auto l = sample_cdf(cdf, rng);
        labels.push_back(static_cast<LabelId>(l));
        remaining[l] = 0.0;
      }
      std::sort(labels.begin(), labels.end());

      std::map<TokenId, std::uint32_t> counts;
      const auto length = shape.min_length + static_cast<int>(rng.below(shape.length_spread + 1));
      for (int t = 0; t < length; ++t) {
        TokenId tok;
        if (rng.bernoulli(shape.background_share)) {
          tok = perm[V - 1 - sample_cdf(background_cdf, rng)];
        } else {
          const auto l = labels[rng.below(labels.size())];
          const auto& block = rng.bernoulli(w) ? end_block[l] : start_block[l];
          tok = block[rng.below(block.size())];
        }
        ++counts[tok];
      }

      Document d;
      d.id = fmt::format("p{:04d}-{:06d}", period + 1, di);
      d.timestamp = period + 1;
      for (const auto& [tok, c] : counts) d.tokens.push_back({tok, c});
      d.labels = std::move(labels);
      docs.push_back(std::move(d));
    }
  }
  return Corpus(std::move(docs), Vocabulary(std::move(token_names)), Vocabulary(std::move(label_names)), 1);
}

}  // namespace driftlab
