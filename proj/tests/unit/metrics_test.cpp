#include <gtest/gtest.h>

#include "driftlab/errors.hpp"
#include "driftlab/metrics.hpp"
#include "oracles.hpp"

namespace driftlab {
namespace {

BinaryMatrix mat(std::size_t r, std::size_t c, std::vector<std::uint8_t> v) { return {r, c, std::move(v)}; }

TEST(Metrics, HandTalliedExample) {
  const auto y = mat(2, 2, {1, 0, 1, 1});
  const auto d = mat(2, 2, {1, 1, 0, 1});
  EXPECT_DOUBLE_EQ(micro_f1(y, d), 4.0 / 6.0);
  EXPECT_DOUBLE_EQ(macro_f1(y, d), 2.0 / 3.0);
}

TEST(Metrics, TrivialCases) {
  const auto y = mat(2, 2, {1, 0, 0, 1});
  EXPECT_EQ(micro_f1(y, y), 1.0);
  EXPECT_EQ(macro_f1(y, y), 1.0);
  EXPECT_EQ(micro_f1(y, BinaryMatrix(2, 2)), 0.0);
  EXPECT_EQ(macro_f1(mat(1, 2, {1, 1}), mat(1, 2, {1, 0})), 0.5);
  EXPECT_EQ(micro_f1(BinaryMatrix(2, 2), BinaryMatrix(2, 2)), 0.0);
  EXPECT_THROW(micro_f1(y, BinaryMatrix(2, 3)), std::invalid_argument);
  EXPECT_THROW(macro_f1(y, BinaryMatrix(3, 2)), std::invalid_argument);
}

TEST(MeanRPrecision, Examples) {
  Tensor s(1, 3);
  s(0, 0) = 0.9;
  s(0, 1) = 0.1;
  s(0, 2) = 0.5;
  EXPECT_DOUBLE_EQ(mean_r_precision(mat(1, 3, {1, 1, 0}), s), 0.5);
  EXPECT_DOUBLE_EQ(mean_r_precision(mat(1, 3, {1, 0, 1}), s), 1.0);
  Tensor tie(1, 2, 0.5);
  EXPECT_EQ(mean_r_precision(mat(1, 2, {1, 0}), tie), 1.0);
  EXPECT_EQ(mean_r_precision(mat(1, 2, {0, 1}), tie), 0.0);
  EXPECT_THROW(mean_r_precision(BinaryMatrix(1, 2), tie), ValidationError);
}

TEST(MeanRPrecision, SkipsDocumentsWithoutLabels) {
  Tensor s(2, 2);
  s(0, 0) = 0.9;
  s(1, 1) = 0.9;
  EXPECT_EQ(mean_r_precision(mat(2, 2, {1, 0, 0, 0}), s), 1.0);
}

TEST(MeanRPrecision, SingleLabelIsPrecisionAtOne) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(8), c = 2 + rng.below(4);
    BinaryMatrix y(n, c);
    for (std::size_t i = 0; i < n; ++i) y.set(i, rng.below(c), true);
    const Tensor s = oracle::random_matrix(n, c, rng);
    double hits = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < c; ++j)
        if (s(i, j) > s(i, best)) best = j;
      hits += y(i, best);
    }
    EXPECT_DOUBLE_EQ(mean_r_precision(y, s), hits / static_cast<double>(n));
  }
}

TEST(AugmentNoPositive, AppendsAbstentionColumn) {
  const auto [y, d] = augment_no_positive(mat(2, 2, {0, 0, 1, 0}), mat(2, 2, {0, 0, 0, 0}));
  EXPECT_EQ(y, mat(2, 3, {0, 0, 1, 1, 0, 0}));
  EXPECT_EQ(d, mat(2, 3, {0, 0, 1, 0, 0, 1}));
  const auto [y1, d1] = augment_no_positive(BinaryMatrix(1, 2), BinaryMatrix(1, 2));
  EXPECT_EQ(micro_f1(y1, d1), 1.0);

  Tensor s(1, 2);
  s(0, 0) = 0.25;
  s(0, 1) = 0.75;
  const Tensor a = augment_scores_no_positive(s);
  ASSERT_EQ(a.cols(), 3u);
  EXPECT_DOUBLE_EQ(a(0, 2), 0.25);
}

TEST(Metrics, MatchBruteForceOracle) {
  Rng rng(17);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(8), c = 1 + rng.below(5);
    const auto y = oracle::random_binary(n, c, rng);
    const auto d = oracle::random_binary(n, c, rng);
    EXPECT_EQ(micro_f1(y, d), oracle::micro_f1(y, d));
    EXPECT_EQ(macro_f1(y, d), oracle::macro_f1(y, d));
    Tensor s(n, c);
    for (auto& v : s.data()) v = static_cast<double>(rng.below(4)) / 4.0;
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) any = any || !y.row_all_zero(i);
    if (any) {
      EXPECT_EQ(mean_r_precision(y, s), oracle::mean_r_precision(y, s));
    }
    const auto [ya, da] = augment_no_positive(y, d);
    EXPECT_EQ(ya, oracle::with_extra_column(y));
    EXPECT_EQ(da, oracle::with_extra_column(d));
  }
}

TEST(Metrics, InvariantUnderDocumentPermutation) {
  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.below(7), c = 1 + rng.below(5);
    const auto y = oracle::random_binary(n, c, rng);
    const auto d = oracle::random_binary(n, c, rng);
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(std::span<std::size_t>(perm));
    BinaryMatrix py(n, c), pd(n, c);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        py.set(i, j, y(perm[i], j));
        pd.set(i, j, d(perm[i], j));
      }
    EXPECT_DOUBLE_EQ(micro_f1(py, pd), micro_f1(y, d));
    EXPECT_DOUBLE_EQ(macro_f1(py, pd), macro_f1(y, d));
  }
}

TEST(ComputeMetrics, ThresholdsSigmoidAndAppliesExtraLabel) {
  Tensor logits(2, 2);
  logits(0, 0) = 2.0;
  logits(0, 1) = -2.0;
  logits(1, 0) = -3.0;
  logits(1, 1) = -1.0;
  const auto y = mat(2, 2, {1, 0, 0, 0});
  const auto plain = compute_metrics(y, logits);
  EXPECT_EQ(plain.micro_f1, 1.0);
  EXPECT_EQ(plain.macro_f1, 0.5);
  EXPECT_EQ(plain.mrp, 1.0);
  const auto extra = compute_metrics(y, logits, MetricOptions{0.5, true});
  EXPECT_EQ(extra.micro_f1, 1.0);
  EXPECT_NEAR(extra.macro_f1, 2.0 / 3.0, 1e-15);
  EXPECT_EQ(extra.mrp, 1.0);
  const auto preds = make_predictions(logits, 0.5);
  EXPECT_EQ(preds.decisions, mat(2, 2, {1, 0, 0, 0}));
  EXPECT_NEAR(preds.scores(0, 0), 1.0 / (1.0 + std::exp(-2.0)), 1e-15);
}

}  // namespace
}  // namespace driftlab
