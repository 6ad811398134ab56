#include "driftlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

#include "driftlab/errors.hpp"
#include "driftlab/model.hpp"

namespace driftlab {

BinaryMatrix::BinaryMatrix(std::size_t rows, std::size_t cols, std::vector<std::uint8_t> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) throw std::invalid_argument("BinaryMatrix: data size mismatch");
  for (auto v : data_)
    if (v > 1) throw std::invalid_argument("BinaryMatrix: entries must be 0 or 1");
}

bool BinaryMatrix::row_all_zero(std::size_t r) const {
  for (std::size_t c = 0; c < cols_; ++c)
    if ((*this)(r, c)) return false;
  return true;
}

BinaryMatrix label_matrix(std::span<const Document* const> docs, std::size_t n_labels) {
  BinaryMatrix m(docs.size(), n_labels);
  for (std::size_t i = 0; i < docs.size(); ++i)
    for (LabelId l : docs[i]->labels)
      if (l < n_labels) m.set(i, l, true);
  return m;
}

PredictionSet make_predictions(const Tensor& logits, double threshold) {
  PredictionSet p{Tensor(logits.rows(), logits.cols()), BinaryMatrix(logits.rows(), logits.cols())};
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    for (std::size_t j = 0; j < logits.cols(); ++j) {
      const double z = logits(i, j);
      const double prob = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
      p.scores(i, j) = prob;
      p.decisions.set(i, j, prob > threshold);
    }
  }
  return p;
}

namespace {

void check_shapes(const BinaryMatrix& a, const BinaryMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(fmt::format("metric shape mismatch: {}x{} vs {}x{}", a.rows(), a.cols(), b.rows(), b.cols()));
}

double f1(std::size_t tp, std::size_t fp, std::size_t fn) {
  const std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

}  // namespace

double micro_f1(const BinaryMatrix& targets, const BinaryMatrix& decisions) {
  check_shapes(targets, decisions);
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < targets.rows(); ++i) {
    for (std::size_t j = 0; j < targets.cols(); ++j) {
      const bool y = targets(i, j), d = decisions(i, j);
      tp += y && d;
      fp += !y && d;
      fn += y && !d;
    }
  }
  return f1(tp, fp, fn);
}

double macro_f1(const BinaryMatrix& targets, const BinaryMatrix& decisions) {
  check_shapes(targets, decisions);
  if (targets.cols() == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t j = 0; j < targets.cols(); ++j) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < targets.rows(); ++i) {
      const bool y = targets(i, j), d = decisions(i, j);
      tp += y && d;
      fp += !y && d;
      fn += y && !d;
    }
    sum += f1(tp, fp, fn);
  }
  return sum / static_cast<double>(targets.cols());
}

double mean_r_precision(const BinaryMatrix& targets, const Tensor& scores) {
  if (targets.rows() != scores.rows() || targets.cols() != scores.cols())
    throw std::invalid_argument("mean_r_precision: shape mismatch");
  std::vector<std::size_t> order(targets.cols());
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < targets.rows(); ++i) {
    std::size_t r = 0;
    for (std::size_t j = 0; j < targets.cols(); ++j) r += targets(i, j);
    if (r == 0) continue;
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores(i, a) > scores(i, b); });
    std::size_t hits = 0;
    for (std::size_t k = 0; k < r; ++k) hits += targets(i, order[k]);
    sum += static_cast<double>(hits) / static_cast<double>(r);
    ++counted;
  }
  if (counted == 0) throw ValidationError("mean R-Precision is undefined: no document has a true label");
  return sum / static_cast<double>(counted);
}

std::pair<BinaryMatrix, BinaryMatrix> augment_no_positive(const BinaryMatrix& targets, const BinaryMatrix& decisions) {
  auto augment = [](const BinaryMatrix& m) {
    BinaryMatrix out(m.rows(), m.cols() + 1);
    for (std::size_t i = 0; i < m.rows(); ++i) {
      for (std::size_t j = 0; j < m.cols(); ++j) out.set(i, j, m(i, j));
      out.set(i, m.cols(), m.row_all_zero(i));
    }
    return out;
  };
  return {augment(targets), augment(decisions)};
}

Tensor augment_scores_no_positive(const Tensor& scores) {
  Tensor out(scores.rows(), scores.cols() + 1);
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    double mx = 0.0;
    for (std::size_t j = 0; j < scores.cols(); ++j) {
      out(i, j) = scores(i, j);
      mx = std::max(mx, scores(i, j));
    }
    out(i, scores.cols()) = 1.0 - mx;
  }
  return out;
}

Metrics compute_metrics(const BinaryMatrix& targets, const Tensor& logits, const MetricOptions& options) {
  PredictionSet pred = make_predictions(logits, options.threshold);
  BinaryMatrix y = targets;
  BinaryMatrix d = std::move(pred.decisions);
  Tensor scores = std::move(pred.scores);
  if (options.extra_label) {
    std::tie(y, d) = augment_no_positive(y, d);
    scores = augment_scores_no_positive(scores);
  }
  Metrics m;
  m.macro_f1 = macro_f1(y, d);
  m.micro_f1 = micro_f1(y, d);
  bool any_positive = false;
  for (std::size_t i = 0; i < y.rows() && !any_positive; ++i) any_positive = !y.row_all_zero(i);
  m.mrp = any_positive ? mean_r_precision(y, scores) : 0.0;
  return m;
}

Metrics evaluate(const ModelState& model, const DocRefs& docs, const MetricOptions& options) {
  constexpr std::size_t kChunk = 256;
  const std::size_t N = model.config.n_labels;
  Tensor logits(docs.size(), N);
  for (std::size_t start = 0; start < docs.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, docs.size() - start);
    auto [chunk, cache] = forward(model, std::span<const Document* const>(docs.data() + start, n));
    std::copy(chunk.data().begin(), chunk.data().end(), logits.data().begin() + static_cast<std::ptrdiff_t>(start * N));
  }
  return compute_metrics(label_matrix(docs, N), logits, options);
}

}  // namespace driftlab
