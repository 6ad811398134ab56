#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "driftlab/corpus.hpp"
#include "driftlab/tensor.hpp"

namespace driftlab {

class ModelState;

/// Row-major binary matrix (documents × labels).
class BinaryMatrix {
 public:
  BinaryMatrix() = default;
  BinaryMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0) {}
  BinaryMatrix(std::size_t rows, std::size_t cols, std::vector<std::uint8_t> data);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::uint8_t operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  void set(std::size_t r, std::size_t c, bool v) { data_[r * cols_ + c] = v ? 1 : 0; }
  bool row_all_zero(std::size_t r) const;

  friend bool operator==(const BinaryMatrix&, const BinaryMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> data_;
};

BinaryMatrix label_matrix(std::span<const Document* const> docs, std::size_t n_labels);

inline constexpr double kDefaultThreshold = 0.5;

/// Sigmoid probabilities and thresholded decisions (prob > threshold).
struct PredictionSet {
  Tensor scores;
  BinaryMatrix decisions;
};

PredictionSet make_predictions(const Tensor& logits, double threshold = kDefaultThreshold);

double micro_f1(const BinaryMatrix& targets, const BinaryMatrix& decisions);
double macro_f1(const BinaryMatrix& targets, const BinaryMatrix& decisions);
/// Mean over documents with at least one true label of the fraction of the
/// top-R scored labels that are true (R = true-label count). Ties go to the
/// lower label id.
double mean_r_precision(const BinaryMatrix& targets, const Tensor& scores);

/// Appends a column set to 1 exactly where the row has no positive label.
std::pair<BinaryMatrix, BinaryMatrix> augment_no_positive(const BinaryMatrix& targets, const BinaryMatrix& decisions);
/// Score column for the extra label: 1 − max probability of the row.
Tensor augment_scores_no_positive(const Tensor& scores);

struct MetricOptions {
  double threshold = kDefaultThreshold;
  bool extra_label = false;
};

struct Metrics {
  double macro_f1 = 0.0;
  double micro_f1 = 0.0;
  double mrp = 0.0;
};

Metrics compute_metrics(const BinaryMatrix& targets, const Tensor& logits, const MetricOptions& options = {});

/// Forward pass over `docs` in chunks followed by compute_metrics.
Metrics evaluate(const ModelState& model, const DocRefs& docs, const MetricOptions& options = {});

}  // namespace driftlab
