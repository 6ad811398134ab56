#pragma once

// Independent reference implementations used by unit and acceptance tests.
// Nothing here calls into the code it checks beyond building inputs.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "driftlab/corpus.hpp"
#include "driftlab/metrics.hpp"
#include "driftlab/model.hpp"
#include "driftlab/random.hpp"

namespace oracle {

using driftlab::BinaryMatrix;
using driftlab::Corpus;
using driftlab::Document;
using driftlab::ModelState;
using driftlab::Rng;
using driftlab::Tensor;

/// ‖a − b‖ / max(‖a‖, ‖b‖), 0 when both vanish.
inline double rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
}

/// Central differences of `loss` over every trainable entry, in the order of
/// Gradients::flatten.
inline std::vector<double> numeric_gradient(ModelState model, const std::function<double(const ModelState&)>& loss,
                                            double eps = 1e-4) {
  std::vector<double> out;
  for (auto& p : model.params) {
    if (!p.trainable) continue;
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double saved = p.value[k];
      p.value[k] = saved + eps;
      model.touch();
      const double up = loss(model);
      p.value[k] = saved - eps;
      model.touch();
      const double down = loss(model);
      p.value[k] = saved;
      model.touch();
      out.push_back((up - down) / (2.0 * eps));
    }
  }
  return out;
}

/// Central differences of a scalar function of a matrix.
inline Tensor numeric_matrix_gradient(Tensor x, const std::function<double(const Tensor&)>& f, double eps = 1e-4) {
  Tensor g(x.shape());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double saved = x[k];
    x[k] = saved + eps;
    const double up = f(x);
    x[k] = saved - eps;
    const double down = f(x);
    x[k] = saved;
    g[k] = (up - down) / (2.0 * eps);
  }
  return g;
}

inline Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Tensor t(r, c);
  for (auto& v : t.data()) v = rng.uniform(-scale, scale);
  return t;
}

inline Tensor random_targets(std::size_t r, std::size_t c, Rng& rng) {
  Tensor t(r, c);
  for (auto& v : t.data()) v = rng.bernoulli(0.4) ? 1.0 : 0.0;
  return t;
}

/// Random documents over `vocab` tokens and `labels` labels, one period per
/// `per_period` documents.
inline std::vector<Document> random_documents(std::size_t n, std::size_t vocab, std::size_t labels, Rng& rng,
                                              std::size_t per_period = 4) {
  std::vector<Document> docs;
  for (std::size_t i = 0; i < n; ++i) {
    Document d;
    d.id = fmt::format("d{:04d}", i);
    d.timestamp = static_cast<driftlab::Period>(1 + i / per_period);
    std::vector<std::uint32_t> counts(vocab, 0);
    const std::size_t len = 2 + rng.below(6);
    for (std::size_t t = 0; t < len; ++t) ++counts[rng.below(vocab)];
    for (std::uint32_t t = 0; t < vocab; ++t)
      if (counts[t]) d.tokens.push_back({t, counts[t]});
    for (std::uint32_t l = 0; l < labels; ++l)
      if (rng.bernoulli(0.4)) d.labels.push_back(l);
    docs.push_back(std::move(d));
  }
  return docs;
}

inline Corpus make_corpus(std::vector<Document> docs, std::size_t vocab, std::size_t labels) {
  std::vector<std::string> tok, lab;
  for (std::size_t i = 0; i < vocab; ++i) tok.push_back(fmt::format("t{}", i));
  for (std::size_t i = 0; i < labels; ++i) lab.push_back(fmt::format("l{}", i));
  return Corpus(std::move(docs), driftlab::Vocabulary(tok), driftlab::Vocabulary(lab));
}

inline BinaryMatrix random_binary(std::size_t r, std::size_t c, Rng& rng, double p = 0.4) {
  BinaryMatrix m(r, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) m.set(i, j, rng.bernoulli(p));
  return m;
}

// ---------------------------------------------------------------------------
// Metrics by direct counting.

struct Tally {
  long tp = 0, fp = 0, fn = 0;
};

inline double f1_of(const Tally& t) {
  const long denom = 2 * t.tp + t.fp + t.fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(t.tp) / static_cast<double>(denom);
}

inline Tally tally(const BinaryMatrix& y, const BinaryMatrix& d, std::size_t col_lo, std::size_t col_hi) {
  Tally t;
  for (std::size_t i = 0; i < y.rows(); ++i) {
    for (std::size_t j = col_lo; j < col_hi; ++j) {
      if (y(i, j) && d(i, j)) ++t.tp;
      if (!y(i, j) && d(i, j)) ++t.fp;
      if (y(i, j) && !d(i, j)) ++t.fn;
    }
  }
  return t;
}

inline double micro_f1(const BinaryMatrix& y, const BinaryMatrix& d) { return f1_of(tally(y, d, 0, y.cols())); }

inline double macro_f1(const BinaryMatrix& y, const BinaryMatrix& d) {
  double s = 0.0;
  for (std::size_t j = 0; j < y.cols(); ++j) s += f1_of(tally(y, d, j, j + 1));
  return s / static_cast<double>(y.cols());
}

/// Label j is in the top R iff fewer than R labels outrank it, where k
/// outranks j when its score is higher, or equal with a lower id.
inline double mean_r_precision(const BinaryMatrix& y, const Tensor& scores) {
  double sum = 0.0;
  std::size_t docs = 0;
  for (std::size_t i = 0; i < y.rows(); ++i) {
    std::size_t R = 0;
    for (std::size_t j = 0; j < y.cols(); ++j) R += y(i, j);
    if (R == 0) continue;
    std::size_t hits = 0;
    for (std::size_t j = 0; j < y.cols(); ++j) {
      std::size_t above = 0;
      for (std::size_t k = 0; k < y.cols(); ++k)
        if (scores(i, k) > scores(i, j) || (scores(i, k) == scores(i, j) && k < j)) ++above;
      if (above < R && y(i, j)) ++hits;
    }
    sum += static_cast<double>(hits) / static_cast<double>(R);
    ++docs;
  }
  return sum / static_cast<double>(docs);
}

/// The extra "no positive label" column, built cell by cell.
inline BinaryMatrix with_extra_column(const BinaryMatrix& m) {
  BinaryMatrix out(m.rows(), m.cols() + 1);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    bool any = false;
    for (std::size_t j = 0; j < m.cols(); ++j) {
      out.set(i, j, m(i, j));
      any = any || m(i, j);
    }
    out.set(i, m.cols(), !any);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Divergence via KL to the midpoint.

inline double kl(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) s += p[i] * std::log(p[i] / q[i]);
  return s;
}

inline double jsd(const std::vector<double>& p, const std::vector<double>& q) {
  std::vector<double> m(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) m[i] = 0.5 * (p[i] + q[i]);
  return 0.5 * kl(p, m) + 0.5 * kl(q, m);
}

}  // namespace oracle
