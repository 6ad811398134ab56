#include "driftlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "driftlab/errors.hpp"
#include "driftlab/random.hpp"

namespace driftlab {

std::string_view to_string(Nonlinearity n) { return n == Nonlinearity::Tanh ? "tanh" : "relu"; }

Nonlinearity parse_nonlinearity(std::string_view s) {
  if (s == "tanh") return Nonlinearity::Tanh;
  if (s == "relu") return Nonlinearity::Relu;
  throw ValidationError(fmt::format("unknown nonlinearity '{}'", s));
}

void ModelConfig::validate() const {
  if (vocab_size < 1 || embed_dim < 1 || hidden_dim < 1 || n_labels < 1)
    throw ValidationError(fmt::format("model dimensions must be >= 1 (vocab {}, embed {}, hidden {}, labels {})",
                                      vocab_size, embed_dim, hidden_dim, n_labels));
}

std::optional<std::size_t> ModelState::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].name == name) return i;
  return std::nullopt;
}

Parameter& ModelState::at(std::string_view name) {
  auto i = index_of(name);
  if (!i) throw std::out_of_range(fmt::format("no parameter '{}'", name));
  return params[*i];
}

const Parameter& ModelState::at(std::string_view name) const {
  auto i = index_of(name);
  if (!i) throw std::out_of_range(fmt::format("no parameter '{}'", name));
  return params[*i];
}

std::size_t ModelState::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : params)
    if (p.trainable) n += p.value.size();
  return n;
}

namespace {

void fill_uniform(Tensor& t, double limit, Rng& rng) {
  for (auto& v : t.data()) v = rng.uniform(-limit, limit);
}

double glorot_limit(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

double activate(Nonlinearity n, double x) { return n == Nonlinearity::Tanh ? std::tanh(x) : (x > 0.0 ? x : 0.0); }

/// Derivative expressed through the pre-activation and activation values.
double activate_grad(Nonlinearity n, double pre, double act) {
  if (n == Nonlinearity::Tanh) return 1.0 - act * act;
  return pre > 0.0 ? 1.0 : 0.0;
}

std::string lora_a_name(std::string_view target) { return fmt::format("{}.lora_a", target); }
std::string lora_b_name(std::string_view target) { return fmt::format("{}.lora_b", target); }

/// Weights as seen by the forward pass: base tensors with any LoRA update merged in.
struct EffectiveWeights {
  Tensor embedding, enc_weight, attn_query, out_weight;
};

EffectiveWeights effective_weights(const ModelState& m) {
  EffectiveWeights w{m.value(param::kEmbedding), m.value(param::kEncWeight), m.value(param::kAttnQuery),
                     m.value(param::kOutWeight)};
  if (!m.lora) return w;
  for (const auto& target : m.lora->targets) {
    Tensor* dst = nullptr;
    if (target == param::kEmbedding) dst = &w.embedding;
    else if (target == param::kEncWeight) dst = &w.enc_weight;
    else if (target == param::kAttnQuery) dst = &w.attn_query;
    else if (target == param::kOutWeight) dst = &w.out_weight;
    else throw std::logic_error(fmt::format("unsupported LoRA target '{}'", target));
    const Tensor delta = matmul(m.value(lora_b_name(target)), m.value(lora_a_name(target)));
    axpy(m.lora->scale(), delta.data(), dst->data());
  }
  return w;
}

}  // namespace

ModelState init_model(const ModelConfig& config) {
  config.validate();
  Rng rng(config.seed);
  const auto V = config.vocab_size, d = config.embed_dim, h = config.hidden_dim, N = config.n_labels;
  ModelState m;
  m.config = config;
  auto add = [&](std::string_view name, Tensor t, bool bias) {
    m.params.push_back({std::string(name), std::move(t), true, bias});
  };
  Tensor emb(V, d);
  fill_uniform(emb, 1.0, rng);
  Tensor w1(d, h);
  fill_uniform(w1, glorot_limit(d, h), rng);
  Tensor q(N, h);
  fill_uniform(q, glorot_limit(N, h), rng);
  Tensor wout(N, h);
  fill_uniform(wout, glorot_limit(N, h), rng);
  add(param::kEmbedding, std::move(emb), false);
  add(param::kEncWeight, std::move(w1), false);
  add(param::kEncBias, Tensor::vector(h), true);
  add(param::kAttnQuery, std::move(q), false);
  add(param::kOutWeight, std::move(wout), false);
  add(param::kOutBias, Tensor::vector(N), true);
  return m;
}

// ---------------------------------------------------------------------------
// Gradients

Gradients Gradients::zeros_like(const ModelState& model) {
  Gradients g;
  g.tensors.reserve(model.params.size());
  for (const auto& p : model.params) g.tensors.emplace_back(p.value.shape());
  return g;
}

void Gradients::add_scaled(const Gradients& other, double s) {
  if (other.tensors.size() != tensors.size()) throw std::invalid_argument("gradient structure mismatch");
  for (std::size_t i = 0; i < tensors.size(); ++i) axpy(s, other.tensors[i].data(), tensors[i].data());
}

void Gradients::scale(double s) {
  for (auto& t : tensors)
    for (auto& v : t.data()) v *= s;
}

std::vector<double> Gradients::flatten(const ModelState& model) const {
  std::vector<double> flat;
  flat.reserve(model.trainable_count());
  for (std::size_t i = 0; i < model.params.size(); ++i)
    if (model.params[i].trainable) flat.insert(flat.end(), tensors[i].data().begin(), tensors[i].data().end());
  return flat;
}

void Gradients::unflatten(const ModelState& model, std::span<const double> flat) {
  if (flat.size() != model.trainable_count()) throw std::invalid_argument("flat gradient length mismatch");
  std::size_t off = 0;
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    if (!model.params[i].trainable) continue;
    auto& dst = tensors[i].data();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), dst.size(), dst.begin());
    off += dst.size();
  }
}

// ---------------------------------------------------------------------------
// Forward

std::pair<Tensor, ForwardCache> forward(const ModelState& model, std::span<const Document* const> batch) {
  const auto& cfg = model.config;
  const auto h = cfg.hidden_dim, N = cfg.n_labels;
  const EffectiveWeights w = effective_weights(model);
  const Tensor& b1 = model.value(param::kEncBias);
  const Tensor& bout = model.value(param::kOutBias);
  const Tensor* down = nullptr;
  const Tensor* down_b = nullptr;
  const Tensor* up = nullptr;
  const Tensor* up_b = nullptr;
  std::size_t m = 0;
  if (model.adapter) {
    down = &model.value(param::kAdapterDown);
    down_b = &model.value(param::kAdapterDownBias);
    up = &model.value(param::kAdapterUp);
    up_b = &model.value(param::kAdapterUpBias);
    m = model.adapter->bottleneck;
  }

  ForwardCache cache;
  cache.revision = model.revision;
  cache.logits = Tensor(batch.size(), N);
  cache.docs.resize(batch.size());

  for (std::size_t bi = 0; bi < batch.size(); ++bi) {
    const Document& doc = *batch[bi];
    DocForward& f = cache.docs[bi];
    const std::size_t T = doc.tokens.size();
    for (const auto& tc : doc.tokens) {
      if (tc.token >= cfg.vocab_size)
        throw ValidationError(fmt::format("document '{}': token id {} outside model vocabulary", doc.id, tc.token));
      f.tokens.push_back(tc.token);
      f.counts.push_back(static_cast<double>(tc.count));
    }
    f.pre = Tensor(T, h);
    f.act = Tensor(T, h);
    for (std::size_t j = 0; j < T; ++j) {
      auto pre = f.pre.row(j);
      std::copy(b1.data().begin(), b1.data().end(), pre.begin());
      const auto e = w.embedding.row(f.tokens[j]);
      for (std::size_t i = 0; i < e.size(); ++i) axpy(e[i], w.enc_weight.row(i), pre);
      auto act = f.act.row(j);
      for (std::size_t k = 0; k < h; ++k) act[k] = activate(cfg.nonlinearity, pre[k]);
    }
    if (model.adapter) {
      f.adapter_pre = Tensor(T, m);
      f.adapter_act = Tensor(T, m);
      f.hidden = f.act;
      for (std::size_t j = 0; j < T; ++j) {
        auto apre = f.adapter_pre.row(j);
        auto aact = f.adapter_act.row(j);
        for (std::size_t r = 0; r < m; ++r) {
          apre[r] = (*down_b)[r] + dot(down->row(r), f.act.row(j));
          aact[r] = activate(cfg.nonlinearity, apre[r]);
        }
        auto hid = f.hidden.row(j);
        for (std::size_t k = 0; k < h; ++k) hid[k] += (*up_b)[k] + dot(up->row(k), aact);
      }
    } else {
      f.hidden = f.act;
    }

    f.attention = Tensor(N, T);
    f.reps = Tensor(N, h);
    if (T > 0) {
      std::vector<double> score(T);
      for (std::size_t l = 0; l < N; ++l) {
        auto att = f.attention.row(l);
        if (cfg.use_label_attention) {
          double mx = -std::numeric_limits<double>::infinity();
          for (std::size_t j = 0; j < T; ++j) {
            score[j] = dot(w.attn_query.row(l), f.hidden.row(j)) + std::log(f.counts[j]);
            mx = std::max(mx, score[j]);
          }
          double z = 0.0;
          for (std::size_t j = 0; j < T; ++j) z += (att[j] = std::exp(score[j] - mx));
          for (auto& a : att) a /= z;
        } else {
          double total = 0.0;
          for (double c : f.counts) total += c;
          for (std::size_t j = 0; j < T; ++j) att[j] = f.counts[j] / total;
        }
        auto rep = f.reps.row(l);
        for (std::size_t j = 0; j < T; ++j) axpy(att[j], f.hidden.row(j), rep);
      }
    }
    for (std::size_t l = 0; l < N; ++l) cache.logits(bi, l) = dot(w.out_weight.row(l), f.reps.row(l)) + bout[l];
  }
  Tensor logits = cache.logits;
  return {std::move(logits), std::move(cache)};
}

Tensor target_matrix(std::span<const Document* const> batch, std::size_t n_labels) {
  Tensor t(batch.size(), n_labels);
  for (std::size_t i = 0; i < batch.size(); ++i)
    for (LabelId l : batch[i]->labels)
      if (l < n_labels) t(i, l) = 1.0;
  return t;
}

LossResult bce_loss(const Tensor& logits, const Tensor& targets) {
  if (!logits.same_shape(targets))
    throw std::invalid_argument(fmt::format("bce_loss: logits {} vs targets {}", shape_string(logits.shape()),
                                            shape_string(targets.shape())));
  LossResult r;
  r.grad = Tensor(logits.shape());
  const std::size_t n = logits.size();
  if (n == 0) return r;
  const double inv = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = logits[i];
    const double y = targets[i];
    if (y != 0.0 && y != 1.0) throw std::invalid_argument("bce_loss: targets must be 0 or 1");
    total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    const double sig = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    r.grad[i] = (sig - y) * inv;
  }
  r.loss = total * inv;
  return r;
}

// ---------------------------------------------------------------------------
// Backward

Gradients backward(const ModelState& model, const ForwardCache& cache, const Tensor& logit_grad,
                   const Tensor* feature_grad) {
  if (cache.revision != model.revision) throw std::logic_error("stale forward cache: model changed since forward");
  const auto& cfg = model.config;
  const auto h = cfg.hidden_dim, N = cfg.n_labels;
  if (logit_grad.rows() != cache.docs.size() || logit_grad.cols() != N)
    throw std::invalid_argument("backward: logit gradient shape mismatch");
  if (feature_grad && (feature_grad->rows() != cache.docs.size() || feature_grad->cols() != h))
    throw std::invalid_argument("backward: feature gradient shape mismatch");

  const EffectiveWeights w = effective_weights(model);
  Tensor g_emb(w.embedding.shape()), g_w1(w.enc_weight.shape()), g_q(w.attn_query.shape()),
      g_wout(w.out_weight.shape());
  Tensor g_b1 = Tensor::vector(h), g_bout = Tensor::vector(N);
  Tensor g_down, g_down_b, g_up, g_up_b;
  std::size_t m = 0;
  if (model.adapter) {
    m = model.adapter->bottleneck;
    g_down = Tensor(m, h);
    g_down_b = Tensor::vector(m);
    g_up = Tensor(h, m);
    g_up_b = Tensor::vector(h);
  }

  std::vector<double> d_rep(h), d_act(h), d_pre(h), d_g(m);
  for (std::size_t bi = 0; bi < cache.docs.size(); ++bi) {
    const DocForward& f = cache.docs[bi];
    const std::size_t T = f.tokens.size();
    if (T == 0) {
      for (std::size_t l = 0; l < N; ++l) g_bout[l] += logit_grad(bi, l);
      continue;
    }
    Tensor d_hidden(T, h);
    std::vector<double> d_att(T);
    for (std::size_t l = 0; l < N; ++l) {
      const double dz = logit_grad(bi, l);
      g_bout[l] += dz;
      axpy(dz, f.reps.row(l), g_wout.row(l));
      for (std::size_t k = 0; k < h; ++k) d_rep[k] = dz * w.out_weight(l, k);
      if (feature_grad) axpy(1.0 / static_cast<double>(N), feature_grad->row(bi), d_rep);

      const auto att = f.attention.row(l);
      for (std::size_t j = 0; j < T; ++j) {
        axpy(att[j], d_rep, d_hidden.row(j));
        d_att[j] = dot(d_rep, f.hidden.row(j));
      }
      if (!cfg.use_label_attention) continue;
      double mean = 0.0;
      for (std::size_t j = 0; j < T; ++j) mean += att[j] * d_att[j];
      for (std::size_t j = 0; j < T; ++j) {
        const double ds = att[j] * (d_att[j] - mean);
        axpy(ds, f.hidden.row(j), g_q.row(l));
        axpy(ds, w.attn_query.row(l), d_hidden.row(j));
      }
    }

    for (std::size_t j = 0; j < T; ++j) {
      const auto dh = d_hidden.row(j);
      std::copy(dh.begin(), dh.end(), d_act.begin());
      if (model.adapter) {
        const Tensor& down = model.value(param::kAdapterDown);
        const Tensor& up = model.value(param::kAdapterUp);
        axpy(1.0, dh, g_up_b.data());
        const auto aact = f.adapter_act.row(j);
        const auto apre = f.adapter_pre.row(j);
        for (std::size_t k = 0; k < h; ++k) axpy(dh[k], aact, g_up.row(k));
        std::fill(d_g.begin(), d_g.end(), 0.0);
        for (std::size_t k = 0; k < h; ++k) axpy(dh[k], up.row(k), d_g);
        for (std::size_t r = 0; r < m; ++r) {
          const double dv = d_g[r] * activate_grad(cfg.nonlinearity, apre[r], aact[r]);
          g_down_b[r] += dv;
          axpy(dv, f.act.row(j), g_down.row(r));
          axpy(dv, down.row(r), d_act);
        }
      }
      const auto pre = f.pre.row(j);
      const auto act = f.act.row(j);
      for (std::size_t k = 0; k < h; ++k) d_pre[k] = d_act[k] * activate_grad(cfg.nonlinearity, pre[k], act[k]);
      axpy(1.0, d_pre, g_b1.data());
      const TokenId tok = f.tokens[j];
      const auto e = w.embedding.row(tok);
      auto ge = g_emb.row(tok);
      for (std::size_t i = 0; i < e.size(); ++i) {
        axpy(e[i], d_pre, g_w1.row(i));
        ge[i] += dot(w.enc_weight.row(i), d_pre);
      }
    }
  }

  Gradients grads = Gradients::zeros_like(model);
  auto assign = [&](std::string_view name, Tensor&& g) {
    const auto i = *model.index_of(name);
    if (model.params[i].trainable) grads.tensors[i] = std::move(g);
  };
  auto lora_grads = [&](std::string_view target, const Tensor& g_eff) {
    if (!model.lora) return;
    const auto& targets = model.lora->targets;
    if (std::find(targets.begin(), targets.end(), target) == targets.end()) return;
    const double s = model.lora->scale();
    const Tensor& A = model.value(lora_a_name(target));
    const Tensor& B = model.value(lora_b_name(target));
    Tensor gb = matmul_transposed(g_eff, A);  // rows×r
    Tensor ga = transposed_matmul(B, g_eff);  // r×cols
    gb.scale_inplace(s);
    ga.scale_inplace(s);
    assign(lora_b_name(target), std::move(gb));
    assign(lora_a_name(target), std::move(ga));
  };
  lora_grads(param::kEmbedding, g_emb);
  lora_grads(param::kEncWeight, g_w1);
  lora_grads(param::kAttnQuery, g_q);
  lora_grads(param::kOutWeight, g_wout);
  assign(param::kEmbedding, std::move(g_emb));
  assign(param::kEncWeight, std::move(g_w1));
  assign(param::kEncBias, std::move(g_b1));
  assign(param::kAttnQuery, std::move(g_q));
  assign(param::kOutWeight, std::move(g_wout));
  assign(param::kOutBias, std::move(g_bout));
  if (model.adapter) {
    assign(param::kAdapterDown, std::move(g_down));
    assign(param::kAdapterDownBias, std::move(g_down_b));
    assign(param::kAdapterUp, std::move(g_up));
    assign(param::kAdapterUpBias, std::move(g_up_b));
  }
  return grads;
}

Tensor extract_features(const ModelState& model, const ForwardCache& cache) {
  if (cache.revision != model.revision) throw std::logic_error("stale forward cache: model changed since forward");
  const auto h = model.config.hidden_dim, N = model.config.n_labels;
  Tensor out(cache.docs.size(), h);
  const double inv = 1.0 / static_cast<double>(N);
  for (std::size_t i = 0; i < cache.docs.size(); ++i)
    for (std::size_t l = 0; l < N; ++l) axpy(inv, cache.docs[i].reps.row(l), out.row(i));
  return out;
}

// ---------------------------------------------------------------------------
// Parameter expansions

namespace {

void freeze_all(ModelState& model) {
  for (auto& p : model.params) p.trainable = false;
}

void require_no_expansion(const ModelState& model) {
  if (model.lora || model.adapter) throw ValidationError("model already carries a parameter expansion");
}

}  // namespace

void attach_lora(ModelState& model, std::vector<std::string> targets, std::size_t rank, double alpha) {
  require_no_expansion(model);
  if (rank < 1) throw ValidationError("LoRA rank must be >= 1");
  if (targets.empty()) throw ValidationError("LoRA needs at least one target tensor");
  for (const auto& t : targets) {
    if (t != param::kEmbedding && t != param::kEncWeight && t != param::kAttnQuery && t != param::kOutWeight)
      throw ValidationError(fmt::format("'{}' is not a LoRA-capable weight matrix", t));
    const Tensor& w = model.value(t);
    if (rank > std::min(w.rows(), w.cols()))
      throw ValidationError(fmt::format("LoRA rank {} too large for '{}' {}", rank, t, shape_string(w.shape())));
  }
  freeze_all(model);
  for (std::size_t ti = 0; ti < targets.size(); ++ti) {
    const auto& t = targets[ti];
    const Tensor& w = model.value(t);
    const std::size_t rows = w.rows(), cols = w.cols();
    Rng rng(mix_seed(model.config.seed, 101 + ti));
    Tensor a(rank, cols);
    fill_uniform(a, 1.0 / std::sqrt(static_cast<double>(cols)), rng);
    model.params.push_back({lora_a_name(t), std::move(a), true, false});
    model.params.push_back({lora_b_name(t), Tensor(rows, rank), true, false});
  }
  model.lora = LoraSpec{std::move(targets), rank, alpha};
  model.touch();
}

std::size_t adapter_bottleneck(std::size_t hidden_dim, std::size_t reduction) {
  if (reduction < 1) throw ValidationError("adapter reduction factor must be >= 1");
  return std::max<std::size_t>(1, hidden_dim / reduction);
}

void attach_adapter(ModelState& model, std::size_t reduction) {
  require_no_expansion(model);
  const std::size_t h = model.config.hidden_dim;
  const std::size_t m = adapter_bottleneck(h, reduction);
  freeze_all(model);
  Rng rng(mix_seed(model.config.seed, 202));
  Tensor down(m, h);
  fill_uniform(down, glorot_limit(m, h), rng);
  model.params.push_back({std::string(param::kAdapterDown), std::move(down), true, false});
  model.params.push_back({std::string(param::kAdapterDownBias), Tensor::vector(m), true, true});
  model.params.push_back({std::string(param::kAdapterUp), Tensor(h, m), true, false});
  model.params.push_back({std::string(param::kAdapterUpBias), Tensor::vector(h), true, true});
  model.adapter = AdapterSpec{reduction, m};
  model.touch();
}

}  // namespace driftlab
