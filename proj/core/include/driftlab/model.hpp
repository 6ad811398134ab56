#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "driftlab/corpus.hpp"
#include "driftlab/tensor.hpp"

namespace driftlab {

enum class Nonlinearity { Tanh, Relu };

std::string_view to_string(Nonlinearity n);
Nonlinearity parse_nonlinearity(std::string_view s);

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 16;
  std::size_t hidden_dim = 16;
  std::size_t n_labels = 0;
  bool use_label_attention = true;
  Nonlinearity nonlinearity = Nonlinearity::Tanh;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

namespace param {
inline constexpr std::string_view kEmbedding = "embedding";
inline constexpr std::string_view kEncWeight = "enc_weight";
inline constexpr std::string_view kEncBias = "enc_bias";
inline constexpr std::string_view kAttnQuery = "attn_query";
inline constexpr std::string_view kOutWeight = "out_weight";
inline constexpr std::string_view kOutBias = "out_bias";
inline constexpr std::string_view kAdapterDown = "adapter.down";
inline constexpr std::string_view kAdapterDownBias = "adapter.down_bias";
inline constexpr std::string_view kAdapterUp = "adapter.up";
inline constexpr std::string_view kAdapterUpBias = "adapter.up_bias";
}  // namespace param

struct Parameter {
  std::string name;
  Tensor value;
  bool trainable = true;
  /// Bias tensors are excluded from weight decay.
  bool is_bias = false;
};

struct LoraSpec {
  std::vector<std::string> targets;
  std::size_t rank = 8;
  double alpha = 16.0;
  double scale() const { return alpha / static_cast<double>(rank); }
  friend bool operator==(const LoraSpec&, const LoraSpec&) = default;
};

struct AdapterSpec {
  std::size_t reduction = 16;
  std::size_t bottleneck = 1;
  friend bool operator==(const AdapterSpec&, const AdapterSpec&) = default;
};

/// Parameters of the label-wise attention classifier plus optional LoRA and
/// adapter expansions. `revision` changes on every mutation so stale forward
/// caches can be detected.
class ModelState {
 public:
  ModelConfig config;
  std::vector<Parameter> params;
  std::optional<LoraSpec> lora;
  std::optional<AdapterSpec> adapter;
  std::uint64_t revision = 0;

  std::optional<std::size_t> index_of(std::string_view name) const;
  Parameter& at(std::string_view name);
  const Parameter& at(std::string_view name) const;
  const Tensor& value(std::string_view name) const { return at(name).value; }
  void touch() { ++revision; }
  std::size_t trainable_count() const;
};

ModelState init_model(const ModelConfig& config);

/// Gradient tensors aligned index-by-index with ModelState::params.
struct Gradients {
  std::vector<Tensor> tensors;

  static Gradients zeros_like(const ModelState& model);
  void add_scaled(const Gradients& other, double scale);
  void scale(double s);
  /// Concatenation of the trainable tensors, in parameter order.
  std::vector<double> flatten(const ModelState& model) const;
  void unflatten(const ModelState& model, std::span<const double> flat);
};

struct DocForward {
  std::vector<TokenId> tokens;
  std::vector<double> counts;
  Tensor pre;          // T×h encoder pre-activation
  Tensor act;          // T×h encoder activation
  Tensor adapter_pre;  // T×m
  Tensor adapter_act;  // T×m
  Tensor hidden;       // T×h token representations after the adapter
  Tensor attention;    // N×T
  Tensor reps;         // N×h label representations
};

struct ForwardCache {
  std::uint64_t revision = 0;
  std::vector<DocForward> docs;
  Tensor logits;  // batch×N
};

std::pair<Tensor, ForwardCache> forward(const ModelState& model, std::span<const Document* const> batch);

/// Mean binary cross-entropy over batch and labels, with dLoss/dlogits.
struct LossResult {
  double loss = 0.0;
  Tensor grad;
};
LossResult bce_loss(const Tensor& logits, const Tensor& targets);

/// Binary target matrix (batch×n_labels) for a batch.
Tensor target_matrix(std::span<const Document* const> batch, std::size_t n_labels);

/// Reverse-mode gradients of forward. `feature_grad`, when given, is an
/// additional upstream gradient on extract_features' output (batch×h).
/// Frozen tensors receive zero gradient.
Gradients backward(const ModelState& model, const ForwardCache& cache, const Tensor& logit_grad,
                   const Tensor* feature_grad = nullptr);

/// Mean of the label representations per document (batch×h).
Tensor extract_features(const ModelState& model, const ForwardCache& cache);

inline constexpr std::size_t kDefaultLoraRank = 8;
inline constexpr double kDefaultLoraAlpha = 16.0;
inline constexpr std::size_t kDefaultAdapterReduction = 16;

/// Freezes every base tensor and adds trainable low-rank factors
/// `<target>.lora_a` (r×cols) and `<target>.lora_b` (rows×r, zero) to each target.
void attach_lora(ModelState& model, std::vector<std::string> targets = {std::string(param::kEncWeight),
                                                                        std::string(param::kOutWeight)},
                 std::size_t rank = kDefaultLoraRank, double alpha = kDefaultLoraAlpha);

/// Freezes every base tensor and inserts a residual bottleneck adapter after
/// the encoder nonlinearity, with zero up-projection.
void attach_adapter(ModelState& model, std::size_t reduction = kDefaultAdapterReduction);

std::size_t adapter_bottleneck(std::size_t hidden_dim, std::size_t reduction);

}  // namespace driftlab
