#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

namespace driftlab {

using Period = std::int64_t;
using TokenId = std::uint32_t;
using LabelId = std::uint32_t;

struct TokenCount {
  TokenId token;
  std::uint32_t count;
  friend bool operator==(const TokenCount&, const TokenCount&) = default;
};

struct Document {
  std::string id;
  Period timestamp = 0;
  /// Sorted by token id, counts strictly positive, ids unique.
  std::vector<TokenCount> tokens;
  /// Sorted, unique.
  std::vector<LabelId> labels;

  std::uint64_t total_tokens() const;
  bool has_label(LabelId l) const;
  friend bool operator==(const Document&, const Document&) = default;
};

using DocRefs = std::vector<const Document*>;

/// Bijective id ↔ string map.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> names);

  std::size_t size() const { return names_.size(); }
  const std::string& name(std::uint32_t id) const { return names_.at(id); }
  std::optional<std::uint32_t> find(const std::string& name) const;
  /// Returns the existing id or appends a new entry.
  std::uint32_t intern(const std::string& name);
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

/// Immutable, validated, chronologically sorted collection of documents.
class Corpus {
 public:
  Corpus(std::vector<Document> documents, Vocabulary vocabulary, Vocabulary labels, int period_unit = 1);

  const std::vector<Document>& documents() const { return documents_; }
  const Vocabulary& vocabulary() const { return vocabulary_; }
  const Vocabulary& labels() const { return labels_; }
  std::size_t vocab_size() const { return vocabulary_.size(); }
  std::size_t label_count() const { return labels_.size(); }
  int period_unit() const { return period_unit_; }
  std::size_t size() const { return documents_.size(); }

  /// Populated periods, ascending.
  std::vector<Period> periods() const;
  /// Documents whose timestamp is in `periods`, in corpus order.
  DocRefs select(const std::set<Period>& periods) const;
  DocRefs in_period(Period p) const;
  DocRefs all() const;

 private:
  std::vector<Document> documents_;
  Vocabulary vocabulary_;
  Vocabulary labels_;
  int period_unit_;
};

struct LoadOptions {
  /// Sidecar JSON `{"tokens": [...], "labels": [...], "period_unit": n}` pinning id assignment.
  std::optional<std::filesystem::path> vocabulary_path;
  std::optional<int> period_unit;
};

/// Reads the JSONL corpus format. Throws ValidationError naming the offending line.
Corpus load_corpus(const std::filesystem::path& path, const LoadOptions& options = {});

/// Writes `<path>` as JSONL with string keys and the sidecar vocabulary next to it.
void save_corpus(const Corpus& corpus, const std::filesystem::path& path, const std::filesystem::path& vocabulary_path);

/// Canonical JSONL text of the corpus; stable input for content hashing.
std::string corpus_to_jsonl(const Corpus& corpus);

std::uint64_t fnv1a64(std::string_view bytes);

struct EvalFixKind {
  friend bool operator==(const EvalFixKind&, const EvalFixKind&) = default;
};
struct EvalStreamStep {
  Period t;
  friend bool operator==(const EvalStreamStep&, const EvalStreamStep&) = default;
};

struct SplitPlan {
  std::set<Period> train;
  std::set<Period> val;
  std::set<Period> test;
  std::variant<EvalFixKind, EvalStreamStep> kind;
};

/// train = periods < t1, val = [t1, t2], test = periods > t2.
SplitPlan chronological_split(const Corpus& corpus, Period t1, Period t2);

/// One plan per populated period t from `start` to the second-to-last:
/// train d_{≤t}, val d_t, test d_{next populated period}.
std::vector<SplitPlan> stream_splits(const Corpus& corpus, Period start);

/// Chronologically sorted documents split into Old (first ⌈n/2⌉) and Recent.
std::pair<DocRefs, DocRefs> halve_training(const DocRefs& train_docs);

struct DomainWindow {
  int window_id;
  std::vector<Period> periods;
};

std::vector<DomainWindow> sliding_windows(std::span<const Period> periods, int length);

struct PeriodGroup {
  Period period;
  DocRefs docs;
};

/// Groups sorted documents by period. A period with fewer than
/// `min_docs_per_period` documents is merged into the next one (the last
/// group merges backwards); the merged group keeps the later period key.
std::vector<PeriodGroup> group_by_period(const DocRefs& docs, std::size_t min_docs_per_period = 1);

struct SynthParams {
  int n_periods = 10;
  int docs_per_period = 200;
  int vocab_size = 500;
  int n_labels = 6;
  double drift_rate = 0.5;
  std::uint64_t seed = 0;
};

/// Internal proportions of the synthetic generator.
struct SynthShape {
  /// Fraction of tokens drawn from the Zipf background instead of a label block.
  double background_share = 0.5;
  /// Fraction of each label's end block borrowed from the next label's start block.
  double rotated_share = 0.5;
  /// Relative spread of the label priors at either end of the drift.
  double prior_spread = 0.5;
  int min_length = 20;
  int length_spread = 20;
};

/// Synthetic corpus whose label-conditional token distributions move from a
/// start to an end configuration as periods advance, scaled by drift_rate.
Corpus synth_drift_corpus(const SynthParams& params, const SynthShape& shape = {});

}  // namespace driftlab
