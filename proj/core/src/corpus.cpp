#include "driftlab/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "driftlab/errors.hpp"

namespace driftlab {

using nlohmann::json;

std::uint64_t Document::total_tokens() const {
  std::uint64_t n = 0;
  for (const auto& tc : tokens) n += tc.count;
  return n;
}

bool Document::has_label(LabelId l) const { return std::binary_search(labels.begin(), labels.end(), l); }

Vocabulary::Vocabulary(std::vector<std::string> names) {
  for (auto& n : names) {
    if (index_.count(n)) throw ValidationError(fmt::format("duplicate vocabulary entry '{}'", n));
    intern(n);
  }
}

std::optional<std::uint32_t> Vocabulary::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::uint32_t Vocabulary::intern(const std::string& name) {
  auto [it, inserted] = index_.try_emplace(name, static_cast<std::uint32_t>(names_.size()));
  if (inserted) names_.push_back(name);
  return it->second;
}

Corpus::Corpus(std::vector<Document> documents, Vocabulary vocabulary, Vocabulary labels, int period_unit)
    : documents_(std::move(documents)),
      vocabulary_(std::move(vocabulary)),
      labels_(std::move(labels)),
      period_unit_(period_unit) {
  if (documents_.empty()) throw ValidationError("empty corpus");
  if (period_unit_ < 1) throw ValidationError("period_unit must be >= 1");
  std::stable_sort(documents_.begin(), documents_.end(), [](const Document& a, const Document& b) {
    if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
    return a.id < b.id;
  });
  std::set<std::string_view> ids;
  for (const auto& d : documents_) {
    if (!ids.insert(d.id).second) throw ValidationError(fmt::format("duplicate document id '{}'", d.id));
    for (std::size_t i = 0; i < d.tokens.size(); ++i) {
      const auto& tc = d.tokens[i];
      if (tc.count == 0) throw ValidationError(fmt::format("document '{}': token count must be positive", d.id));
      if (tc.token >= vocabulary_.size())
        throw ValidationError(fmt::format("document '{}': token id {} out of range", d.id, tc.token));
      if (i && d.tokens[i - 1].token >= tc.token)
        throw ValidationError(fmt::format("document '{}': token ids not sorted/unique", d.id));
    }
    for (std::size_t i = 0; i < d.labels.size(); ++i) {
      if (d.labels[i] >= labels_.size())
        throw ValidationError(fmt::format("document '{}': label id {} out of range", d.id, d.labels[i]));
      if (i && d.labels[i - 1] >= d.labels[i])
        throw ValidationError(fmt::format("document '{}': label ids not sorted/unique", d.id));
    }
  }
}

std::vector<Period> Corpus::periods() const {
  std::vector<Period> out;
  for (const auto& d : documents_)
    if (out.empty() || out.back() != d.timestamp) out.push_back(d.timestamp);
  return out;
}

DocRefs Corpus::select(const std::set<Period>& periods) const {
  DocRefs out;
  for (const auto& d : documents_)
    if (periods.count(d.timestamp)) out.push_back(&d);
  return out;
}

DocRefs Corpus::in_period(Period p) const { return select({p}); }

DocRefs Corpus::all() const {
  DocRefs out;
  out.reserve(documents_.size());
  for (const auto& d : documents_) out.push_back(&d);
  return out;
}

// ---------------------------------------------------------------------------
// JSONL ingestion

namespace {

bool is_decimal(const std::string& s) {
  return !s.empty() && s.size() < 10 && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

struct RawRecord {
  std::size_t line;
  std::string id;
  Period timestamp;
  std::vector<std::pair<std::string, std::uint32_t>> tokens;
  std::vector<json> labels;
};

[[noreturn]] void fail_line(std::size_t line, const std::string& what) {
  throw ValidationError(fmt::format("line {}: {}", line, what));
}

RawRecord parse_record(const std::string& text, std::size_t line) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail_line(line, fmt::format("malformed JSON ({})", e.what()));
  }
  if (!j.is_object()) fail_line(line, "record must be a JSON object");
  RawRecord r{line, {}, 0, {}, {}};

  auto id = j.find("id");
  if (id == j.end() || !id->is_string()) fail_line(line, "missing or non-string 'id'");
  r.id = id->get<std::string>();

  auto ts = j.find("timestamp");
  if (ts == j.end() || !ts->is_number_integer()) fail_line(line, "missing or non-integer 'timestamp'");
  r.timestamp = ts->get<Period>();

  auto toks = j.find("tokens");
  if (toks == j.end() || !toks->is_object()) fail_line(line, "missing or non-object 'tokens'");
  for (auto it = toks->begin(); it != toks->end(); ++it) {
    if (!it.value().is_number_integer()) fail_line(line, fmt::format("token '{}': count must be an integer", it.key()));
    const auto c = it.value().get<std::int64_t>();
    if (c <= 0) fail_line(line, fmt::format("token '{}': count must be positive, got {}", it.key(), c));
    if (c > std::numeric_limits<std::uint32_t>::max()) fail_line(line, fmt::format("token '{}': count too large", it.key()));
    r.tokens.emplace_back(it.key(), static_cast<std::uint32_t>(c));
  }

  auto labels = j.find("labels");
  if (labels == j.end() || !labels->is_array()) fail_line(line, "missing or non-array 'labels'");
  for (const auto& l : *labels) {
    if (!l.is_string() && !l.is_number_unsigned()) fail_line(line, "labels must be strings or non-negative integers");
    r.labels.push_back(l);
  }
  return r;
}

}  // namespace

Corpus load_corpus(const std::filesystem::path& path, const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw ValidationError(fmt::format("cannot open corpus file '{}'", path.string()));

  std::vector<RawRecord> raw;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    raw.push_back(parse_record(text, line));
  }
  if (raw.empty()) throw ValidationError(fmt::format("empty corpus '{}'", path.string()));

  int period_unit = 1;
  Vocabulary vocab;
  Vocabulary label_vocab;
  bool pinned = false;
  if (options.vocabulary_path) {
    std::ifstream vin(*options.vocabulary_path);
    if (!vin) throw ValidationError(fmt::format("cannot open vocabulary file '{}'", options.vocabulary_path->string()));
    json v;
    try {
      v = json::parse(vin);
      vocab = Vocabulary(v.at("tokens").get<std::vector<std::string>>());
      label_vocab = Vocabulary(v.at("labels").get<std::vector<std::string>>());
      period_unit = v.value("period_unit", 1);
    } catch (const json::exception& e) {
      throw ValidationError(fmt::format("vocabulary file '{}': {}", options.vocabulary_path->string(), e.what()));
    }
    pinned = true;
  }
  if (options.period_unit) period_unit = *options.period_unit;

  // Without a sidecar, a namespace whose keys are all decimal integers is read
  // as raw ids; otherwise every key is interned as a string in first-seen order.
  bool numeric_tokens = !pinned;
  bool numeric_labels = !pinned;
  std::uint64_t max_token = 0;
  std::uint64_t max_label = 0;
  bool any_label = false;
  if (!pinned) {
    for (const auto& r : raw) {
      for (const auto& [k, c] : r.tokens) {
        if (!is_decimal(k)) numeric_tokens = false;
        else max_token = std::max<std::uint64_t>(max_token, std::stoull(k));
      }
      for (const auto& l : r.labels) {
        any_label = true;
        if (!l.is_number_unsigned()) numeric_labels = false;
        else max_label = std::max<std::uint64_t>(max_label, l.get<std::uint64_t>());
      }
    }
    if (numeric_tokens) {
      for (std::uint64_t i = 0; i <= max_token; ++i) vocab.intern(std::to_string(i));
    }
    if (numeric_labels && any_label) {
      for (std::uint64_t i = 0; i <= max_label; ++i) label_vocab.intern(std::to_string(i));
    }
  }

  std::vector<Document> docs;
  docs.reserve(raw.size());
  std::set<std::string> seen_ids;
  for (auto& r : raw) {
    if (!seen_ids.insert(r.id).second) fail_line(r.line, fmt::format("duplicate document id '{}'", r.id));
    Document d;
    d.id = std::move(r.id);
    d.timestamp = r.timestamp;
    std::map<TokenId, std::uint32_t> counts;
    for (const auto& [key, count] : r.tokens) {
      TokenId id;
      if (pinned) {
        if (auto f = vocab.find(key)) id = *f;
        else if (is_decimal(key) && std::stoull(key) < vocab.size()) id = static_cast<TokenId>(std::stoull(key));
        else fail_line(r.line, fmt::format("token '{}' not in vocabulary (size {})", key, vocab.size()));
      } else {
        id = numeric_tokens ? static_cast<TokenId>(std::stoull(key)) : vocab.intern(key);
      }
      counts[id] += count;
    }
    for (const auto& [t, c] : counts) d.tokens.push_back({t, c});
    std::set<LabelId> labels;
    for (const auto& l : r.labels) {
      if (l.is_string()) {
        const auto name = l.get<std::string>();
        if (pinned) {
          auto f = label_vocab.find(name);
          if (!f) fail_line(r.line, fmt::format("label '{}' not in vocabulary", name));
          labels.insert(*f);
        } else {
          labels.insert(label_vocab.intern(name));
        }
      } else {
        const auto v = l.get<std::uint64_t>();
        if (pinned || !numeric_labels) {
          if (pinned && v < label_vocab.size()) {
            labels.insert(static_cast<LabelId>(v));
            continue;
          }
          if (pinned) fail_line(r.line, fmt::format("label id {} out of range (label count {})", v, label_vocab.size()));
          labels.insert(label_vocab.intern(std::to_string(v)));
        } else {
          labels.insert(static_cast<LabelId>(v));
        }
      }
    }
    d.labels.assign(labels.begin(), labels.end());
    docs.push_back(std::move(d));
  }
  return Corpus(std::move(docs), std::move(vocab), std::move(label_vocab), period_unit);
}

std::string corpus_to_jsonl(const Corpus& corpus) {
  std::string out;
  for (const auto& d : corpus.documents()) {
    nlohmann::ordered_json j;
    j["id"] = d.id;
    j["timestamp"] = d.timestamp;
    nlohmann::ordered_json toks = nlohmann::ordered_json::object();
    for (const auto& tc : d.tokens) toks[corpus.vocabulary().name(tc.token)] = tc.count;
    j["tokens"] = std::move(toks);
    nlohmann::ordered_json labels = nlohmann::ordered_json::array();
    for (auto l : d.labels) labels.push_back(corpus.labels().name(l));
    j["labels"] = std::move(labels);
    out += j.dump();
    out += '\n';
  }
  return out;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path, const std::filesystem::path& vocabulary_path) {
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
    out << corpus_to_jsonl(corpus);
  }
  nlohmann::ordered_json v;
  v["tokens"] = corpus.vocabulary().names();
  v["labels"] = corpus.labels().names();
  v["period_unit"] = corpus.period_unit();
  std::ofstream vout(vocabulary_path, std::ios::binary);
  if (!vout) throw std::runtime_error(fmt::format("cannot write '{}'", vocabulary_path.string()));
  vout << v.dump(2) << '\n';
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Splits

SplitPlan chronological_split(const Corpus& corpus, Period t1, Period t2) {
  if (t1 >= t2) throw ValidationError(fmt::format("eval-fix split requires t1 < t2 (got {} and {})", t1, t2));
  SplitPlan plan;
  plan.kind = EvalFixKind{};
  for (Period p : corpus.periods()) {
    if (p < t1) plan.train.insert(p);
    else if (p <= t2) plan.val.insert(p);
    else plan.test.insert(p);
  }
  if (plan.train.empty()) throw ValidationError(fmt::format("empty train bucket: no documents before period {}", t1));
  if (plan.val.empty()) throw ValidationError(fmt::format("empty validation bucket: no documents in [{}, {}]", t1, t2));
  if (plan.test.empty()) throw ValidationError(fmt::format("empty test bucket: no documents after period {}", t2));
  return plan;
}

std::vector<SplitPlan> stream_splits(const Corpus& corpus, Period start) {
  const auto periods = corpus.periods();
  auto it = std::find(periods.begin(), periods.end(), start);
  if (it == periods.end()) throw ValidationError(fmt::format("stream start period {} is not populated", start));
  if (std::next(it) == periods.end())
    throw ValidationError(fmt::format("stream start period {} is the last populated period", start));
  std::vector<SplitPlan> plans;
  for (auto cur = it; std::next(cur) != periods.end(); ++cur) {
    SplitPlan plan;
    plan.train.insert(periods.begin(), std::next(cur));
    plan.val.insert(*cur);
    plan.test.insert(*std::next(cur));
    plan.kind = EvalStreamStep{*cur};
    plans.push_back(std::move(plan));
  }
  return plans;
}

std::pair<DocRefs, DocRefs> halve_training(const DocRefs& train_docs) {
  if (train_docs.size() < 2) throw ValidationError("halve_training needs at least 2 documents");
  const std::size_t old_n = (train_docs.size() + 1) / 2;
  DocRefs old_half(train_docs.begin(), train_docs.begin() + static_cast<std::ptrdiff_t>(old_n));
  DocRefs recent(train_docs.begin() + static_cast<std::ptrdiff_t>(old_n), train_docs.end());
  return {std::move(old_half), std::move(recent)};
}

std::vector<DomainWindow> sliding_windows(std::span<const Period> periods, int length) {
  if (length < 1) throw ValidationError("window length must be >= 1");
  if (periods.size() < static_cast<std::size_t>(length))
    throw ValidationError(fmt::format("{} periods cannot form a window of length {}", periods.size(), length));
  std::vector<DomainWindow> out;
  for (std::size_t i = 0; i + static_cast<std::size_t>(length) <= periods.size(); ++i) {
    out.push_back({static_cast<int>(i), {periods.begin() + static_cast<std::ptrdiff_t>(i),
                                         periods.begin() + static_cast<std::ptrdiff_t>(i) + length}});
  }
  return out;
}

std::vector<PeriodGroup> group_by_period(const DocRefs& docs, std::size_t min_docs_per_period) {
  std::vector<PeriodGroup> raw;
  for (const Document* d : docs) {
    if (raw.empty() || raw.back().period != d->timestamp) raw.push_back({d->timestamp, {}});
    raw.back().docs.push_back(d);
  }
  std::vector<PeriodGroup> out;
  PeriodGroup pending{0, {}};
  for (auto& g : raw) {
    pending.period = g.period;
    pending.docs.insert(pending.docs.end(), g.docs.begin(), g.docs.end());
    if (pending.docs.size() >= min_docs_per_period) {
      out.push_back(std::move(pending));
      pending = {0, {}};
    }
  }
  if (!pending.docs.empty()) {
    if (out.empty()) {
      out.push_back(std::move(pending));
    } else {
      auto& last = out.back();
      last.docs.insert(last.docs.end(), pending.docs.begin(), pending.docs.end());
      last.period = pending.period;
    }
  }
  return out;
}

}  // namespace driftlab
