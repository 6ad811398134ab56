#include "driftlab/experiment.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <map>
#include <mutex>
#include <set>

#include <fmt/format.h>

#include "driftlab/checkpoint.hpp"
#include "driftlab/drift.hpp"
#include "driftlab/errors.hpp"

namespace driftlab {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

/// Integers written in a file parse as unsigned, but ones built in code are signed.
bool is_count(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

/// Typed access to one JSON object that remembers which keys were read, so
/// leftovers can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError(fmt::format("{}: expected an object", label()));
  }

  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  const json* child(const std::string& key) {
    seen_.insert(key);
    return has(key) ? &j_.at(key) : nullptr;
  }

  template <typename T>
  std::optional<T> get(const std::string& key) {
    const json* v = child(key);
    if (!v) return std::nullopt;
    return convert<T>(*v, key);
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    if (auto v = get<T>(key)) out = *v;
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ValidationError(fmt::format("unknown config key '{}'", key_path(k)));
  }

 private:
  std::string label() const { return path_.empty() ? "config" : path_; }

  template <typename T>
  T convert(const json& v, const std::string& key) const {
    const auto bad = [&](std::string_view want) {
      return ValidationError(fmt::format("config key '{}': expected {}, got {}", key_path(key), want, v.dump()));
    };
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw bad("a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw bad("a number");
      return v.get<T>();
    } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
      if (!is_count(v)) throw bad("a non-negative integer");
      return v.get<T>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw bad("an integer");
      return v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw bad("a string");
      return v.get<std::string>();
    } else {
      static_assert(sizeof(T) == 0, "unsupported config type");
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_relative() && !base.empty() ? base / path : path;
}

void read_window(Section& s, StrategyConfig& c) {
  s.read("window_length", c.window_length);
  s.read("domains_per_window", c.domains_per_window);
}

MethodSpec parse_method(const json& entry, std::size_t index) {
  if (entry.is_string()) return method_spec(entry.get<std::string>());
  Section s(entry, fmt::format("methods[{}]", index));
  const auto name = s.get<std::string>("name");
  if (!name) throw ValidationError(fmt::format("methods[{}]: missing 'name'", index));
  MethodSpec m = method_spec(*name);
  auto& c = m.strategy;
  switch (c.kind) {
    case StrategyKind::None: break;
    case StrategyKind::Ewc:
      s.read("lambda", c.ewc_lambda);
      s.read("gamma", c.ewc_gamma);
      break;
    case StrategyKind::Er:
      s.read("replay_every", c.er_replay_every);
      s.read("fraction", c.er_fraction);
      if (auto cap = s.get<std::size_t>("capacity")) c.er_capacity = *cap;
      break;
    case StrategyKind::Agem: s.read("capacity", c.agem_capacity); break;
    case StrategyKind::Lora:
      s.read("enabled", c.expansion_enabled);
      s.read("rank", c.lora_rank);
      s.read("alpha", c.lora_alpha);
      if (const json* t = s.child("targets")) {
        if (!t->is_array()) throw ValidationError("lora targets must be a list");
        c.lora_targets.clear();
        for (const auto& x : *t) c.lora_targets.push_back(x.get<std::string>());
      }
      break;
    case StrategyKind::Adapter:
      s.read("enabled", c.expansion_enabled);
      s.read("reduction", c.adapter_reduction);
      break;
    case StrategyKind::Coral:
      s.read("lambda", c.coral_lambda);
      read_window(s, c);
      break;
    case StrategyKind::Irm:
      s.read("lambda", c.irm_lambda);
      read_window(s, c);
      break;
    case StrategyKind::GroupDro:
      s.read("eta", c.dro_eta);
      read_window(s, c);
      break;
  }
  s.finish();
  return m;
}

ojson method_json(const MethodSpec& m) {
  ojson j;
  j["name"] = m.name;
  const auto& c = m.strategy;
  if (m.regime == Regime::Baseline) return j;
  switch (c.kind) {
    case StrategyKind::None: break;
    case StrategyKind::Ewc:
      j["lambda"] = c.ewc_lambda;
      j["gamma"] = c.ewc_gamma;
      break;
    case StrategyKind::Er:
      j["replay_every"] = c.er_replay_every;
      j["fraction"] = c.er_fraction;
      j["capacity"] = c.er_capacity ? ojson(*c.er_capacity) : ojson(nullptr);
      break;
    case StrategyKind::Agem: j["capacity"] = c.agem_capacity; break;
    case StrategyKind::Lora:
      j["enabled"] = c.expansion_enabled;
      j["rank"] = c.lora_rank;
      j["alpha"] = c.lora_alpha;
      j["targets"] = c.lora_targets;
      break;
    case StrategyKind::Adapter:
      j["enabled"] = c.expansion_enabled;
      j["reduction"] = c.adapter_reduction;
      break;
    case StrategyKind::Coral:
    case StrategyKind::Irm:
    case StrategyKind::GroupDro:
      if (c.kind == StrategyKind::Coral) j["lambda"] = c.coral_lambda;
      if (c.kind == StrategyKind::Irm) j["lambda"] = c.irm_lambda;
      if (c.kind == StrategyKind::GroupDro) j["eta"] = c.dro_eta;
      j["window_length"] = c.window_length;
      j["domains_per_window"] = c.domains_per_window;
      break;
  }
  return j;
}

}  // namespace

ExperimentConfig parse_experiment(const json& doc, const std::filesystem::path& base_dir) {
  ExperimentConfig cfg;
  Section root(doc, "");

  const json* corpus = root.child("corpus");
  const json* synth = root.child("synth");
  if (corpus && synth) throw ValidationError("config: give either 'corpus' or 'synth', not both");
  if (corpus) {
    Section s(*corpus, "corpus");
    CorpusSource src;
    const auto path = s.get<std::string>("path");
    if (!path) throw ValidationError("config: corpus.path is required");
    src.path = resolve(base_dir, *path);
    if (auto v = s.get<std::string>("vocabulary")) src.vocabulary = resolve(base_dir, *v);
    src.period_unit = s.get<int>("period_unit");
    s.finish();
    cfg.corpus = src;
  } else {
    SynthParams p;
    if (synth) {
      Section s(*synth, "synth");
      s.read("n_periods", p.n_periods);
      s.read("docs_per_period", p.docs_per_period);
      s.read("vocab_size", p.vocab_size);
      s.read("n_labels", p.n_labels);
      s.read("drift_rate", p.drift_rate);
      s.read("seed", p.seed);
      s.finish();
    }
    cfg.corpus = p;
  }

  if (const json* proto = root.child("protocol")) {
    Section s(*proto, "protocol");
    const auto kind = s.get<std::string>("kind").value_or("eval-fix");
    if (kind == "eval-fix") {
      EvalFixProtocol p;
      const auto t1 = s.get<Period>("t1");
      const auto t2 = s.get<Period>("t2");
      if (!t1 || !t2) throw ValidationError("config: eval-fix needs protocol.t1 and protocol.t2");
      p.t1 = *t1;
      p.t2 = *t2;
      cfg.protocol = p;
    } else if (kind == "eval-stream") {
      const auto start = s.get<Period>("start");
      if (!start) throw ValidationError("config: eval-stream needs protocol.start");
      cfg.protocol = EvalStreamProtocol{*start};
    } else {
      throw ValidationError(fmt::format("config: unknown protocol kind '{}'", kind));
    }
    s.finish();
  } else {
    throw ValidationError("config: 'protocol' is required");
  }

  auto& run = cfg.run;
  if (const json* methods = root.child("methods")) {
    if (!methods->is_array()) throw ValidationError("config: 'methods' must be a list");
    std::set<std::string> names;
    for (std::size_t i = 0; i < methods->size(); ++i) {
      auto m = parse_method(methods->at(i), i);
      if (!names.insert(m.name).second) throw ValidationError(fmt::format("config: method '{}' listed twice", m.name));
      run.methods.push_back(std::move(m));
    }
  }
  if (run.methods.empty()) throw ValidationError("config: at least one method is required");

  if (const json* model = root.child("model")) {
    Section s(*model, "model");
    s.read("embed_dim", run.model.embed_dim);
    s.read("hidden_dim", run.model.hidden_dim);
    s.read("label_attention", run.model.use_label_attention);
    if (auto n = s.get<std::string>("nonlinearity")) run.model.nonlinearity = parse_nonlinearity(*n);
    s.finish();
  }

  if (const json* train = root.child("train")) {
    Section s(*train, "train");
    auto& t = run.train;
    s.read("max_epochs", t.max_epochs);
    s.read("patience", t.patience);
    if (auto w = s.get<std::size_t>("warmup_epochs")) t.warmup_epochs = *w;
    s.read("batch_size", t.batch_size);
    if (auto preset = s.get<std::string>("lr_preset")) {
      if (*preset == "pretrained") t.lr = kPretrainedLearningRate;
      else if (*preset == "default") t.lr = kDefaultLearningRate;
      else throw ValidationError(fmt::format("config: unknown lr_preset '{}'", *preset));
    }
    s.read("lr", t.lr);
    s.read("weight_decay", t.weight_decay);
    s.read("beta1", t.beta1);
    s.read("beta2", t.beta2);
    s.read("eps", t.eps);
    s.read("carry_optimizer", t.carry_optimizer);
    s.read("min_docs_per_period", t.min_docs_per_period);
    s.read("threshold", t.metrics.threshold);
    s.finish();
  }

  if (const json* seeds = root.child("seeds")) {
    if (!seeds->is_array() || seeds->empty()) throw ValidationError("config: 'seeds' must be a non-empty list");
    run.seeds.clear();
    for (const auto& x : *seeds) {
      if (!is_count(x)) throw ValidationError("config: seeds must be non-negative integers");
      run.seeds.push_back(x.get<std::uint64_t>());
    }
  }
  if (auto out = root.get<std::string>("output_dir")) cfg.output_dir = resolve(base_dir, *out);
  root.read("echr_extra_label", cfg.echr_extra_label);
  root.read("per_period", run.per_period);
  root.read("threads", run.threads);
  root.read("drift_smoothing", cfg.drift_smoothing);
  root.finish();

  run.train.metrics.extra_label = cfg.echr_extra_label;
  if (run.threads < 1) throw ValidationError("config: threads must be >= 1");
  if (cfg.drift_smoothing < 0.0) throw ValidationError("config: drift_smoothing must be >= 0");
  run.train.validate();
  return cfg;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError(fmt::format("cannot open config '{}'", path.string()));
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(fmt::format("config '{}': {}", path.string(), e.what()));
  }
  return parse_experiment(doc, path.parent_path());
}

ojson to_json(const ExperimentConfig& c) {
  ojson j;
  if (const auto* src = std::get_if<CorpusSource>(&c.corpus)) {
    j["corpus"]["path"] = src->path.string();
    j["corpus"]["vocabulary"] = src->vocabulary ? ojson(src->vocabulary->string()) : ojson(nullptr);
    j["corpus"]["period_unit"] = src->period_unit ? ojson(*src->period_unit) : ojson(nullptr);
  } else {
    const auto& p = std::get<SynthParams>(c.corpus);
    j["synth"] = {{"n_periods", p.n_periods}, {"docs_per_period", p.docs_per_period}, {"vocab_size", p.vocab_size},
                  {"n_labels", p.n_labels},   {"drift_rate", p.drift_rate},           {"seed", p.seed}};
  }
  if (const auto* fix = std::get_if<EvalFixProtocol>(&c.protocol))
    j["protocol"] = {{"kind", "eval-fix"}, {"t1", fix->t1}, {"t2", fix->t2}};
  else
    j["protocol"] = {{"kind", "eval-stream"}, {"start", std::get<EvalStreamProtocol>(c.protocol).start}};
  j["methods"] = ojson::array();
  for (const auto& m : c.run.methods) j["methods"].push_back(method_json(m));
  const auto& mc = c.run.model;
  j["model"] = {{"embed_dim", mc.embed_dim},
                {"hidden_dim", mc.hidden_dim},
                {"label_attention", mc.use_label_attention},
                {"nonlinearity", std::string(to_string(mc.nonlinearity))}};
  const auto& t = c.run.train;
  ojson train;
  train["max_epochs"] = t.max_epochs;
  train["patience"] = t.patience;
  train["warmup_epochs"] = t.warmup_epochs ? ojson(*t.warmup_epochs) : ojson(nullptr);
  train["batch_size"] = t.batch_size;
  train["lr"] = t.lr;
  train["beta1"] = t.beta1;
  train["beta2"] = t.beta2;
  train["eps"] = t.eps;
  train["weight_decay"] = t.weight_decay;
  train["carry_optimizer"] = t.carry_optimizer;
  train["min_docs_per_period"] = t.min_docs_per_period;
  train["threshold"] = t.metrics.threshold;
  j["train"] = train;
  j["seeds"] = c.run.seeds;
  j["output_dir"] = c.output_dir.string();
  j["echr_extra_label"] = c.echr_extra_label;
  j["per_period"] = c.run.per_period;
  j["threads"] = c.run.threads;
  j["drift_smoothing"] = c.drift_smoothing;
  return j;
}

Corpus materialize_corpus(const ExperimentConfig& config) {
  if (const auto* src = std::get_if<CorpusSource>(&config.corpus)) {
    if (!std::filesystem::exists(src->path))
      throw ValidationError(fmt::format("corpus file '{}' does not exist", src->path.string()));
    return load_corpus(src->path, LoadOptions{src->vocabulary, src->period_unit});
  }
  return synth_drift_corpus(std::get<SynthParams>(config.corpus));
}

std::vector<SplitPlan> experiment_plans(const Corpus& corpus, const ExperimentConfig& config) {
  if (const auto* fix = std::get_if<EvalFixProtocol>(&config.protocol))
    return {chronological_split(corpus, fix->t1, fix->t2)};
  return stream_splits(corpus, std::get<EvalStreamProtocol>(config.protocol).start);
}

namespace {

ojson bucket_json(const Corpus& corpus, const std::set<Period>& periods) {
  ojson j;
  ojson per = ojson::object();
  std::size_t total = 0;
  for (Period p : periods) {
    const auto n = corpus.in_period(p).size();
    per[std::to_string(p)] = n;
    total += n;
  }
  j["documents"] = total;
  j["periods"] = per;
  return j;
}

}  // namespace

ojson split_summary(const Corpus& corpus, const ExperimentConfig& config) {
  const auto plans = experiment_plans(corpus, config);
  ojson j;
  j["corpus_hash"] = corpus_hash(corpus);
  j["documents"] = corpus.size();
  j["protocol"] = std::holds_alternative<EvalFixProtocol>(config.protocol) ? "eval-fix" : "eval-stream";
  j["plans"] = ojson::array();
  for (const auto& plan : plans) {
    ojson p;
    if (const auto* step = std::get_if<EvalStreamStep>(&plan.kind)) p["step"] = step->t;
    p["train"] = bucket_json(corpus, plan.train);
    p["val"] = bucket_json(corpus, plan.val);
    p["test"] = bucket_json(corpus, plan.test);
    j["plans"].push_back(std::move(p));
  }
  return j;
}

DriftOutput drift_summary(const Corpus& corpus, const ExperimentConfig& config) {
  const auto plans = experiment_plans(corpus, config);
  const auto report = divergence_report(corpus, plans.back(), config.drift_smoothing);
  DriftOutput out;
  ojson j;
  j["smoothing"] = config.drift_smoothing;
  j["jsd_old_x"] = report.jsd_old_x;
  j["jsd_recent_x"] = report.jsd_recent_x;
  out.csv = "pair,marginal,value\n";
  out.csv += fmt::format("old,x,{}\nrecent,x,{}\n", report.jsd_old_x, report.jsd_recent_x);
  if (report.jsd_old_xy && report.jsd_recent_xy) {
    j["jsd_old_xy"] = *report.jsd_old_xy;
    j["jsd_recent_xy"] = *report.jsd_recent_xy;
    out.csv += fmt::format("old,x|y,{}\nrecent,x|y,{}\n", *report.jsd_old_xy, *report.jsd_recent_xy);
  } else {
    out.warnings.push_back("no label shared between the training halves and the test bucket; "
                           "conditional divergences omitted");
  }
  out.json = std::move(j);
  return out;
}

std::string corpus_hash(const Corpus& corpus) { return fmt::format("{:016x}", fnv1a64(corpus_to_jsonl(corpus))); }

namespace {

std::string log_jsonl(const std::vector<EpochLog>& log) {
  std::string out;
  for (const auto& e : log) {
    ojson j;
    j["period"] = e.period;
    j["epoch"] = e.epoch;
    j["train_loss"] = e.train_loss;
    j["val_macro_f1"] = e.val_macro_f1;
    out += j.dump() + "\n";
  }
  return out;
}

std::string aggregates_json(const ResultTable& table, const ExperimentConfig& config) {
  ojson j;
  j["seed_count"] = config.run.seeds.size();
  j["methods"] = ojson::array();
  for (const auto& a : table.aggregates()) {
    ojson m;
    m["method"] = a.method;
    m["records"] = a.count;
    for (const auto& [name, v] : {std::pair{"macro_f1", a.macro_f1}, {"micro_f1", a.micro_f1}, {"mrp", a.mrp}})
      m[name] = {{"mean", v.mean}, {"std", v.std}};
    j["methods"].push_back(std::move(m));
  }
  return j.dump(2) + "\n";
}

}  // namespace

RunOutcome run_experiment(const ExperimentConfig& config, const Corpus& corpus, const ProgressFn& progress) {
  namespace fs = std::filesystem;
  const auto plans = experiment_plans(corpus, config);
  const fs::path out = config.output_dir;
  fs::create_directories(out);

  ojson manifest;
  manifest["config"] = to_json(config);
  manifest["corpus_hash"] = corpus_hash(corpus);
  manifest["corpus_documents"] = corpus.size();
  manifest["vocab_size"] = corpus.vocab_size();
  manifest["label_count"] = corpus.label_count();
  const fs::path manifest_path = out / "manifest.json";
  if (fs::exists(manifest_path)) {
    ojson previous;
    try {
      previous = ojson::parse(read_file(manifest_path));
    } catch (const json::parse_error&) {
      throw ValidationError(fmt::format("'{}' is not valid JSON", manifest_path.string()));
    }
    if (previous != manifest)
      throw ValidationError(fmt::format("output directory '{}' holds a run with a different configuration or corpus",
                                        out.string()));
  } else {
    write_file_atomic(manifest_path, manifest.dump(2) + "\n");
  }

  const auto& run = config.run;
  const std::size_t n_cells = run.methods.size() * run.seeds.size();
  std::vector<std::vector<MetricRecord>> cells(n_cells);
  std::vector<char> resumed(n_cells, 0);
  std::mutex progress_mutex;
  const auto say = [&](const std::string& msg) {
    if (!progress) return;
    std::lock_guard lock(progress_mutex);
    progress(msg);
  };

  parallel_for(n_cells, run.threads, [&](std::size_t i) {
    const auto& method = run.methods[i / run.seeds.size()];
    const std::uint64_t seed = run.seeds[i % run.seeds.size()];
    const fs::path dir = out / method.name / std::to_string(seed);
    const fs::path marker = dir / "records.csv";
    if (fs::exists(marker)) {
      cells[i] = parse_records_csv(read_file(marker));
      resumed[i] = 1;
      say(fmt::format("{} seed {}: resumed", method.name, seed));
      return;
    }
    fs::create_directories(dir);
    const CellResult cell = plans.size() == 1 && std::holds_alternative<EvalFixProtocol>(config.protocol)
                                ? run_fix_cell(corpus, plans.front(), method, seed, run)
                                : run_stream_cell(corpus, plans, method, seed, run);
    for (const auto& [period, model] : cell.checkpoints)
      save_checkpoint(model, dir / fmt::format("period_{}.ckpt", period));
    write_file_atomic(dir / "train_log.jsonl", log_jsonl(cell.log));
    write_file_atomic(marker, records_csv(cell.records));
    cells[i] = cell.records;
    say(fmt::format("{} seed {}: done", method.name, seed));
  });

  RunOutcome outcome;
  for (std::size_t i = 0; i < n_cells; ++i) {
    outcome.table.records.insert(outcome.table.records.end(), cells[i].begin(), cells[i].end());
    (resumed[i] ? outcome.cells_resumed : outcome.cells_run) += 1;
  }
  write_file_atomic(out / "results.csv", records_csv(outcome.table.records));
  write_file_atomic(out / "aggregates.json", aggregates_json(outcome.table, config));
  write_file_atomic(out / "series.csv", series_csv(outcome.table.series()));
  return outcome;
}

Report render_report(const std::filesystem::path& results_dir) {
  const auto path = results_dir / "results.csv";
  if (!std::filesystem::exists(path))
    throw ValidationError(fmt::format("no results.csv in '{}'", results_dir.string()));
  const ResultTable table{parse_records_csv(read_file(path))};
  const auto aggs = table.aggregates();
  if (aggs.empty()) throw ValidationError("results.csv has no aggregate-eligible records");

  const auto pick = [](const Aggregate& a, std::size_t k) {
    return k == 0 ? a.macro_f1.mean : k == 1 ? a.micro_f1.mean : a.mrp.mean;
  };
  const auto pick_std = [](const Aggregate& a, std::size_t k) {
    return k == 0 ? a.macro_f1.std : k == 1 ? a.micro_f1.std : a.mrp.std;
  };
  // Rank the distinct means per column; ties share a rank.
  std::array<std::vector<double>, 3> ranked;
  for (std::size_t k = 0; k < 3; ++k) {
    for (const auto& a : aggs) ranked[k].push_back(pick(a, k));
    std::sort(ranked[k].begin(), ranked[k].end(), std::greater<>());
    ranked[k].erase(std::unique(ranked[k].begin(), ranked[k].end()), ranked[k].end());
  }

  Report r;
  r.table = "| method | n | macro_f1 | micro_f1 | mrp |\n|---|---|---|---|---|\n";
  for (const auto& a : aggs) {
    r.table += fmt::format("| {} | {} |", a.method, a.count);
    for (std::size_t k = 0; k < 3; ++k) {
      const double v = pick(a, k);
      std::string cell = fmt::format("{:.2f}_{{{:.2f}}}", 100.0 * v, 100.0 * pick_std(a, k));
      if (v == ranked[k][0]) cell = "**" + cell + "**";
      else if (ranked[k].size() > 1 && v == ranked[k][1]) cell = "<u>" + cell + "</u>";
      r.table += " " + cell + " |";
    }
    r.table += "\n";
  }
  r.plot_csv = series_csv(table.series());
  return r;
}

}  // namespace driftlab
