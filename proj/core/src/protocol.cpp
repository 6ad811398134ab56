#include "driftlab/protocol.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <fmt/format.h>

#include "driftlab/errors.hpp"
#include "driftlab/metrics.hpp"

namespace driftlab {

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("mean_std of no values");
  // Identical values give an exact mean and zero spread, free of summation rounding.
  if (std::all_of(values.begin(), values.end(), [&](double v) { return v == values.front(); }))
    return {values.front(), 0.0};
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

std::vector<Aggregate> ResultTable::aggregates() const {
  std::vector<std::string> order;
  std::map<std::string, std::array<std::vector<double>, 3>> values;
  for (const auto& r : records) {
    if (r.split != split_id::kTest && r.split != split_id::kStream) continue;
    auto [it, fresh] = values.try_emplace(r.method);
    if (fresh) order.push_back(r.method);
    it->second[0].push_back(r.macro_f1);
    it->second[1].push_back(r.micro_f1);
    it->second[2].push_back(r.mrp);
  }
  std::vector<Aggregate> out;
  for (const auto& m : order) {
    const auto& v = values.at(m);
    out.push_back({m, v[0].size(), mean_std(v[0]), mean_std(v[1]), mean_std(v[2])});
  }
  return out;
}

std::vector<SeriesPoint> ResultTable::series() const {
  std::vector<std::string> order;
  std::map<std::string, std::map<Period, std::array<std::vector<double>, 3>>> values;
  for (const auto& r : records) {
    if ((r.split != split_id::kTestPeriod && r.split != split_id::kStream) || !r.period) continue;
    auto [it, fresh] = values.try_emplace(r.method);
    if (fresh) order.push_back(r.method);
    auto& cell = it->second[*r.period];
    cell[0].push_back(r.macro_f1);
    cell[1].push_back(r.micro_f1);
    cell[2].push_back(r.mrp);
  }
  static constexpr std::array<std::string_view, 3> kNames{"macro_f1", "micro_f1", "mrp"};
  std::vector<SeriesPoint> out;
  for (const auto& m : order) {
    for (const auto& [period, v] : values.at(m)) {
      for (std::size_t k = 0; k < 3; ++k) out.push_back({m, period, std::string(kNames[k]), mean_std(v[k])});
    }
  }
  return out;
}

std::string records_csv(std::span<const MetricRecord> records) {
  std::string out = "method,seed,split,period,macro_f1,micro_f1,mrp\n";
  for (const auto& r : records) {
    out += fmt::format("{},{},{},{},{},{},{}\n", r.method, r.seed, r.split, r.period ? fmt::format("{}", *r.period) : "",
                       r.macro_f1, r.micro_f1, r.mrp);
  }
  return out;
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, ',')) fields.push_back(cur);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

template <typename T>
T parse_number(const std::string& s, std::size_t line_no) {
  std::istringstream in(s);
  in.imbue(std::locale::classic());
  T v{};
  in >> v;
  if (in.fail() || !in.eof()) throw ValidationError(fmt::format("records line {}: bad number '{}'", line_no, s));
  return v;
}

}  // namespace

std::vector<MetricRecord> parse_records_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != "method,seed,split,period,macro_f1,micro_f1,mrp")
    throw ValidationError("records CSV: unexpected header");
  std::vector<MetricRecord> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 7) throw ValidationError(fmt::format("records line {}: expected 7 fields", line_no));
    MetricRecord r;
    r.method = f[0];
    r.seed = parse_number<std::uint64_t>(f[1], line_no);
    r.split = f[2];
    if (!f[3].empty()) r.period = parse_number<Period>(f[3], line_no);
    r.macro_f1 = parse_number<double>(f[4], line_no);
    r.micro_f1 = parse_number<double>(f[5], line_no);
    r.mrp = parse_number<double>(f[6], line_no);
    out.push_back(std::move(r));
  }
  return out;
}

std::string series_csv(const std::vector<SeriesPoint>& series) {
  std::string out = "method,period,metric,mean,std\n";
  for (const auto& p : series) out += fmt::format("{},{},{},{},{}\n", p.method, p.period, p.metric, p.value.mean, p.value.std);
  return out;
}

const std::vector<std::string>& registered_methods() {
  static const std::vector<std::string> names{"baseline-full", "baseline-old", "baseline-recent", "ift",
                                              "ewc",           "er",           "agem",            "lora",
                                              "adapter",       "coral",        "irm",             "groupdro"};
  return names;
}

MethodSpec method_spec(std::string_view name) {
  MethodSpec m;
  m.name = std::string(name);
  if (name == "baseline-full" || name == "baseline-old" || name == "baseline-recent") {
    m.regime = Regime::Baseline;
    m.variant = name == "baseline-full"  ? BaselineVariant::Full
                : name == "baseline-old" ? BaselineVariant::Old
                                         : BaselineVariant::Recent;
    return m;
  }
  static const std::map<std::string_view, StrategyKind> kinds{
      {"ift", StrategyKind::None},   {"ewc", StrategyKind::Ewc},         {"er", StrategyKind::Er},
      {"agem", StrategyKind::Agem},  {"lora", StrategyKind::Lora},       {"adapter", StrategyKind::Adapter},
      {"coral", StrategyKind::Coral}, {"irm", StrategyKind::Irm},        {"groupdro", StrategyKind::GroupDro}};
  const auto it = kinds.find(name);
  if (it == kinds.end()) throw ValidationError(fmt::format("unknown method '{}'", name));
  m.strategy.kind = it->second;
  return m;
}

SeedStreams seed_streams(std::uint64_t seed) { return {seed, mix_seed(seed, 1), mix_seed(seed, 2)}; }

namespace {

struct CellSetup {
  ModelConfig model;
  TrainConfig train;
  StrategyConfig strategy;
};

CellSetup setup_cell(const Corpus& corpus, const MethodSpec& method, std::uint64_t seed, const ProtocolConfig& config) {
  const auto seeds = seed_streams(seed);
  CellSetup s{config.model, config.train, method.strategy};
  s.model.vocab_size = corpus.vocab_size();
  s.model.n_labels = corpus.label_count();
  s.model.seed = seeds.model;
  s.train.shuffle_seed = seeds.shuffle;
  s.strategy.seed = seeds.strategy;
  return s;
}

MetricRecord score(const ModelState& model, const DocRefs& docs, const MetricOptions& opts, const MethodSpec& method,
                   std::uint64_t seed, std::string_view split, std::optional<Period> period) {
  const auto m = evaluate(model, docs, opts);
  return {method.name, seed, std::string(split), period, m.macro_f1, m.micro_f1, m.mrp};
}

}  // namespace

CellResult run_fix_cell(const Corpus& corpus, const SplitPlan& plan, const MethodSpec& method, std::uint64_t seed,
                        const ProtocolConfig& config) {
  const auto s = setup_cell(corpus, method, seed, config);
  const DocRefs test = corpus.select(plan.test);
  if (test.empty()) throw ValidationError("eval-fix: empty test bucket");
  CellResult out;
  ModelState final_model;
  if (method.regime == Regime::Baseline) {
    auto trained = train_baseline(corpus, plan, method.variant, s.model, s.train);
    const Period last = *plan.train.rbegin();
    out.checkpoints.emplace_back(last, trained.model);
    out.log = std::move(trained.log);
    final_model = std::move(trained.model);
  } else {
    auto strategy = make_strategy(s.strategy);
    auto result = train_ift(corpus, plan, s.model, s.train, strategy.get());
    out.checkpoints = std::move(result.checkpoints);
    out.log = std::move(result.final.log);
    final_model = std::move(result.final.model);
  }
  out.records.push_back(score(final_model, test, s.train.metrics, method, seed, split_id::kTest, std::nullopt));
  if (config.per_period) {
    for (Period p : plan.test)
      out.records.push_back(
          score(final_model, corpus.in_period(p), s.train.metrics, method, seed, split_id::kTestPeriod, p));
  }
  return out;
}

CellResult run_stream_cell(const Corpus& corpus, const std::vector<SplitPlan>& plans, const MethodSpec& method,
                           std::uint64_t seed, const ProtocolConfig& config) {
  if (plans.empty()) throw ValidationError("eval-stream: no steps");
  const auto s = setup_cell(corpus, method, seed, config);
  CellResult out;
  if (method.regime == Regime::Baseline) {
    for (const auto& plan : plans) {
      auto trained = train_baseline(corpus, plan, method.variant, s.model, s.train);
      const Period t = *plan.val.begin();
      const Period next = *plan.test.begin();
      out.records.push_back(
          score(trained.model, corpus.select(plan.test), s.train.metrics, method, seed, split_id::kStream, next));
      out.log.insert(out.log.end(), trained.log.begin(), trained.log.end());
      out.checkpoints.emplace_back(t, std::move(trained.model));
    }
    return out;
  }
  auto strategy = make_strategy(s.strategy);
  IncrementalTrainer trainer(init_model(s.model), s.train, strategy.get());
  std::optional<Period> trained_through;
  for (const auto& plan : plans) {
    for (Period p : plan.train) {
      if (trained_through && p <= *trained_through) continue;
      const DocRefs docs = corpus.in_period(p);
      trainer.advance(p, docs, docs);
      out.checkpoints.emplace_back(p, trainer.model());
      trained_through = p;
    }
    const Period next = *plan.test.begin();
    out.records.push_back(
        score(trainer.model(), corpus.select(plan.test), s.train.metrics, method, seed, split_id::kStream, next));
  }
  out.log = trainer.log();
  return out;
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next.store(n);
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

namespace {

template <typename RunCell>
ResultTable run_grid(const ProtocolConfig& config, const CellSink& sink, RunCell run_cell) {
  if (config.methods.empty()) throw ValidationError("no methods configured");
  if (config.seeds.empty()) throw ValidationError("no seeds configured");
  const std::size_t n_cells = config.methods.size() * config.seeds.size();
  std::vector<std::vector<MetricRecord>> results(n_cells);
  parallel_for(n_cells, config.threads, [&](std::size_t i) {
    const CellKey key{i / config.seeds.size(), config.seeds[i % config.seeds.size()]};
    auto cell = run_cell(config.methods[key.method], key.seed);
    if (sink) sink(key, cell);
    results[i] = std::move(cell.records);
  });
  ResultTable table;
  for (auto& r : results) table.records.insert(table.records.end(), r.begin(), r.end());
  return table;
}

}  // namespace

ResultTable run_eval_fix(const Corpus& corpus, const SplitPlan& plan, const ProtocolConfig& config,
                         const CellSink& sink) {
  return run_grid(config, sink, [&](const MethodSpec& m, std::uint64_t seed) {
    return run_fix_cell(corpus, plan, m, seed, config);
  });
}

ResultTable run_eval_stream(const Corpus& corpus, Period start, const ProtocolConfig& config, const CellSink& sink) {
  const auto plans = stream_splits(corpus, start);
  return run_grid(config, sink, [&](const MethodSpec& m, std::uint64_t seed) {
    return run_stream_cell(corpus, plans, m, seed, config);
  });
}

}  // namespace driftlab
