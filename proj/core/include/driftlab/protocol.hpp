#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "driftlab/corpus.hpp"
#include "driftlab/model.hpp"
#include "driftlab/strategies.hpp"
#include "driftlab/train.hpp"

namespace driftlab {

namespace split_id {
inline constexpr std::string_view kTest = "test";
inline constexpr std::string_view kTestPeriod = "test-period";
inline constexpr std::string_view kStream = "stream";
}  // namespace split_id

struct MetricRecord {
  std::string method;
  std::uint64_t seed = 0;
  std::string split;
  /// Test period for per-period and stream records.
  std::optional<Period> period;
  double macro_f1 = 0.0;
  double micro_f1 = 0.0;
  double mrp = 0.0;

  friend bool operator==(const MetricRecord&, const MetricRecord&) = default;
};

struct MeanStd {
  double mean = 0.0;
  /// Sample standard deviation (n − 1); 0 for a single record.
  double std = 0.0;
};

MeanStd mean_std(std::span<const double> values);

struct Aggregate {
  std::string method;
  std::size_t count = 0;
  MeanStd macro_f1;
  MeanStd micro_f1;
  MeanStd mrp;
};

struct SeriesPoint {
  std::string method;
  Period period = 0;
  std::string metric;
  MeanStd value;
};

struct ResultTable {
  std::vector<MetricRecord> records;

  /// Per method, over its "test" and "stream" records, in first-seen order.
  std::vector<Aggregate> aggregates() const;
  /// Per (method, period, metric) over seeds, from "test-period" and "stream" records.
  std::vector<SeriesPoint> series() const;
};

/// Header `method,seed,split,period,macro_f1,micro_f1,mrp`.
std::string records_csv(std::span<const MetricRecord> records);
std::vector<MetricRecord> parse_records_csv(std::string_view text);
std::string series_csv(const std::vector<SeriesPoint>& series);

enum class Regime { Baseline, Incremental };

struct MethodSpec {
  std::string name;
  Regime regime = Regime::Incremental;
  BaselineVariant variant = BaselineVariant::Full;
  StrategyConfig strategy;
};

/// baseline-full, baseline-old, baseline-recent, ift, ewc, er, agem, lora,
/// adapter, coral, irm, groupdro.
const std::vector<std::string>& registered_methods();
/// Default spec for a registered name; ValidationError otherwise.
MethodSpec method_spec(std::string_view name);

struct ProtocolConfig {
  /// vocab_size and n_labels are taken from the corpus.
  ModelConfig model;
  TrainConfig train;
  std::vector<MethodSpec> methods;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  /// Eval-Fix only: also score every test period separately.
  bool per_period = false;
  std::size_t threads = 1;
};

/// Everything one (method, seed) cell produces.
struct CellResult {
  std::vector<MetricRecord> records;
  std::vector<std::pair<Period, ModelState>> checkpoints;
  std::vector<EpochLog> log;
};

struct SeedStreams {
  std::uint64_t model;
  std::uint64_t shuffle;
  std::uint64_t strategy;
};
SeedStreams seed_streams(std::uint64_t seed);

CellResult run_fix_cell(const Corpus& corpus, const SplitPlan& plan, const MethodSpec& method, std::uint64_t seed,
                        const ProtocolConfig& config);

/// Baselines retrain from scratch at every step; incremental methods extend
/// one chain with a single fit per newly covered period.
CellResult run_stream_cell(const Corpus& corpus, const std::vector<SplitPlan>& plans, const MethodSpec& method,
                           std::uint64_t seed, const ProtocolConfig& config);

struct CellKey {
  std::size_t method;
  std::uint64_t seed;
};

/// Optional hook receiving each finished cell, called from worker threads.
using CellSink = std::function<void(const CellKey&, const CellResult&)>;

ResultTable run_eval_fix(const Corpus& corpus, const SplitPlan& plan, const ProtocolConfig& config,
                         const CellSink& sink = {});
ResultTable run_eval_stream(const Corpus& corpus, Period start, const ProtocolConfig& config,
                            const CellSink& sink = {});

/// Runs fn(i) for i in [0, n) on up to `threads` workers. The first
/// exception thrown is rethrown after all workers join.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace driftlab
