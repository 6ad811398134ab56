#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "driftlab/corpus.hpp"
#include "driftlab/protocol.hpp"

namespace driftlab {

struct CorpusSource {
  std::filesystem::path path;
  std::optional<std::filesystem::path> vocabulary;
  std::optional<int> period_unit;
};

struct EvalFixProtocol {
  Period t1 = 0;
  Period t2 = 0;
};
struct EvalStreamProtocol {
  Period start = 0;
};

struct ExperimentConfig {
  std::variant<CorpusSource, SynthParams> corpus = SynthParams{};
  std::variant<EvalFixProtocol, EvalStreamProtocol> protocol = EvalFixProtocol{};
  ProtocolConfig run;
  std::filesystem::path output_dir = "runs/experiment";
  bool echr_extra_label = false;
  double drift_smoothing = 1.0;
};

/// Parses the JSON experiment file. Relative paths resolve against `base_dir`.
/// Unknown keys are rejected.
ExperimentConfig parse_experiment(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment(const std::filesystem::path& path);

/// Every effective setting, defaults included.
nlohmann::ordered_json to_json(const ExperimentConfig& config);

Corpus materialize_corpus(const ExperimentConfig& config);

/// The protocol's single plan (Eval-Fix) or every step (Eval-Stream).
std::vector<SplitPlan> experiment_plans(const Corpus& corpus, const ExperimentConfig& config);

/// Per-bucket and per-period document counts of each plan.
nlohmann::ordered_json split_summary(const Corpus& corpus, const ExperimentConfig& config);

struct DriftOutput {
  nlohmann::ordered_json json;
  std::string csv;
  std::vector<std::string> warnings;
};

/// Old/Recent versus test divergences on the Eval-Fix plan or the last stream step.
DriftOutput drift_summary(const Corpus& corpus, const ExperimentConfig& config);

std::string corpus_hash(const Corpus& corpus);

struct RunOutcome {
  ResultTable table;
  std::size_t cells_run = 0;
  std::size_t cells_resumed = 0;
};

using ProgressFn = std::function<void(const std::string&)>;

/// Executes the protocol into config.output_dir. A cell whose records.csv
/// already exists under a matching manifest is loaded instead of retrained.
RunOutcome run_experiment(const ExperimentConfig& config, const Corpus& corpus, const ProgressFn& progress = {});

struct Report {
  std::string table;
  std::string plot_csv;
};

/// Markdown table of `mean_{std}` cells per method and metric, with the best
/// value per column in bold and the second best underlined.
Report render_report(const std::filesystem::path& results_dir);

}  // namespace driftlab
