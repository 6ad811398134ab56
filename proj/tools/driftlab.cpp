// driftlab: split / drift / run / report / synth over a JSON experiment file.
//
// Exit codes: 0 success, 1 validation error (bad config, data or flags),
// 2 runtime failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "driftlab/checkpoint.hpp"
#include "driftlab/corpus.hpp"
#include "driftlab/errors.hpp"
#include "driftlab/experiment.hpp"

namespace {

using nlohmann::json;
using namespace driftlab;

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

struct ConfigFlags {
  std::string config;
  std::string corpus;
  std::string output_dir;
  std::vector<std::uint64_t> seeds;
  std::size_t threads = 0;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& f) {
  cmd->add_option("-c,--config", f.config, "Experiment JSON file")->required();
  cmd->add_option("--corpus", f.corpus, "Override corpus.path");
  cmd->add_option("-o,--output-dir", f.output_dir, "Override output_dir");
  cmd->add_option("--seeds", f.seeds, "Override the seed list")->delimiter(',');
  cmd->add_option("-j,--threads", f.threads, "Override the worker count");
}

// Flags patch the parsed file before validation, so the precedence is
// built-in defaults < config file < command-line flags.
ExperimentConfig load_with_flags(const ConfigFlags& f) {
  std::ifstream in(f.config);
  if (!in) throw ValidationError(fmt::format("cannot open config '{}'", f.config));
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(fmt::format("config '{}': {}", f.config, e.what()));
  }
  if (!doc.is_object()) throw ValidationError("config: expected a JSON object");
  const auto cwd = std::filesystem::current_path();
  if (!f.corpus.empty()) {
    doc.erase("synth");
    doc["corpus"]["path"] = std::filesystem::absolute(cwd / f.corpus).string();
  }
  if (!f.output_dir.empty()) doc["output_dir"] = std::filesystem::absolute(cwd / f.output_dir).string();
  if (!f.seeds.empty()) doc["seeds"] = f.seeds;
  if (f.threads > 0) doc["threads"] = f.threads;
  return parse_experiment(doc, std::filesystem::path(f.config).parent_path());
}

void emit(const std::string& text, const std::string& path) {
  if (path.empty()) {
    std::cout << text;
  } else {
    write_file_atomic(path, text);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal drift training and evaluation toolkit"};
  app.require_subcommand(1);

  ConfigFlags split_flags, drift_flags, run_flags;
  std::string split_out;
  auto* split = app.add_subcommand("split", "Print per-bucket document counts of the protocol's split plans");
  add_config_flags(split, split_flags);
  split->add_option("--out", split_out, "Write the JSON summary here instead of stdout");

  auto* drift = app.add_subcommand("drift", "Jensen-Shannon divergences of Old/Recent training halves vs test");
  add_config_flags(drift, drift_flags);

  auto* run = app.add_subcommand("run", "Train and evaluate every method x seed cell");
  add_config_flags(run, run_flags);
  bool quiet = false;
  run->add_flag("-q,--quiet", quiet, "Suppress per-cell progress");

  std::string results_dir, report_out;
  auto* report = app.add_subcommand("report", "Render aggregate tables and plot data from a results directory");
  report->add_option("results_dir", results_dir, "Directory holding results.csv")->required();
  report->add_option("--out", report_out, "Write the table here instead of stdout");

  SynthParams synth_params;
  std::string synth_out, synth_vocab;
  auto* synth = app.add_subcommand("synth", "Write a synthetic drifting corpus as JSONL");
  synth->add_option("--out", synth_out, "Corpus JSONL path")->required();
  synth->add_option("--vocab", synth_vocab, "Sidecar vocabulary path (default: <out>.vocab.json)");
  synth->add_option("--periods", synth_params.n_periods)->capture_default_str();
  synth->add_option("--docs-per-period", synth_params.docs_per_period)->capture_default_str();
  synth->add_option("--vocab-size", synth_params.vocab_size)->capture_default_str();
  synth->add_option("--labels", synth_params.n_labels)->capture_default_str();
  synth->add_option("--drift-rate", synth_params.drift_rate)->capture_default_str();
  synth->add_option("--seed", synth_params.seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (*split) {
      const auto cfg = load_with_flags(split_flags);
      const auto corpus = materialize_corpus(cfg);
      emit(split_summary(corpus, cfg).dump(2) + "\n", split_out);
    } else if (*drift) {
      const auto cfg = load_with_flags(drift_flags);
      const auto corpus = materialize_corpus(cfg);
      const auto out = drift_summary(corpus, cfg);
      for (const auto& w : out.warnings) std::cerr << "warning: " << w << "\n";
      std::filesystem::create_directories(cfg.output_dir);
      write_file_atomic(cfg.output_dir / "drift.json", out.json.dump(2) + "\n");
      write_file_atomic(cfg.output_dir / "drift.csv", out.csv);
      std::cout << out.json.dump(2) << "\n";
    } else if (*run) {
      const auto cfg = load_with_flags(run_flags);
      const auto corpus = materialize_corpus(cfg);
      const auto outcome = run_experiment(cfg, corpus, [&](const std::string& msg) {
        if (!quiet) std::cerr << msg << "\n";
      });
      std::cerr << fmt::format("{} cells trained, {} resumed; results in {}\n", outcome.cells_run,
                               outcome.cells_resumed, cfg.output_dir.string());
    } else if (*report) {
      const auto r = render_report(results_dir);
      write_file_atomic(std::filesystem::path(results_dir) / "plot_data.csv", r.plot_csv);
      emit(r.table, report_out);
    } else if (*synth) {
      const auto corpus = synth_drift_corpus(synth_params);
      const std::string vocab = synth_vocab.empty() ? synth_out + ".vocab.json" : synth_vocab;
      save_corpus(corpus, synth_out, vocab);
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
