#pragma once

// Subcommand bodies behind the mtfc executable. Each reads the run config,
// works inside the output directory, and throws the library's typed errors;
// exit_code_for maps them onto process exit codes.
//
// Output layout under output.dir:
//   data/<split>.jsonl, data/prepare.json
//   evidence/<split>.jsonl, evidence/selection.json
//   checkpoint/, train/history.jsonl
//   eval/report.{json,csv,txt}, eval/confusion.csv, eval/predictions.jsonl
//   sweep/ledger.jsonl, sweep/best.json, sweep/table.csv

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "mtfc/config.hpp"
#include "mtfc/errors.hpp"
#include "mtfc/sweep.hpp"
#include "mtfc/trainer.hpp"

namespace mtfc::pipeline {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  bool small_variant = false;
};

struct Context {
  config::RunConfig config;
  nlohmann::json config_json;  // normalized, overrides applied
  std::uint64_t seed = 0;
  std::filesystem::path out;
  std::ostream* log = nullptr;  // progress lines; null = silent
};

/// Loads the config and applies flag overrides (flags win).
Context make_context(const std::filesystem::path& config_path, const Overrides& overrides = {},
                     std::ostream* log = nullptr);
Context make_context(const nlohmann::json& config_json, const std::filesystem::path& base_dir,
                     const Overrides& overrides = {}, std::ostream* log = nullptr);

void cmd_prepare(const Context& ctx);
void cmd_select_evidence(const Context& ctx);
void cmd_train(const Context& ctx, bool resume = false);
void cmd_eval(const Context& ctx, const std::optional<std::filesystem::path>& checkpoint = {});
/// `runner` replaces the train-and-validate trial body when given.
sweep::SweepOutcome cmd_sweep(const Context& ctx, const std::filesystem::path& grid,
                              bool resume = false, const sweep::TrialRunner& runner = {});
/// Re-renders tables from existing eval and sweep outputs.
void cmd_report(const Context& ctx, std::ostream& out);

/// Latest stage output for a split: evidence/ if present, else data/.
corpus::DatasetSplit load_stage_split(const Context& ctx, corpus::SplitName split);

/// Train split model inputs and gold summaries feed the vocabulary.
Tokenizer build_tokenizer(const corpus::DatasetSplit& train, const config::RunConfig& config);

/// Report documents written by cmd_eval.
nlohmann::json eval_report_json(const trainer::EvalReport& report, std::uint64_t seed,
                                const std::string& split, std::size_t checkpoint_step);
std::string eval_report_csv(const trainer::EvalReport& report, bool decimal_comma);
std::string eval_report_text(const trainer::EvalReport& report, std::uint64_t seed,
                             const std::string& split);

ExitCode exit_code_for(const std::exception& e);

}  // namespace mtfc::pipeline
