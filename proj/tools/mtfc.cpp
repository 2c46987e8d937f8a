// mtfc: prepare | select-evidence | train | eval | sweep | report

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mtfc/pipeline.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool resume = false;
  bool small_variant = false;
  std::optional<std::string> grid;
  std::optional<std::string> checkpoint;
  bool quiet = false;
};

CLI::App* add_command(CLI::App& app, const std::string& name, const std::string& help, Flags& f) {
  auto* cmd = app.add_subcommand(name, help);
  cmd->add_option("--config", f.config, "Run config (JSON)")->required();
  cmd->add_option("--seed", f.seed, "Override train.seed");
  cmd->add_option("--out", f.out, "Override output.dir");
  cmd->add_flag("--quiet", f.quiet, "No progress lines");
  return cmd;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task fact-checking: veracity prediction with explanation summaries"};
  app.require_subcommand(1);
  Flags f;

  auto* prepare = add_command(app, "prepare", "Load raw splits into canonical JSON-lines", f);
  prepare->add_flag("--small-variant", f.small_variant, "Drop records without a gold summary");
  auto* select = add_command(app, "select-evidence", "Keep the top-k evidence sentences", f);
  auto* train = add_command(app, "train", "Jointly train summarizer and classifier", f);
  train->add_flag("--resume", f.resume, "Continue from <out>/checkpoint");
  auto* eval = add_command(app, "eval", "Generate summaries, classify, write reports", f);
  eval->add_option("--checkpoint", f.checkpoint, "Checkpoint directory");
  auto* sweep = add_command(app, "sweep", "Grid search over config paths", f);
  sweep->add_option("--grid", f.grid, "Grid spec (JSON)")->required();
  sweep->add_flag("--resume", f.resume, "Skip trials already completed in the ledger");
  auto* report = add_command(app, "report", "Print eval and sweep tables", f);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(mtfc::ExitCode::kInput);
  }

  try {
    mtfc::pipeline::Overrides ov;
    ov.seed = f.seed;
    if (f.out) ov.out = *f.out;
    ov.small_variant = f.small_variant;
    const auto ctx = mtfc::pipeline::make_context(f.config, ov, f.quiet ? nullptr : &std::cerr);
    if (ctx.log) *ctx.log << "seed: " << ctx.seed << '\n';

    if (prepare->parsed()) mtfc::pipeline::cmd_prepare(ctx);
    else if (select->parsed()) mtfc::pipeline::cmd_select_evidence(ctx);
    else if (train->parsed()) mtfc::pipeline::cmd_train(ctx, f.resume);
    else if (eval->parsed()) {
      std::optional<std::filesystem::path> ck;
      if (f.checkpoint) ck = *f.checkpoint;
      mtfc::pipeline::cmd_eval(ctx, ck);
    } else if (sweep->parsed()) mtfc::pipeline::cmd_sweep(ctx, *f.grid, f.resume);
    else if (report->parsed()) mtfc::pipeline::cmd_report(ctx, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(mtfc::pipeline::exit_code_for(e));
  }
  return 0;
}
