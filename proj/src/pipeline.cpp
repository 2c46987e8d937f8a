#include "mtfc/pipeline.hpp"

#include <algorithm>
#include <exception>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "mtfc/evidence.hpp"
#include "mtfc/metrics.hpp"

namespace mtfc::pipeline {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

const corpus::SplitName kSplits[] = {corpus::SplitName::kTrain, corpus::SplitName::kValidation,
                                     corpus::SplitName::kTest};

void log_line(const Context& ctx, const std::string& line) {
  if (ctx.log) *ctx.log << line << '\n';
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

fs::path stage_file(const Context& ctx, const char* stage, corpus::SplitName split) {
  return ctx.out / stage / (corpus::to_string(split) + ".jsonl");
}

corpus::LoadResult load_raw(const config::RunConfig& c, corpus::SplitName split,
                            const fs::path& path) {
  switch (c.dataset.format) {
    case config::SourceFormat::kTsv:
      return corpus::load_tabular(path, c.dataset.mapping, c.dataset.labels,
                                  {'\t', c.dataset.name, split});
    case config::SourceFormat::kJsonl:
      return corpus::load_jsonl(path, c.dataset.mapping, c.dataset.labels, {c.dataset.name, split});
    case config::SourceFormat::kCanonical: {
      corpus::LoadResult r;
      r.split = corpus::read_canonical(path, c.dataset.labels, split);
      r.drops.rows_seen = r.split.size();
      if (r.split.empty()) throw EmptyDatasetError(path.string() + " holds no records");
      return r;
    }
  }
  throw ContractError("unhandled dataset format");
}

std::string pct(double v, bool comma) { return metrics::format_fixed(v, 2, comma); }

json metrics_for_sweep(const trainer::EvalReport& r) {
  return json{{"rouge1", 100.0 * r.rouge.rouge1.f_measure},
              {"rouge2", 100.0 * r.rouge.rouge2.f_measure},
              {"rougeL", 100.0 * r.rouge.rouge_l.f_measure},
              {"f1_macro", r.classification.f1_macro},
              {"f1_weighted", r.classification.f1_weighted},
              {"accuracy", r.classification.accuracy}};
}

}  // namespace

Context make_context(const json& config_json, const fs::path& base_dir, const Overrides& overrides,
                     std::ostream* log) {
  json j = config::normalize(config_json, base_dir);
  if (overrides.seed) config::set_path(j, "train.seed", *overrides.seed);
  if (overrides.out) config::set_path(j, "output.dir", fs::absolute(*overrides.out).string());
  if (overrides.small_variant) config::set_path(j, "dataset.small_variant", true);
  Context ctx;
  ctx.config = config::run_config_from_json(j, base_dir);
  ctx.config_json = config::to_json(ctx.config);
  ctx.seed = ctx.config.train.seed;
  ctx.out = ctx.config.output.dir;
  ctx.log = log;
  return ctx;
}

Context make_context(const fs::path& config_path, const Overrides& overrides, std::ostream* log) {
  return make_context(config::read_config_json(config_path), config_path.parent_path(), overrides,
                      log);
}

// ---------------------------------------------------------------------------

void cmd_prepare(const Context& ctx) {
  const auto& c = ctx.config;
  if (c.dataset.paths.empty()) throw SchemaError("dataset.paths is empty");
  config::check_paths_exist(c);
  json report{{"seed", ctx.seed},
              {"dataset", corpus::to_string(c.dataset.name)},
              {"small_variant", c.dataset.small_variant},
              {"splits", json::object()}};
  for (const auto& [split, path] : c.dataset.paths) {
    auto loaded = load_raw(c, split, path);
    json entry{{"rows_seen", loaded.drops.rows_seen}, {"drops", corpus::to_json(loaded.drops)}};
    if (c.dataset.small_variant) {
      const std::size_t before = loaded.split.size();
      loaded.split = corpus::filter_nonnull_summaries(loaded.split);
      entry["removed_null_summary"] = before - loaded.split.size();
      log_line(ctx, corpus::to_string(split) + ": small variant keeps " +
                        std::to_string(loaded.split.size()) + " of " + std::to_string(before));
      if (loaded.split.empty())
        throw EmptyDatasetError(corpus::to_string(split) + ": no records with a gold summary");
    }
    const auto violations = corpus::validate_split(loaded.split);
    json vj = json::array();
    for (const auto& v : violations) vj.push_back({{"id", v.record_id}, {"message", v.message}});
    entry["records"] = loaded.split.size();
    entry["violations"] = vj;
    corpus::write_canonical(stage_file(ctx, "data", split), loaded.split);
    report["splits"][corpus::to_string(split)] = entry;
    log_line(ctx, corpus::to_string(split) + ": " + std::to_string(loaded.split.size()) +
                      " records, " + std::to_string(loaded.drops.dropped) + " dropped");
  }
  write_json(ctx.out / "data" / "prepare.json", report);
}

void cmd_select_evidence(const Context& ctx) {
  const auto& c = ctx.config;
  json report{{"seed", ctx.seed},
              {"top_k", c.evidence.top_k},
              {"vocabulary", ctx.config_json.at("evidence").at("vocabulary")},
              {"splits", json::object()}};
  bool any = false;
  for (const auto split : kSplits) {
    const auto in = stage_file(ctx, "data", split);
    if (!fs::exists(in)) continue;
    any = true;
    auto data = corpus::read_canonical(in, c.dataset.labels, split);

    std::vector<evidence::SentenceList> sentences(data.size());
    evidence::VocabularyPolicy policy;
    policy.mode = c.evidence.vocabulary;
    policy.hash_dimension = c.evidence.hash_dimension;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto& r = data.records[i];
      sentences[i].source_record_id = r.id;
      for (const auto& segment : r.evidence)
        for (auto& s : evidence::split_sentences(segment).sentences)
          sentences[i].sentences.push_back(std::move(s));
      if (policy.mode == evidence::VocabularyPolicy::Mode::kFitted) {
        policy.corpus.push_back(r.claim);
        for (const auto& s : sentences[i].sentences) policy.corpus.push_back(s);
      }
    }
    const auto provider = evidence::bag_of_words_provider(policy);

    std::size_t total_sentences = 0, kept = 0;
    const auto n = static_cast<std::ptrdiff_t>(data.size());
    std::exception_ptr error;
#pragma omp parallel for schedule(dynamic, 16) if (provider->thread_safe())
    for (std::ptrdiff_t ii = 0; ii < n; ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      try {
        auto& r = data.records[i];
        r.evidence_scores.clear();
        if (sentences[i].size() == 0) {
          r.evidence.clear();
          continue;
        }
        const auto ranking = evidence::rank_sentences(r.claim, sentences[i], *provider);
        const auto sel = evidence::select_top_k(ranking, sentences[i], c.evidence.top_k);
        std::vector<double> score_of(sentences[i].size(), 0.0);
        for (const auto& e : ranking.entries) score_of[static_cast<std::size_t>(e.index)] = e.score;
        r.evidence.clear();
        for (int idx : sel.indices) {
          r.evidence.push_back(sentences[i].sentences[static_cast<std::size_t>(idx)]);
          r.evidence_scores.emplace_back(idx, score_of[static_cast<std::size_t>(idx)]);
        }
      } catch (...) {
#pragma omp critical(mtfc_select_error)
        if (!error) error = std::current_exception();
      }
    }
    if (error) std::rethrow_exception(error);
    for (std::size_t i = 0; i < data.size(); ++i) {
      total_sentences += sentences[i].size();
      kept += data.records[i].evidence.size();
    }
    corpus::write_canonical(stage_file(ctx, "evidence", split), data);
    report["splits"][corpus::to_string(split)] = {
        {"records", data.size()}, {"sentences", total_sentences}, {"kept", kept}};
    log_line(ctx, corpus::to_string(split) + ": kept " + std::to_string(kept) + " of " +
                      std::to_string(total_sentences) + " sentences");
  }
  if (!any) throw IoError("no prepared data under " + (ctx.out / "data").string());
  write_json(ctx.out / "evidence" / "selection.json", report);
}

corpus::DatasetSplit load_stage_split(const Context& ctx, corpus::SplitName split) {
  for (const char* stage : {"evidence", "data"}) {
    const auto path = stage_file(ctx, stage, split);
    if (fs::exists(path)) {
      auto s = corpus::read_canonical(path, ctx.config.dataset.labels, split);
      if (s.empty()) throw EmptyDatasetError(path.string() + " holds no records");
      return s;
    }
  }
  throw IoError("no " + corpus::to_string(split) + " split under " + ctx.out.string() +
                " (run prepare first)");
}

Tokenizer build_tokenizer(const corpus::DatasetSplit& train, const config::RunConfig& config) {
  std::vector<std::string> texts;
  for (const auto& ex : trainer::to_examples(train, config.evidence.input_template)) {
    texts.push_back(ex.source);
    if (ex.target) texts.push_back(*ex.target);
  }
  return Tokenizer::build(texts, config.model.tokenizer_min_count, config.model.tokenizer_max_size);
}

void cmd_train(const Context& ctx, bool resume) {
  const auto& c = ctx.config;
  const auto train_split = load_stage_split(ctx, corpus::SplitName::kTrain);
  std::optional<corpus::DatasetSplit> validation;
  if (c.train.eval_every > 0 &&
      (fs::exists(stage_file(ctx, "evidence", corpus::SplitName::kValidation)) ||
       fs::exists(stage_file(ctx, "data", corpus::SplitName::kValidation))))
    validation = load_stage_split(ctx, corpus::SplitName::kValidation);

  auto tcfg = c.resolved_train_config();
  const fs::path ckpt_dir = ctx.out / "checkpoint";
  const fs::path history_path = ctx.out / "train" / "history.jsonl";
  trainer::TrainOptions options;
  std::unique_ptr<trainer::MultiTaskModel> model;

  if (resume) {
    auto ckpt = trainer::load_checkpoint(ckpt_dir, c.dataset.labels.size());
    model = std::make_unique<trainer::MultiTaskModel>(trainer::model_from_checkpoint(ckpt));
    options.resume_state = ckpt.state;
    options.resume_optimizer = ckpt.optimizer;
    log_line(ctx, "resuming at step " + std::to_string(ckpt.state.step));
  } else if (c.model.checkpoint) {
    auto ckpt = trainer::load_checkpoint(*c.model.checkpoint, c.dataset.labels.size());
    model = std::make_unique<trainer::MultiTaskModel>(trainer::model_from_checkpoint(ckpt));
  } else {
    auto tokenizer = build_tokenizer(train_split, c);
    auto bcfg = *c.model.backbone;
    bcfg.vocab_size = 0;
    model = std::make_unique<trainer::MultiTaskModel>(bcfg, std::move(tokenizer), ctx.seed);
  }
  if (validation) options.validation = &*validation;

  fs::create_directories(history_path.parent_path());
  std::ofstream history(history_path, resume ? std::ios::app : std::ios::trunc);
  if (!history) throw IoError("cannot write " + history_path.string());
  options.on_step = [&](const trainer::StepRecord& r) { history << trainer::to_json(r).dump() << '\n'; };

  trainer::TrainResult result;
  try {
    result = trainer::train(train_split, tcfg, *model, options);
  } catch (const trainer::TrainingDiverged& e) {
    history.flush();
    write_json(ctx.out / "train" / "diverged.json", e.snapshot());
    throw;
  }
  history.flush();
  trainer::save_checkpoint(ckpt_dir, trainer::make_checkpoint(*model, tcfg, result));
  log_line(ctx, "trained to step " + std::to_string(result.state.step) + ", loss " +
                    std::to_string(result.state.loss_total) +
                    (result.stopped_early ? " (early stop)" : ""));
}

json eval_report_json(const trainer::EvalReport& report, std::uint64_t seed,
                      const std::string& split, std::size_t checkpoint_step) {
  json j = trainer::to_json(report);
  j["seed"] = seed;
  j["split"] = split;
  j["checkpoint_step"] = checkpoint_step;
  return j;
}

std::string eval_report_csv(const trainer::EvalReport& r, bool comma) {
  std::vector<std::vector<std::string>> rows = {
      {"rouge1", pct(100.0 * r.rouge.rouge1.f_measure, comma)},
      {"rouge2", pct(100.0 * r.rouge.rouge2.f_measure, comma)},
      {"rougeL", pct(100.0 * r.rouge.rouge_l.f_measure, comma)},
      {"precision", pct(r.classification.precision, comma)},
      {"recall", pct(r.classification.recall, comma)},
      {"precision_macro", pct(r.classification.precision_macro, comma)},
      {"recall_macro", pct(r.classification.recall_macro, comma)},
      {"f1_macro", pct(r.classification.f1_macro, comma)},
      {"f1_weighted", pct(r.classification.f1_weighted, comma)},
      {"accuracy", pct(r.classification.accuracy, comma)}};
  if (r.binary_accuracy) rows.push_back({"binary_accuracy", pct(*r.binary_accuracy, comma)});
  for (const auto& c : r.classification.per_class)
    rows.push_back({"accuracy[" + c.label + "]", pct(c.accuracy, comma)});
  return metrics::render_csv({"metric", "value"}, rows);
}

std::string eval_report_text(const trainer::EvalReport& r, std::uint64_t seed,
                             const std::string& split) {
  std::ostringstream os;
  os << "seed: " << seed << "\nsplit: " << split << "\nrecords: " << r.records
     << "\nrouge pairs: " << r.rouge.pairs << " (excluded without gold summary: "
     << r.rouge_excluded << ")\n\n";
  os << metrics::render_text_table({"Rouge-1", "Rouge-2", "Rouge-L"},
                                   {{pct(100.0 * r.rouge.rouge1.f_measure, false),
                                     pct(100.0 * r.rouge.rouge2.f_measure, false),
                                     pct(100.0 * r.rouge.rouge_l.f_measure, false)}})
     << "\n";
  std::vector<std::string> head = {"Precision", "Recall", "F1-macro", "Accuracy", "F1-weighted"};
  std::vector<std::string> row = {pct(r.classification.precision, false),
                                  pct(r.classification.recall, false),
                                  pct(r.classification.f1_macro, false),
                                  pct(r.classification.accuracy, false),
                                  pct(r.classification.f1_weighted, false)};
  if (r.binary_accuracy) {
    head.push_back("Binary accuracy");
    row.push_back(pct(*r.binary_accuracy, false));
  }
  os << metrics::render_text_table(head, {row}) << "\n";
  std::vector<std::vector<std::string>> per_class;
  for (const auto& c : r.classification.per_class)
    per_class.push_back({c.label, pct(c.precision, false), pct(c.recall, false), pct(c.f1, false),
                         pct(c.accuracy, false), std::to_string(c.support)});
  os << metrics::render_text_table({"Class", "Precision", "Recall", "F1", "Accuracy", "Support"},
                                   per_class)
     << "\n";
  std::vector<std::string> ch = {"gold \\ predicted"};
  for (const auto& l : r.confusion.labels().labels()) ch.push_back(l);
  std::vector<std::vector<std::string>> crow;
  for (std::size_t g = 0; g < r.confusion.size(); ++g) {
    std::vector<std::string> line = {r.confusion.labels().label(static_cast<int>(g))};
    for (std::size_t p = 0; p < r.confusion.size(); ++p)
      line.push_back(std::to_string(r.confusion.at(g, p)));
    crow.push_back(std::move(line));
  }
  os << metrics::render_text_table(ch, crow);
  for (const auto& w : r.classification.warnings) os << "warning: " << w << "\n";
  return os.str();
}

void cmd_eval(const Context& ctx, const std::optional<fs::path>& checkpoint) {
  const auto& c = ctx.config;
  const fs::path dir = checkpoint ? *checkpoint
                                  : (c.model.checkpoint ? *c.model.checkpoint : ctx.out / "checkpoint");
  const auto ckpt = trainer::load_checkpoint(dir, c.dataset.labels.size());
  auto model = trainer::model_from_checkpoint(ckpt);
  const auto split = load_stage_split(ctx, c.output.eval_split);
  trainer::ModelPredictor predictor(model, c.model.generation, c.evidence.input_template,
                                    c.train.batch_size);
  trainer::EvalConfig ecfg;
  ecfg.rouge.stem = c.output.rouge_stem;
  const auto report = trainer::evaluate(split, predictor, ecfg);
  const std::string split_name = corpus::to_string(c.output.eval_split);

  const fs::path out = ctx.out / "eval";
  write_json(out / "report.json", eval_report_json(report, ctx.seed, split_name, ckpt.state.step));
  write_text(out / "report.csv", eval_report_csv(report, c.output.decimal_comma));
  write_text(out / "report.txt", eval_report_text(report, ctx.seed, split_name));
  std::vector<std::string> ch = {"gold"};
  for (const auto& l : report.confusion.labels().labels()) ch.push_back(l);
  std::vector<std::vector<std::string>> crow;
  for (std::size_t g = 0; g < report.confusion.size(); ++g) {
    std::vector<std::string> line = {report.confusion.labels().label(static_cast<int>(g))};
    for (std::size_t p = 0; p < report.confusion.size(); ++p)
      line.push_back(std::to_string(report.confusion.at(g, p)));
    crow.push_back(std::move(line));
  }
  write_text(out / "confusion.csv", metrics::render_csv(ch, crow));
  std::string preds;
  for (std::size_t i = 0; i < split.size(); ++i) {
    const auto& r = split.records[i];
    const auto& p = report.predictions[i];
    preds += json{{"id", r.id},
                  {"label", split.label_space.label(r.label)},
                  {"predicted_label", split.label_space.label(p.label)},
                  {"summary", p.summary}}
                 .dump() +
             "\n";
  }
  write_text(out / "predictions.jsonl", preds);
  log_line(ctx, "accuracy " + pct(report.classification.accuracy, false) + ", F1-macro " +
                    pct(report.classification.f1_macro, false));
}

sweep::SweepOutcome cmd_sweep(const Context& ctx, const fs::path& grid, bool resume,
                              const sweep::TrialRunner& runner) {
  const auto spec = sweep::load_grid_spec(grid);
  const auto trials = sweep::expand_grid(spec, ctx.seed, &ctx.config_json);
  for (const auto& t : trials)  // reject invalid combinations before any work
    config::run_config_from_json(sweep::apply_assignment(ctx.config_json, t.assignment));

  sweep::TrialRunner body = runner;
  std::optional<corpus::DatasetSplit> train_split, validation;
  std::optional<Tokenizer> tokenizer;
  if (!body) {
    train_split = load_stage_split(ctx, corpus::SplitName::kTrain);
    validation = load_stage_split(ctx, corpus::SplitName::kValidation);
    tokenizer = build_tokenizer(*train_split, ctx.config);
    body = [&](const sweep::Trial& trial) {
      const auto cfg =
          config::run_config_from_json(sweep::apply_assignment(ctx.config_json, trial.assignment));
      if (!cfg.model.backbone) throw SchemaError("sweeps need model.backbone");
      auto tcfg = cfg.resolved_train_config();
      tcfg.seed = trial.seed;
      tcfg.checkpoint_dir.clear();
      auto bcfg = *cfg.model.backbone;
      bcfg.vocab_size = 0;
      trainer::MultiTaskModel model(bcfg, *tokenizer, trial.seed);
      trainer::train(*train_split, tcfg, model);
      trainer::ModelPredictor predictor(model, cfg.model.generation, cfg.evidence.input_template,
                                        tcfg.batch_size);
      trainer::EvalConfig ecfg;
      ecfg.rouge.stem = cfg.output.rouge_stem;
      return metrics_for_sweep(trainer::evaluate(*validation, predictor, ecfg));
    };
  }

  sweep::SweepOptions options;
  options.ledger = ctx.out / "sweep" / "ledger.jsonl";
  options.resume = resume;
  auto outcome = sweep::run_sweep(trials, body, options);
  log_line(ctx, "sweep: " + std::to_string(outcome.executed) + " run, " +
                    std::to_string(outcome.reused) + " reused");

  write_text(ctx.out / "sweep" / "table.csv",
             sweep::render_table_csv(outcome.results, ctx.config.output.decimal_comma));
  try {
    const auto& best = sweep::best_by(outcome.results, "f1_macro");
    write_json(ctx.out / "sweep" / "best.json",
               {{"seed", ctx.seed},
                {"metric", "f1_macro"},
                {"trial", sweep::to_json(best)},
                {"config", sweep::apply_assignment(ctx.config_json, best.assignment)}});
  } catch (const DegenerateInputError&) {
    log_line(ctx, "sweep: no completed trials");
  }
  return outcome;
}

void cmd_report(const Context& ctx, std::ostream& out) {
  bool any = false;
  const auto eval_txt = ctx.out / "eval" / "report.txt";
  if (fs::exists(eval_txt)) {
    std::ifstream in(eval_txt, std::ios::binary);
    out << in.rdbuf();
    any = true;
  }
  const auto ledger = ctx.out / "sweep" / "ledger.jsonl";
  const auto results = sweep::read_ledger(ledger);
  if (!results.empty()) {
    // Latest entry per trial id, in index order.
    std::map<std::string, sweep::TrialResult> latest;
    for (const auto& r : results) latest[r.id] = r;
    std::vector<sweep::TrialResult> rows;
    for (auto& [id, r] : latest) rows.push_back(r);
    std::sort(rows.begin(), rows.end(),
              [](const auto& a, const auto& b) { return a.index < b.index; });
    const auto table = sweep::render_table_csv(rows, ctx.config.output.decimal_comma);
    write_text(ctx.out / "sweep" / "table.csv", table);
    if (any) out << "\n";
    out << "seed: " << ctx.seed << "\n" << table;
    any = true;
  }
  if (!any) throw IoError("nothing to report under " + ctx.out.string());
}

ExitCode exit_code_for(const std::exception& e) {
  if (dynamic_cast<const DegenerateInputError*>(&e)) return ExitCode::kDegenerate;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const SchemaError*>(&e))
    return ExitCode::kInput;
  return ExitCode::kRuntime;
}

}  // namespace mtfc::pipeline
