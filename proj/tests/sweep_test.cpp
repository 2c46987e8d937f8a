#include <gtest/gtest.h>

#include <atomic>
#include <fstream>
#include <cstdlib>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtfc/errors.hpp"
#include "mtfc/sweep.hpp"
#include "test_util.hpp"

namespace {

using namespace mtfc;
using namespace mtfc::sweep;
using nlohmann::json;
using mtfc::testing::fixture;
using mtfc::testing::TempDir;

const std::filesystem::path kGrids = std::filesystem::path(MTFC_FIXTURE_DIR) / ".." / ".." / "configs" / "grids";

json base_config() {
  return json{{"model", {{"backbone", {{"classifier_hidden_dim", 128}}}}},
              {"objective",
               {{"static_weights", {{"classification", 0.5}, {"summary", 0.5}}},
                {"class_weights", {{"mixture", 2.5}, {"unproven", 7}}}}},
              {"train", {{"seed", 42}}}};
}

std::vector<json> read_jsonl(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<json> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

TEST(Grid, OdometerOrderLastAxisFastest) {
  GridSpec spec{{{"a", {1, 2}}, {"b", {"x", "y", "z"}}}};
  const auto t = expand_grid(spec);
  ASSERT_EQ(t.size(), 6u);
  EXPECT_EQ(t[0].assignment, (Assignment{{"a", 1}, {"b", "x"}}));
  EXPECT_EQ(t[1].assignment, (Assignment{{"a", 1}, {"b", "y"}}));
  EXPECT_EQ(t[3].assignment, (Assignment{{"a", 2}, {"b", "x"}}));
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(t[i].index, i);
}

TEST(Grid, HiddenDimGridMatchesPublishedRowInventory) {
  const auto spec = load_grid_spec(kGrids / "hidden_dim.json");
  const auto base = base_config();
  const auto trials = expand_grid(spec, 42, &base);
  ASSERT_EQ(trials.size(), 30u);
  const auto rows = read_jsonl(fixture("hidden_dim_rows.jsonl"));
  ASSERT_EQ(rows.size(), 27u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto cfg = apply_assignment(base, trials[i].assignment);
    EXPECT_EQ(cfg["model"]["backbone"]["classifier_hidden_dim"], rows[i]["classifier_hidden_dim"]) << i;
    EXPECT_EQ(cfg["objective"]["static_weights"], rows[i]["static_weights"]) << i;
    EXPECT_EQ(cfg["objective"]["class_weights"]["mixture"], rows[i]["mixture"]) << i;
    EXPECT_EQ(cfg["objective"]["class_weights"]["unproven"], rows[i]["unproven"]) << i;
  }
}

TEST(Grid, LossCoefficientGridSize) {
  const auto spec = load_grid_spec(kGrids / "loss_coefficients.json");
  const auto base = base_config();
  EXPECT_EQ(expand_grid(spec, 0, &base).size(), 24u);
}

TEST(Grid, IdsAndSeedsAreStableAndDistinct) {
  GridSpec spec{{{"a", {1, 2, 3}}, {"b", {0.5, 1.5}}}};
  const auto t1 = expand_grid(spec, 7), t2 = expand_grid(spec, 7), t3 = expand_grid(spec, 8);
  std::set<std::string> ids;
  std::set<std::uint64_t> seeds;
  for (std::size_t i = 0; i < t1.size(); ++i) {
    EXPECT_EQ(t1[i].id, t2[i].id);
    EXPECT_EQ(t1[i].seed, t2[i].seed);
    EXPECT_EQ(t1[i].id, t3[i].id);
    EXPECT_NE(t1[i].seed, t3[i].seed);
    EXPECT_EQ(t1[i].id.size(), 17u);
    ids.insert(t1[i].id);
    seeds.insert(t1[i].seed);
  }
  EXPECT_EQ(ids.size(), 6u);
  EXPECT_EQ(seeds.size(), 6u);
  EXPECT_EQ(trial_id(t1[2].assignment), t1[2].id);
  EXPECT_EQ(trial_seed(7, t1[2].id), t1[2].seed);
}

TEST(Grid, RejectsMalformedSpecs) {
  EXPECT_THROW(expand_grid(GridSpec{}), SchemaError);
  EXPECT_THROW(expand_grid(GridSpec{{{"a", {}}}}), SchemaError);
  EXPECT_THROW(expand_grid(GridSpec{{{"a", {1}}, {"a", {2}}}}), SchemaError);
  EXPECT_THROW(expand_grid(GridSpec{{{"a", {1, 1}}}}), SchemaError);
  const auto base = base_config();
  EXPECT_THROW(expand_grid(GridSpec{{{"model.backbone.nope", {1}}}}, 0, &base), SchemaError);
  EXPECT_NO_THROW(expand_grid(GridSpec{{{"train.seed", {1}}}}, 0, &base));
}

TEST(Grid, SpecJsonForms) {
  const auto listed = grid_spec_from_json(json::parse(
      R"({"axes": [{"path": "z", "values": [1]}, {"path": "a", "values": [2, 3]}]})"));
  ASSERT_EQ(listed.axes.size(), 2u);
  EXPECT_EQ(listed.axes[0].path, "z");
  const auto plain = grid_spec_from_json(json::parse(R"({"z": [1], "a": [2, 3]})"));
  EXPECT_EQ(plain.axes[0].path, "a");
  EXPECT_EQ(grid_spec_from_json(to_json(listed)).axes[1].values, listed.axes[1].values);
  EXPECT_THROW(grid_spec_from_json(json::parse(R"({"axes": [{"path": "a"}]})")), SchemaError);
  EXPECT_THROW(grid_spec_from_json(json::parse(R"({"a": 3})")), SchemaError);
}

TEST(Grid, ApplyAssignment) {
  const auto cfg = apply_assignment(base_config(), {{"model.backbone.classifier_hidden_dim", 16},
                                                    {"objective.class_weights.unproven", 9}});
  EXPECT_EQ(cfg["model"]["backbone"]["classifier_hidden_dim"], 16);
  EXPECT_EQ(cfg["objective"]["class_weights"]["unproven"], 9);
  EXPECT_EQ(cfg["objective"]["class_weights"]["mixture"], 2.5);
}

json fake_metrics(const Trial& t) {
  const double a = t.assignment[0].second.get<double>();
  return json{{"rouge1", 30 + a}, {"rouge2", 10 + a}, {"rougeL", 20 + a},
              {"f1_macro", 50 + a}, {"f1_weighted", 60 + a}};
}

TEST(RunSweep, WritesLedgerAndRecordsFailures) {
  TempDir dir;
  const auto trials = expand_grid(GridSpec{{{"a", {1, 2, 3, 4}}}}, 3);
  SweepOptions opts;
  opts.ledger = dir / "sweep" / "ledger.jsonl";
  opts.workers = 1;
  const auto out = run_sweep(trials, [](const Trial& t) {
    if (t.index == 2) throw std::runtime_error("boom");
    return fake_metrics(t);
  }, opts);
  EXPECT_EQ(out.executed, 4u);
  EXPECT_EQ(out.reused, 0u);
  ASSERT_EQ(out.results.size(), 4u);
  EXPECT_EQ(out.results[2].status, Status::kFailed);
  EXPECT_EQ(out.results[2].error, "boom");
  EXPECT_TRUE(out.results[2].metrics.empty());
  EXPECT_EQ(out.results[1].metrics["f1_macro"], 52.0);
  const auto ledger = read_ledger(*opts.ledger);
  ASSERT_EQ(ledger.size(), 4u);
  for (const auto& r : ledger) EXPECT_EQ(to_json(trial_result_from_json(to_json(r))), to_json(r));
}

TEST(RunSweep, ResumeSkipsCompletedAndRetriesFailed) {
  TempDir dir;
  const auto trials = expand_grid(GridSpec{{{"a", {1, 2, 3}}}}, 3);
  SweepOptions opts;
  opts.ledger = dir / "ledger.jsonl";
  run_sweep(trials, [](const Trial& t) {
    if (t.index == 1) throw std::runtime_error("flaky");
    return fake_metrics(t);
  }, opts);

  EXPECT_THROW(run_sweep(trials, fake_metrics, opts), SchemaError);

  opts.resume = true;
  std::atomic<int> calls{0};
  const auto out = run_sweep(trials, [&](const Trial& t) {
    ++calls;
    return fake_metrics(t);
  }, opts);
  EXPECT_EQ(calls.load(), 1);
  EXPECT_EQ(out.reused, 2u);
  EXPECT_EQ(out.executed, 1u);
  for (const auto& r : out.results) EXPECT_EQ(r.status, Status::kCompleted);
  EXPECT_EQ(read_ledger(*opts.ledger).size(), 4u);

  const auto again = run_sweep(trials, [&](const Trial&) -> json { throw std::logic_error("x"); }, opts);
  EXPECT_EQ(again.reused, 3u);
  EXPECT_EQ(read_ledger(*opts.ledger).size(), 4u);
}

TEST(RunSweep, WorkerCountDoesNotChangeResults) {
  const auto trials = expand_grid(GridSpec{{{"a", {1, 2, 3, 4, 5, 6, 7}}}}, 5);
  SweepOptions one, four;
  one.workers = 1;
  four.workers = 4;
  const auto a = run_sweep(trials, fake_metrics, one);
  const auto b = run_sweep(trials, fake_metrics, four);
  ASSERT_EQ(a.results.size(), b.results.size());
  for (std::size_t i = 0; i < a.results.size(); ++i) {
    EXPECT_EQ(a.results[i].id, b.results[i].id);
    EXPECT_EQ(a.results[i].metrics, b.results[i].metrics);
  }
}

TEST(RunSweep, EmptyMetricsMarkTrialFailed) {
  const auto trials = expand_grid(GridSpec{{{"a", {1}}}});
  const auto out = run_sweep(trials, [](const Trial&) { return json::object(); });
  EXPECT_EQ(out.results[0].status, Status::kFailed);
}

TEST(Workers, ResolveFromEnvironment) {
  EXPECT_EQ(resolve_workers(3), 3u);
  ::setenv("MTFC_WORKERS", "5", 1);
  EXPECT_EQ(resolve_workers(0), 5u);
  ::unsetenv("MTFC_WORKERS");
  EXPECT_EQ(resolve_workers(0), 1u);
}

TEST(BestBy, LossCoefficientGridSelections) {
  const auto results = read_ledger(fixture("loss_coefficient_grid.jsonl"));
  ASSERT_EQ(results.size(), 28u);
  const auto& f1 = best_by(results, "f1_macro");
  EXPECT_EQ(f1.id, "row01");
  EXPECT_DOUBLE_EQ(f1.metrics["f1_macro"].get<double>(), 60.76);
  EXPECT_EQ(f1.assignment[0].second, (json{{"classification", 0.7}, {"summary", 0.3}}));
  EXPECT_EQ(f1.assignment[1].second, 1.75);
  EXPECT_EQ(f1.assignment[2].second, 7);

  const auto& r1 = best_by(results, "rouge1");
  EXPECT_EQ(r1.id, "row14");
  EXPECT_DOUBLE_EQ(r1.metrics["rouge1"].get<double>(), 32.54);
  EXPECT_EQ(r1.assignment[0].second, (json{{"classification", 0.6}, {"summary", 0.4}}));
  EXPECT_EQ(r1.assignment[1].second, 2.5);
  EXPECT_EQ(r1.assignment[2].second, 9);

  EXPECT_EQ(best_by(results, "rouge1", Direction::kMinimize).id, "row09");
}

TEST(BestBy, TiesGoToEarlierTrialAndFailuresAreSkipped) {
  std::vector<TrialResult> rs(3);
  for (std::size_t i = 0; i < 3; ++i) {
    rs[i].index = i;
    rs[i].id = "t" + std::to_string(i);
    rs[i].status = Status::kCompleted;
    rs[i].metrics = json{{"m", 1.0}};
  }
  rs[0].status = Status::kFailed;
  rs[0].metrics = json::object();
  EXPECT_EQ(best_by(rs, "m").id, "t1");
  for (auto& r : rs) r.status = Status::kFailed;
  EXPECT_THROW(best_by(rs, "m"), DegenerateInputError);
}

TEST(Table, CsvWithFailedRowsAndDecimalComma) {
  auto results = read_ledger(fixture("loss_coefficient_grid.jsonl"));
  results.resize(2);
  results[1].status = Status::kFailed;
  const auto csv = render_table_csv(results, true);
  std::istringstream in(csv);
  std::string header, row0, row1;
  std::getline(in, header);
  std::getline(in, row0);
  std::getline(in, row1);
  EXPECT_EQ(header,
            "objective.static_weights,objective.class_weights.mixture,objective.class_weights.unproven,"
            "Rouge-1,Rouge-2,Rouge-L,F1-macro,F1-weighted");
  EXPECT_EQ(row0, "\"classification=0.7, summary=0.3\",1.75,5,\"31,99\",\"14,14\",\"28,18\",\"51,14\",\"66,66\"");
  EXPECT_NE(row1.find("failed"), std::string::npos);
  EXPECT_EQ(format_value(json{{"a", 1}, {"b", "x"}}), "a=1, b=x");
}

}  // namespace
