#pragma once

// Exhaustive grid search over run-config paths with a JSON-lines ledger.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace mtfc::sweep {

struct Axis {
  std::string path;  // dotted run-config path
  std::vector<nlohmann::json> values;
};

/// Axes expand as an odometer: the last axis varies fastest.
struct GridSpec {
  std::vector<Axis> axes;
};

/// Accepts {"axes": [{"path": p, "values": [...]}, ...]} (listed order) or a
/// plain object {path: [...]} (paths in lexicographic order).
GridSpec grid_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GridSpec& spec);
GridSpec load_grid_spec(const std::filesystem::path& path);

using Assignment = std::vector<std::pair<std::string, nlohmann::json>>;

struct Trial {
  std::size_t index = 0;
  std::string id;  // stable hash of the assignment
  std::uint64_t seed = 0;
  Assignment assignment;
};

std::string trial_id(const Assignment& assignment);
std::uint64_t trial_seed(std::uint64_t base_seed, std::string_view trial_id);

/// Cartesian product of the axes. Throws SchemaError for an empty grid, an
/// empty axis, a repeated path or value, or (when `base_config` is given) a
/// path missing from it.
std::vector<Trial> expand_grid(const GridSpec& spec, std::uint64_t base_seed = 0,
                               const nlohmann::json* base_config = nullptr);

/// base_config with every assignment applied.
nlohmann::json apply_assignment(nlohmann::json base_config, const Assignment& assignment);

enum class Status { kCompleted, kFailed };

struct TrialResult {
  std::size_t index = 0;
  std::string id;
  std::uint64_t seed = 0;
  Assignment assignment;
  Status status = Status::kFailed;
  nlohmann::json metrics = nlohmann::json::object();  // empty unless completed
  double runtime_seconds = 0.0;
  std::string error;
};

nlohmann::json to_json(const TrialResult& r);
TrialResult trial_result_from_json(const nlohmann::json& j);

/// Every line of a ledger, in file order. A missing file is an empty ledger.
std::vector<TrialResult> read_ledger(const std::filesystem::path& path);

/// Runs one trial and returns its metrics; throwing marks the trial failed.
using TrialRunner = std::function<nlohmann::json(const Trial&)>;

struct SweepOptions {
  std::optional<std::filesystem::path> ledger;
  std::size_t workers = 0;  // 0: MTFC_WORKERS, else 1
  bool resume = false;      // reuse completed entries already in the ledger
};

std::size_t resolve_workers(std::size_t requested);

struct SweepOutcome {
  std::vector<TrialResult> results;  // trial order
  std::size_t executed = 0;
  std::size_t reused = 0;
};

/// Trials run concurrently up to the worker budget; each finished trial is
/// appended to the ledger immediately. Without `resume` an existing,
/// nonempty ledger is an error.
SweepOutcome run_sweep(const std::vector<Trial>& trials, const TrialRunner& runner,
                       const SweepOptions& options = {});

enum class Direction { kMaximize, kMinimize };

/// Best completed result by `metric`; ties go to the earlier trial. Throws
/// DegenerateInputError when nothing completed.
const TrialResult& best_by(const std::vector<TrialResult>& results, const std::string& metric,
                           Direction direction = Direction::kMaximize);

/// Metric columns of the grid tables, in display order.
struct MetricColumn {
  std::string key;
  std::string header;
};
const std::vector<MetricColumn>& default_metric_columns();

/// One row per result: one column per assignment path, then the metric
/// columns with two decimals. Failed trials show "failed" in metric cells.
std::string render_table_csv(const std::vector<TrialResult>& results, bool decimal_comma = false,
                             const std::vector<MetricColumn>& columns = default_metric_columns());

/// Compact cell text for an assignment value: numbers verbatim, objects as
/// "key=value, key=value".
std::string format_value(const nlohmann::json& v);

}  // namespace mtfc::sweep
