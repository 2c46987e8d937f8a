#include "mtfc/sweep.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "mtfc/errors.hpp"
#include "mtfc/metrics.hpp"

namespace mtfc::sweep {

using json = nlohmann::json;

namespace {

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

json assignment_json(const Assignment& a) {
  json arr = json::array();
  for (const auto& [path, value] : a) arr.push_back(json::array({path, value}));
  return arr;
}

Assignment assignment_from_json(const json& j) {
  Assignment a;
  for (const auto& pair : j) a.emplace_back(pair.at(0).get<std::string>(), pair.at(1));
  return a;
}

std::string status_string(Status s) { return s == Status::kCompleted ? "completed" : "failed"; }

}  // namespace

GridSpec grid_spec_from_json(const json& j) {
  GridSpec spec;
  try {
    if (j.is_object() && j.contains("axes")) {
      for (const auto& a : j.at("axes"))
        spec.axes.push_back({a.at("path").get<std::string>(), a.at("values").get<std::vector<json>>()});
    } else if (j.is_object()) {
      for (const auto& [path, values] : j.items())
        spec.axes.push_back({path, values.get<std::vector<json>>()});
    } else {
      throw SchemaError("grid spec must be an object");
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("bad grid spec: ") + e.what());
  }
  return spec;
}

json to_json(const GridSpec& spec) {
  json axes = json::array();
  for (const auto& a : spec.axes) axes.push_back({{"path", a.path}, {"values", a.values}});
  return json{{"axes", axes}};
}

GridSpec load_grid_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open grid spec " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return grid_spec_from_json(json::parse(ss.str()));
  } catch (const json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

std::string trial_id(const Assignment& assignment) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(assignment_json(assignment).dump())));
  return std::string("t") + buf;
}

std::uint64_t trial_seed(std::uint64_t base_seed, std::string_view id) {
  return splitmix(splitmix(base_seed) ^ fnv1a(id));
}

std::vector<Trial> expand_grid(const GridSpec& spec, std::uint64_t base_seed,
                               const json* base_config) {
  if (spec.axes.empty()) throw SchemaError("grid has no axes");
  std::set<std::string> paths;
  for (const auto& axis : spec.axes) {
    if (axis.values.empty()) throw SchemaError("axis '" + axis.path + "' has no values");
    if (!paths.insert(axis.path).second) throw SchemaError("axis '" + axis.path + "' repeated");
    std::set<std::string> seen;
    for (const auto& v : axis.values)
      if (!seen.insert(v.dump()).second)
        throw SchemaError("axis '" + axis.path + "' lists " + v.dump() + " twice");
    if (base_config) {
      const json* cur = base_config;
      std::string part;
      std::stringstream ss(axis.path);
      while (std::getline(ss, part, '.')) {
        if (!cur->is_object() || !cur->contains(part))
          throw SchemaError("axis path '" + axis.path + "' is not a config field");
        cur = &cur->at(part);
      }
    }
  }

  std::size_t total = 1;
  for (const auto& axis : spec.axes) total *= axis.values.size();
  std::vector<Trial> trials;
  trials.reserve(total);
  std::vector<std::size_t> digit(spec.axes.size(), 0);
  for (std::size_t t = 0; t < total; ++t) {
    Trial trial;
    trial.index = t;
    for (std::size_t a = 0; a < spec.axes.size(); ++a)
      trial.assignment.emplace_back(spec.axes[a].path, spec.axes[a].values[digit[a]]);
    trial.id = trial_id(trial.assignment);
    trial.seed = trial_seed(base_seed, trial.id);
    trials.push_back(std::move(trial));
    for (std::size_t a = spec.axes.size(); a-- > 0;) {
      if (++digit[a] < spec.axes[a].values.size()) break;
      digit[a] = 0;
    }
  }
  return trials;
}

json apply_assignment(json base_config, const Assignment& assignment) {
  for (const auto& [path, value] : assignment) {
    json* cur = &base_config;
    std::string part;
    std::stringstream ss(path);
    while (std::getline(ss, part, '.')) {
      if (!cur->is_object() || !cur->contains(part))
        throw SchemaError("config path '" + path + "' does not exist");
      cur = &cur->at(part);
    }
    *cur = value;
  }
  return base_config;
}

json to_json(const TrialResult& r) {
  json j{{"trial_id", r.id},
         {"index", r.index},
         {"seed", r.seed},
         {"assignment", assignment_json(r.assignment)},
         {"status", status_string(r.status)},
         {"metrics", r.metrics},
         {"runtime_seconds", r.runtime_seconds}};
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

TrialResult trial_result_from_json(const json& j) {
  TrialResult r;
  r.id = j.at("trial_id").get<std::string>();
  r.index = j.value("index", std::size_t{0});
  r.seed = j.value("seed", std::uint64_t{0});
  r.assignment = assignment_from_json(j.value("assignment", json::array()));
  const auto status = j.at("status").get<std::string>();
  if (status == "completed") r.status = Status::kCompleted;
  else if (status == "failed") r.status = Status::kFailed;
  else throw SchemaError("unknown trial status '" + status + "'");
  r.metrics = j.value("metrics", json::object());
  r.runtime_seconds = j.value("runtime_seconds", 0.0);
  r.error = j.value("error", std::string());
  if (r.status == Status::kCompleted && r.metrics.empty())
    throw SchemaError("completed trial " + r.id + " has no metrics");
  return r;
}

std::vector<TrialResult> read_ledger(const std::filesystem::path& path) {
  std::vector<TrialResult> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(trial_result_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::size_t resolve_workers(std::size_t requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("MTFC_WORKERS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v <= 0)
      throw SchemaError(std::string("MTFC_WORKERS must be a positive integer, got '") + env + "'");
    return static_cast<std::size_t>(v);
  }
  return 1;
}

SweepOutcome run_sweep(const std::vector<Trial>& trials, const TrialRunner& runner,
                       const SweepOptions& options) {
  if (trials.empty()) throw ContractError("run_sweep: no trials");
  SweepOutcome outcome;
  outcome.results.resize(trials.size());

  std::map<std::string, TrialResult> done;
  if (options.ledger) {
    const auto previous = read_ledger(*options.ledger);
    if (!previous.empty() && !options.resume)
      throw SchemaError("ledger " + options.ledger->string() +
                        " already has entries; resume to continue it");
    for (const auto& r : previous)
      if (r.status == Status::kCompleted) done[r.id] = r;
  }

  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < trials.size(); ++i) {
    if (auto it = done.find(trials[i].id); it != done.end()) {
      outcome.results[i] = it->second;
      outcome.results[i].index = trials[i].index;
      ++outcome.reused;
    } else {
      pending.push_back(i);
    }
  }

  std::ofstream ledger;
  if (options.ledger && !pending.empty()) {
    if (options.ledger->has_parent_path())
      std::filesystem::create_directories(options.ledger->parent_path());
    ledger.open(*options.ledger, std::ios::app);
    if (!ledger) throw IoError("cannot append to " + options.ledger->string());
  }
  std::mutex ledger_mutex;
  std::atomic<std::size_t> next{0};
  std::exception_ptr ledger_error;

  auto worker = [&] {
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= pending.size()) return;
      const Trial& trial = trials[pending[k]];
      TrialResult r;
      r.index = trial.index;
      r.id = trial.id;
      r.seed = trial.seed;
      r.assignment = trial.assignment;
      const auto start = std::chrono::steady_clock::now();
      try {
        r.metrics = runner(trial);
        r.status = Status::kCompleted;
        if (!r.metrics.is_object() || r.metrics.empty())
          throw ContractError("trial runner returned no metrics");
      } catch (const std::exception& e) {
        r.status = Status::kFailed;
        r.metrics = json::object();
        r.error = e.what();
      } catch (...) {
        r.status = Status::kFailed;
        r.metrics = json::object();
        r.error = "unknown error";
      }
      r.runtime_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::lock_guard lock(ledger_mutex);
      if (ledger.is_open()) {
        ledger << to_json(r).dump() << '\n';
        ledger.flush();
        if (!ledger && !ledger_error)
          ledger_error = std::make_exception_ptr(IoError("ledger write failed"));
      }
      outcome.results[pending[k]] = std::move(r);
    }
  };

  const std::size_t workers = std::min(resolve_workers(options.workers), pending.size());
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (ledger_error) std::rethrow_exception(ledger_error);
  outcome.executed = pending.size();
  return outcome;
}

const TrialResult& best_by(const std::vector<TrialResult>& results, const std::string& metric,
                           Direction direction) {
  const TrialResult* best = nullptr;
  double best_value = 0.0;
  for (const auto& r : results) {
    if (r.status != Status::kCompleted) continue;
    const auto it = r.metrics.find(metric);
    if (it == r.metrics.end() || !it->is_number())
      throw ContractError("trial " + r.id + " has no numeric metric '" + metric + "'");
    const double v = it->get<double>();
    const bool better = !best || (direction == Direction::kMaximize ? v > best_value : v < best_value);
    if (better) {
      best = &r;
      best_value = v;
    }
  }
  if (!best) throw DegenerateInputError("no completed trials to rank");
  return *best;
}

const std::vector<MetricColumn>& default_metric_columns() {
  static const std::vector<MetricColumn> cols = {{"rouge1", "Rouge-1"},
                                                 {"rouge2", "Rouge-2"},
                                                 {"rougeL", "Rouge-L"},
                                                 {"f1_macro", "F1-macro"},
                                                 {"f1_weighted", "F1-weighted"}};
  return cols;
}

std::string format_value(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_object()) {
    std::string out;
    for (const auto& [k, x] : v.items()) {
      if (!out.empty()) out += ", ";
      out += k + "=" + format_value(x);
    }
    return out;
  }
  return v.dump();
}

std::string render_table_csv(const std::vector<TrialResult>& results, bool decimal_comma,
                             const std::vector<MetricColumn>& columns) {
  std::vector<std::string> header;
  if (!results.empty())
    for (const auto& [path, value] : results.front().assignment) header.push_back(path);
  for (const auto& c : columns) header.push_back(c.header);
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : results) {
    std::vector<std::string> row;
    for (const auto& [path, value] : r.assignment) row.push_back(format_value(value));
    for (const auto& c : columns) {
      if (r.status != Status::kCompleted) {
        row.push_back("failed");
        continue;
      }
      const auto it = r.metrics.find(c.key);
      row.push_back(it != r.metrics.end() && it->is_number()
                        ? metrics::format_fixed(it->get<double>(), 2, decimal_comma)
                        : "");
    }
    rows.push_back(std::move(row));
  }
  return metrics::render_csv(header, rows);
}

}  // namespace mtfc::sweep
