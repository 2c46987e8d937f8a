#include "mtfc/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "mtfc/errors.hpp"

namespace mtfc::corpus {

using nlohmann::json;

namespace {

std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const std::set<std::string>& canonical_fields() {
  static const std::set<std::string> kFields = {"id", "claim", "evidence", "gold_summary",
                                                "label"};
  return kFields;
}

std::string fallback_id(Dataset d, SplitName s, std::size_t row) {
  return to_string(d) + "-" + to_string(s) + "-" + std::to_string(row);
}

// Shared by both loaders: turns mapped raw values into a record or a drop reason.
struct RawRow {
  std::optional<std::string> id;
  std::optional<std::string> claim;
  std::vector<std::string> evidence;
  std::optional<std::string> gold_summary;
  std::optional<std::string> label;
};

std::optional<std::string> build_record(const RawRow& raw, const ColumnMapping& mapping,
                                        const LabelSpace& space, Dataset dataset,
                                        SplitName split, std::size_t row, ClaimRecord& out) {
  const std::string claim = normalize_whitespace(raw.claim.value_or(""));
  if (claim.empty()) return "empty claim";
  if (!raw.label) return "missing label";
  const auto label = mapping.resolve_label(*raw.label, space);
  if (!label) return "unmappable label";

  out = ClaimRecord{};
  out.id = raw.id && !normalize_whitespace(*raw.id).empty() ? normalize_whitespace(*raw.id)
                                                            : fallback_id(dataset, split, row);
  out.claim = claim;
  for (const auto& e : raw.evidence) {
    auto seg = normalize_whitespace(e);
    if (!seg.empty()) out.evidence.push_back(std::move(seg));
  }
  if (raw.gold_summary) out.gold_summary = *raw.gold_summary;
  out.label = *label;
  out.dataset = dataset;
  if (out.evidence.empty() && space.nei_index() != out.label) return "empty evidence";
  return std::nullopt;
}

}  // namespace

std::string to_string(Dataset d) {
  switch (d) {
    case Dataset::kPubhealth: return "pubhealth";
    case Dataset::kFever: return "fever";
    case Dataset::kEfever: return "efever";
  }
  return "unknown";
}

Dataset dataset_from_string(std::string_view s) {
  const auto l = lowercase(s);
  if (l == "pubhealth") return Dataset::kPubhealth;
  if (l == "fever") return Dataset::kFever;
  if (l == "efever" || l == "e-fever") return Dataset::kEfever;
  throw SchemaError("unknown dataset tag '" + std::string(s) + "'");
}

std::string to_string(SplitName s) {
  switch (s) {
    case SplitName::kTrain: return "train";
    case SplitName::kValidation: return "validation";
    case SplitName::kTest: return "test";
  }
  return "unknown";
}

SplitName split_from_string(std::string_view s) {
  if (s == "train") return SplitName::kTrain;
  if (s == "validation" || s == "dev") return SplitName::kValidation;
  if (s == "test") return SplitName::kTest;
  throw SchemaError("unknown split name '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// LabelSpace

LabelSpace::LabelSpace(std::string name, std::vector<std::string> labels,
                       std::optional<std::string> nei_label)
    : name_(std::move(name)), labels_(std::move(labels)), nei_label_(std::move(nei_label)) {
  if (labels_.size() < 2) throw SchemaError("label space '" + name_ + "' needs >= 2 labels");
  std::set<std::string> seen;
  for (const auto& l : labels_) {
    if (l.empty()) throw SchemaError("label space '" + name_ + "' has an empty label");
    if (!seen.insert(l).second)
      throw SchemaError("label space '" + name_ + "' repeats label '" + l + "'");
  }
  if (nei_label_ && !seen.contains(*nei_label_))
    throw SchemaError("nei label '" + *nei_label_ + "' is not in label space '" + name_ + "'");
}

std::optional<int> LabelSpace::index_of(std::string_view label) const {
  for (std::size_t i = 0; i < labels_.size(); ++i)
    if (labels_[i] == label) return static_cast<int>(i);
  return std::nullopt;
}

const std::string& LabelSpace::label(int index) const {
  if (!contains(index))
    throw ContractError("label index " + std::to_string(index) + " outside label space '" +
                        name_ + "'");
  return labels_[static_cast<std::size_t>(index)];
}

std::optional<int> LabelSpace::nei_index() const {
  if (!nei_label_) return std::nullopt;
  return index_of(*nei_label_);
}

LabelSpace LabelSpace::pubhealth() {
  return LabelSpace("pubhealth", {"true", "false", "mixture", "unproven"});
}

LabelSpace LabelSpace::fever() {
  return LabelSpace("fever", {"supports", "refutes", "not enough info"}, "not enough info");
}

// ---------------------------------------------------------------------------
// ColumnMapping

void ColumnMapping::validate() const {
  std::map<std::string, int> counts;
  for (const auto& [source, canonical] : source_to_canonical) {
    if (!canonical_fields().contains(canonical))
      throw SchemaError("column mapping targets unknown canonical field '" + canonical + "'");
    ++counts[canonical];
  }
  for (const auto& [canonical, n] : counts)
    if (n > 1) throw SchemaError("canonical field '" + canonical + "' is mapped more than once");
  for (const char* required : {"claim", "label"})
    if (!counts.contains(required))
      throw SchemaError(std::string("column mapping has no source for '") + required + "'");
}

std::optional<std::string> ColumnMapping::source_for(std::string_view canonical) const {
  for (const auto& [source, c] : source_to_canonical)
    if (c == canonical) return source;
  return std::nullopt;
}

std::optional<int> ColumnMapping::resolve_label(std::string_view raw,
                                                const LabelSpace& space) const {
  std::string key = normalize_whitespace(raw);
  if (auto it = label_aliases.find(key); it != label_aliases.end()) return space.index_of(it->second);
  if (case_fold_labels) key = lowercase(key);
  if (auto it = label_aliases.find(key); it != label_aliases.end()) key = it->second;
  return space.index_of(key);
}

ColumnMapping ColumnMapping::pubhealth_default() {
  ColumnMapping m;
  m.source_to_canonical = {{"claim_id", "id"},
                           {"claim", "claim"},
                           {"main_text", "evidence"},
                           {"explanation", "gold_summary"},
                           {"label", "label"}};
  return m;
}

ColumnMapping ColumnMapping::efever_default() {
  ColumnMapping m;
  m.source_to_canonical = {{"id", "id"},
                           {"claim", "claim"},
                           {"retrieved_evidence", "evidence"},
                           {"summary", "gold_summary"},
                           {"label", "label"}};
  m.label_aliases = {{"nei", "not enough info"},
                     {"not_enough_info", "not enough info"},
                     {"support", "supports"},
                     {"refute", "refutes"}};
  return m;
}

// ---------------------------------------------------------------------------
// Text helpers

std::string normalize_whitespace(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(c));
  }
  return out;
}

std::vector<std::vector<std::string>> parse_delimited(std::string_view text, char delimiter) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_row = [&] {
    end_field();
    // Skip fully blank lines.
    if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
    row.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == '"' && !field_started) {
      in_quotes = true;
      field_started = true;
    } else if (c == delimiter) {
      end_field();
    } else if (c == '\n') {
      end_row();
    } else if (c == '\r') {
      if (i + 1 < text.size() && text[i + 1] == '\n') continue;
      end_row();
    } else {
      field.push_back(c);
      field_started = true;
    }
  }
  if (!field.empty() || !row.empty()) end_row();
  return rows;
}

// ---------------------------------------------------------------------------
// Loaders

LoadResult load_tabular(const std::filesystem::path& path, const ColumnMapping& mapping,
                        const LabelSpace& label_space, const TabularOptions& options) {
  mapping.validate();
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  const auto rows = parse_delimited(read_file(path), options.delimiter);
  if (rows.empty()) throw SchemaError("no header row in " + path.string());

  const auto& header = rows.front();
  std::map<std::string, std::size_t> column_index;
  for (std::size_t i = 0; i < header.size(); ++i) {
    std::string name = normalize_whitespace(header[i]);
    // Strip a UTF-8 byte-order mark on the first column.
    if (i == 0 && name.rfind("\xEF\xBB\xBF", 0) == 0) name = name.substr(3);
    column_index.emplace(name, i);
  }
  std::map<std::string, std::size_t> canonical_column;
  for (const auto& [source, canonical] : mapping.source_to_canonical) {
    auto it = column_index.find(source);
    if (it == column_index.end())
      throw SchemaError("column '" + source + "' missing from header of " + path.string());
    canonical_column[canonical] = it->second;
  }

  LoadResult result;
  result.split.label_space = label_space;
  result.split.split_name = options.split_name;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    ++result.drops.rows_seen;
    if (row.size() < header.size()) {
      // Trailing empty columns are tolerated only when every mapped column exists.
      bool ok = std::all_of(canonical_column.begin(), canonical_column.end(),
                            [&](const auto& kv) { return kv.second < row.size(); });
      if (!ok) {
        result.drops.add("malformed row");
        continue;
      }
    }
    RawRow raw;
    auto cell = [&](const char* canonical) -> std::optional<std::string> {
      auto it = canonical_column.find(canonical);
      if (it == canonical_column.end()) return std::nullopt;
      return row[it->second];
    };
    raw.id = cell("id");
    raw.claim = cell("claim");
    raw.label = cell("label");
    if (auto ev = cell("evidence")) raw.evidence.push_back(*ev);
    if (auto summary = cell("gold_summary"); summary && !normalize_whitespace(*summary).empty())
      raw.gold_summary = *summary;

    ClaimRecord record;
    if (auto reason = build_record(raw, mapping, label_space, options.dataset,
                                   options.split_name, r, record)) {
      result.drops.add(*reason);
      continue;
    }
    result.split.records.push_back(std::move(record));
  }
  if (result.split.empty())
    throw EmptyDatasetError("no records survived loading " + path.string());
  return result;
}

namespace {

std::optional<std::string> json_text(const json& v) {
  if (v.is_null()) return std::nullopt;
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number()) return v.dump();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  return std::nullopt;
}

std::vector<std::string> json_evidence(const json& v) {
  std::vector<std::string> out;
  if (v.is_string()) {
    out.push_back(v.get<std::string>());
  } else if (v.is_array()) {
    for (const auto& e : v) {
      if (e.is_string()) {
        out.push_back(e.get<std::string>());
      } else if (e.is_array() && !e.empty() && e.back().is_string()) {
        // FEVER-style [page, line, text] triples carry the sentence last.
        out.push_back(e.back().get<std::string>());
      }
    }
  }
  return out;
}

}  // namespace

LoadResult load_jsonl(const std::filesystem::path& path, const ColumnMapping& mapping,
                      const LabelSpace& label_space, const JsonlOptions& options) {
  mapping.validate();
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());

  LoadResult result;
  result.split.label_space = label_space;
  result.split.split_name = options.split_name;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (normalize_whitespace(line).empty()) continue;
    ++result.drops.rows_seen;
    json obj = json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (obj.is_discarded() || !obj.is_object()) {
      result.drops.add("malformed json");
      continue;
    }
    RawRow raw;
    bool missing_required = false;
    for (const auto& [source, canonical] : mapping.source_to_canonical) {
      auto it = obj.find(source);
      if (it == obj.end()) {
        if (canonical == "claim" || canonical == "label") missing_required = true;
        continue;
      }
      if (canonical == "id") raw.id = json_text(*it);
      else if (canonical == "claim") raw.claim = json_text(*it);
      else if (canonical == "label") raw.label = json_text(*it);
      else if (canonical == "evidence") raw.evidence = json_evidence(*it);
      else if (canonical == "gold_summary") raw.gold_summary = json_text(*it);
    }
    if (missing_required) {
      result.drops.add("missing field");
      continue;
    }
    ClaimRecord record;
    if (auto reason = build_record(raw, mapping, label_space, options.dataset,
                                   options.split_name, line_no, record)) {
      result.drops.add(*reason);
      continue;
    }
    result.split.records.push_back(std::move(record));
  }
  if (result.split.empty())
    throw EmptyDatasetError("no records survived loading " + path.string());
  return result;
}

DatasetSplit filter_nonnull_summaries(const DatasetSplit& split) {
  DatasetSplit out;
  out.label_space = split.label_space;
  out.split_name = split.split_name;
  for (const auto& r : split.records)
    if (r.gold_summary && !normalize_whitespace(*r.gold_summary).empty())
      out.records.push_back(r);
  return out;
}

std::vector<Violation> validate_split(const DatasetSplit& split) {
  std::vector<Violation> out;
  const auto nei = split.label_space.nei_index();
  std::set<std::string> ids;
  for (const auto& r : split.records) {
    if (normalize_whitespace(r.claim).empty()) out.push_back({r.id, "claim is empty"});
    if (!split.label_space.contains(r.label)) {
      out.push_back({r.id, "label index " + std::to_string(r.label) + " outside label space '" +
                               split.label_space.name() + "'"});
    } else if (r.evidence.empty() && nei != r.label) {
      out.push_back({r.id, "evidence is empty for a non-NEI label"});
    }
    for (const auto& e : r.evidence)
      if (normalize_whitespace(e).empty()) {
        out.push_back({r.id, "evidence contains an empty segment"});
        break;
      }
    if (!ids.insert(r.id).second) out.push_back({r.id, "duplicate record id"});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Canonical format

json to_json(const ClaimRecord& record, const LabelSpace& space) {
  json j;
  j["id"] = record.id;
  j["claim"] = record.claim;
  j["evidence"] = record.evidence;
  j["gold_summary"] = record.gold_summary ? json(*record.gold_summary) : json(nullptr);
  j["label"] = space.label(record.label);
  j["dataset"] = to_string(record.dataset);
  if (!record.evidence_scores.empty()) {
    json scores = json::array();
    for (const auto& [idx, score] : record.evidence_scores) scores.push_back({idx, score});
    j["evidence_scores"] = std::move(scores);
  }
  return j;
}

ClaimRecord record_from_json(const json& j, const LabelSpace& space) {
  try {
    ClaimRecord r;
    r.id = j.at("id").get<std::string>();
    r.claim = j.at("claim").get<std::string>();
    r.evidence = j.at("evidence").get<std::vector<std::string>>();
    if (!j.at("gold_summary").is_null()) r.gold_summary = j.at("gold_summary").get<std::string>();
    const auto label = j.at("label").get<std::string>();
    const auto idx = space.index_of(label);
    if (!idx) throw SchemaError("label '" + label + "' not in label space '" + space.name() + "'");
    r.label = *idx;
    r.dataset = dataset_from_string(j.at("dataset").get<std::string>());
    if (auto it = j.find("evidence_scores"); it != j.end())
      for (const auto& pair : *it)
        r.evidence_scores.emplace_back(pair.at(0).get<int>(), pair.at(1).get<double>());
    return r;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("bad canonical record: ") + e.what());
  }
}

void write_canonical(const std::filesystem::path& path, const DatasetSplit& split) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& r : split.records) out << to_json(r, split.label_space).dump() << '\n';
}

DatasetSplit read_canonical(const std::filesystem::path& path, const LabelSpace& space,
                            SplitName split_name) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  DatasetSplit split;
  split.label_space = space;
  split.split_name = split_name;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw SchemaError("malformed canonical line in " + path.string());
    split.records.push_back(record_from_json(j, space));
  }
  return split;
}

json to_json(const DropReport& report) {
  return json{{"rows_seen", report.rows_seen},
              {"dropped", report.dropped},
              {"reasons", report.reasons}};
}

json to_json(const LabelSpace& space) {
  json j{{"name", space.name()}, {"labels", space.labels()}};
  j["nei_label"] = space.nei_label() ? json(*space.nei_label()) : json(nullptr);
  return j;
}

LabelSpace label_space_from_json(const json& j) {
  try {
    std::optional<std::string> nei;
    if (auto it = j.find("nei_label"); it != j.end() && !it->is_null())
      nei = it->get<std::string>();
    return LabelSpace(j.value("name", std::string("labels")),
                      j.at("labels").get<std::vector<std::string>>(), nei);
  } catch (const json::exception& e) {
    throw SchemaError(std::string("bad label_space: ") + e.what());
  }
}

json to_json(const ColumnMapping& mapping) {
  return json{{"columns", mapping.source_to_canonical},
              {"label_aliases", mapping.label_aliases},
              {"case_fold_labels", mapping.case_fold_labels}};
}

ColumnMapping column_mapping_from_json(const json& j) {
  try {
    ColumnMapping m;
    m.source_to_canonical = j.at("columns").get<std::map<std::string, std::string>>();
    if (j.contains("label_aliases"))
      m.label_aliases = j.at("label_aliases").get<std::map<std::string, std::string>>();
    m.case_fold_labels = j.value("case_fold_labels", true);
    m.validate();
    return m;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("bad column mapping: ") + e.what());
  }
}

}  // namespace mtfc::corpus
