#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace mtfc::corpus {

enum class Dataset { kPubhealth, kFever, kEfever };

std::string to_string(Dataset d);
Dataset dataset_from_string(std::string_view s);

enum class SplitName { kTrain, kValidation, kTest };

std::string to_string(SplitName s);
SplitName split_from_string(std::string_view s);

/// Ordered label inventory. Order defines class indices.
class LabelSpace {
 public:
  LabelSpace() = default;
  /// Throws SchemaError on duplicate/empty labels or a nei label not in `labels`.
  LabelSpace(std::string name, std::vector<std::string> labels,
             std::optional<std::string> nei_label = std::nullopt);

  const std::string& name() const { return name_; }
  const std::vector<std::string>& labels() const { return labels_; }
  const std::optional<std::string>& nei_label() const { return nei_label_; }
  std::size_t size() const { return labels_.size(); }

  std::optional<int> index_of(std::string_view label) const;
  const std::string& label(int index) const;
  bool contains(int index) const { return index >= 0 && index < static_cast<int>(labels_.size()); }
  std::optional<int> nei_index() const;

  bool operator==(const LabelSpace&) const = default;

  static LabelSpace pubhealth();
  static LabelSpace fever();

 private:
  std::string name_;
  std::vector<std::string> labels_;
  std::optional<std::string> nei_label_;
};

struct ClaimRecord {
  std::string id;
  std::string claim;
  std::vector<std::string> evidence;
  std::optional<std::string> gold_summary;
  int label = -1;
  Dataset dataset = Dataset::kPubhealth;
  // Present only after evidence selection: (sentence index, score) pairs.
  std::vector<std::pair<int, double>> evidence_scores;

  bool operator==(const ClaimRecord&) const = default;
};

struct DatasetSplit {
  std::vector<ClaimRecord> records;
  LabelSpace label_space;
  SplitName split_name = SplitName::kTrain;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
};

/// Maps raw source fields onto canonical ClaimRecord fields and normalizes
/// raw label strings onto a LabelSpace.
///
/// Canonical fields: id, claim, evidence, gold_summary, label. `claim` and
/// `label` must each have exactly one source field; the others are optional.
struct ColumnMapping {
  std::map<std::string, std::string> source_to_canonical;
  // Raw label (after optional case folding) -> label string in the LabelSpace.
  std::map<std::string, std::string> label_aliases;
  bool case_fold_labels = true;

  /// Throws SchemaError when the mapping invariant does not hold.
  void validate() const;
  /// Source field name for a canonical field, if mapped.
  std::optional<std::string> source_for(std::string_view canonical) const;
  /// Resolves a raw label through case folding and the alias table.
  std::optional<int> resolve_label(std::string_view raw, const LabelSpace& space) const;

  /// Documented defaults for the public PUBHEALTH TSV release.
  static ColumnMapping pubhealth_default();
  /// Documented defaults for the e-FEVER JSON-lines release.
  static ColumnMapping efever_default();
};

struct DropReport {
  std::size_t rows_seen = 0;
  std::size_t dropped = 0;
  std::map<std::string, std::size_t> reasons;  // reason -> count

  void add(const std::string& reason) {
    ++dropped;
    ++reasons[reason];
  }
  bool empty() const { return dropped == 0; }
};

struct LoadResult {
  DatasetSplit split;
  DropReport drops;
};

struct TabularOptions {
  char delimiter = '\t';
  Dataset dataset = Dataset::kPubhealth;
  SplitName split_name = SplitName::kTrain;
};

LoadResult load_tabular(const std::filesystem::path& path, const ColumnMapping& mapping,
                        const LabelSpace& label_space, const TabularOptions& options = {});

struct JsonlOptions {
  Dataset dataset = Dataset::kEfever;
  SplitName split_name = SplitName::kTrain;
};

LoadResult load_jsonl(const std::filesystem::path& path, const ColumnMapping& mapping,
                      const LabelSpace& label_space, const JsonlOptions& options = {});

/// Drops records whose gold summary is absent or whitespace-only.
DatasetSplit filter_nonnull_summaries(const DatasetSplit& split);

struct Violation {
  std::string record_id;
  std::string message;
};

std::vector<Violation> validate_split(const DatasetSplit& split);

// Canonical JSON-lines format: {id, claim, evidence, gold_summary, label,
// dataset}, plus "evidence_scores" after evidence selection.
nlohmann::json to_json(const ClaimRecord& record, const LabelSpace& space);
ClaimRecord record_from_json(const nlohmann::json& j, const LabelSpace& space);
void write_canonical(const std::filesystem::path& path, const DatasetSplit& split);
DatasetSplit read_canonical(const std::filesystem::path& path, const LabelSpace& space,
                            SplitName split_name);

nlohmann::json to_json(const DropReport& report);
nlohmann::json to_json(const LabelSpace& space);
LabelSpace label_space_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ColumnMapping& mapping);
ColumnMapping column_mapping_from_json(const nlohmann::json& j);

/// Collapses runs of whitespace and trims.
std::string normalize_whitespace(std::string_view text);

/// Splits one delimited line-or-record set honoring double-quoted fields
/// (which may contain delimiters, doubled quotes and newlines).
std::vector<std::vector<std::string>> parse_delimited(std::string_view text, char delimiter);

}  // namespace mtfc::corpus
