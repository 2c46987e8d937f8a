#pragma once

// Run configuration: one JSON document with dataset, evidence, model,
// objective, train and output blocks. Sweeps and CLI flags edit it through
// dotted paths before it is parsed.

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtfc/backbone.hpp"
#include "mtfc/corpus.hpp"
#include "mtfc/objective.hpp"
#include "mtfc/trainer.hpp"

namespace mtfc::config {

enum class SourceFormat { kTsv, kJsonl, kCanonical };

std::string to_string(SourceFormat f);
SourceFormat source_format_from_string(std::string_view s);

struct DatasetBlock {
  corpus::Dataset name = corpus::Dataset::kPubhealth;
  SourceFormat format = SourceFormat::kTsv;
  std::map<corpus::SplitName, std::filesystem::path> paths;
  corpus::ColumnMapping mapping;
  corpus::LabelSpace labels;
  bool small_variant = false;  // drop records without a gold summary
};

struct EvidenceBlock {
  std::size_t top_k = 5;
  evidence::VocabularyPolicy::Mode vocabulary = evidence::VocabularyPolicy::Mode::kFitted;
  std::size_t hash_dimension = 4096;
  std::string input_template = std::string(evidence::kDefaultInputTemplate);
};

struct ModelBlock {
  std::optional<backbone::BackboneConfig> backbone;
  std::optional<std::filesystem::path> checkpoint;
  std::size_t tokenizer_min_count = 1;
  std::size_t tokenizer_max_size = 0;
  backbone::GenerationConfig generation;
};

struct ObjectiveBlock {
  objective::LossMode loss_mode = objective::LossMode::kStatic;
  objective::StaticWeights static_weights;
  std::map<std::string, double> class_weights;  // label -> weight, missing = 1
  objective::UncertaintyState initial_uncertainty;
};

struct OutputBlock {
  std::filesystem::path dir = "out";
  bool rouge_stem = false;
  corpus::SplitName eval_split = corpus::SplitName::kTest;
  bool decimal_comma = false;
};

struct RunConfig {
  DatasetBlock dataset;
  EvidenceBlock evidence;
  ModelBlock model;
  ObjectiveBlock objective;
  trainer::TrainConfig train;
  OutputBlock output;

  /// Class weights aligned with the label space.
  std::vector<double> class_weight_vector() const;
  /// TrainConfig with objective block and evidence template folded in.
  trainer::TrainConfig resolved_train_config() const;
};

/// Fully populated JSON form; every field a sweep may address is present.
nlohmann::json to_json(const RunConfig& c);
/// Relative dataset/checkpoint/output paths resolve against `base_dir` and
/// are stored absolute.
/// Throws SchemaError on bad enums, unknown blocks, or a model block that
/// names both or neither of backbone/checkpoint.
RunConfig run_config_from_json(const nlohmann::json& j,
                               const std::filesystem::path& base_dir = {});
/// Reads, normalizes and parses. Throws IoError when the file is missing.
nlohmann::json read_config_json(const std::filesystem::path& path);
RunConfig load_run_config(const std::filesystem::path& path);

/// Normalizes `raw` through parse + serialize so every default is explicit.
nlohmann::json normalize(const nlohmann::json& raw, const std::filesystem::path& base_dir = {});

/// Dotted-path access ("model.backbone.classifier_hidden_dim"). set_path
/// requires the path to exist already; both throw SchemaError otherwise.
const nlohmann::json& get_path(const nlohmann::json& j, std::string_view path);
void set_path(nlohmann::json& j, std::string_view path, nlohmann::json value);
bool has_path(const nlohmann::json& j, std::string_view path);

/// Throws IoError naming the first configured input path that is missing.
void check_paths_exist(const RunConfig& c);

}  // namespace mtfc::config
