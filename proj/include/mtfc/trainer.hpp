#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtfc/backbone.hpp"
#include "mtfc/corpus.hpp"
#include "mtfc/errors.hpp"
#include "mtfc/evidence.hpp"
#include "mtfc/metrics.hpp"
#include "mtfc/objective.hpp"
#include "mtfc/tokenizer.hpp"

namespace mtfc::trainer {

using objective::LossMode;

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 4;
  std::size_t epochs = 1;
  std::size_t max_steps = 0;  // > 0 overrides epochs * ceil(N / batch_size)
  std::uint64_t seed = 42;
  LossMode loss_mode = LossMode::kStatic;
  objective::StaticWeights static_weights;
  std::vector<double> class_weights;  // empty -> all ones
  objective::UncertaintyState initial_uncertainty;
  std::size_t eval_every = 0;  // 0 disables validation during training
  std::size_t patience = 0;    // 0 disables early stopping
  std::string checkpoint_dir;  // when set, the best validation checkpoint lands here
  double grad_clip = 0.0;      // global-norm clip; 0 disables
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  bool shuffle = true;
  std::string input_template = std::string(evidence::kDefaultInputTemplate);

  /// Throws SchemaError when an invariant fails.
  void validate() const;
  objective::ClassWeights resolved_class_weights(std::size_t num_classes) const;
  bool operator==(const TrainConfig&) const = default;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// lr0 · (1 − step / total_steps), clamped at 0.
double lr_schedule(std::size_t step, std::size_t total_steps, double lr0);

/// epochs × ceil(records / batch_size), unless max_steps is set.
std::size_t planned_steps(const TrainConfig& config, std::size_t records);

/// Backend + classification head + tokenizer: everything a checkpoint holds
/// besides optimizer state.
class MultiTaskModel {
 public:
  MultiTaskModel(backbone::BackboneConfig config, Tokenizer tokenizer, std::uint64_t seed);
  MultiTaskModel(backbone::BackboneConfig config, Tokenizer tokenizer,
                 std::unique_ptr<backbone::ModelBackend> backend, backbone::ClassifierHead head);

  backbone::ModelBackend& backend() { return *backend_; }
  const backbone::ClassifierHead& head() const { return head_; }
  const Tokenizer& tokenizer() const { return tokenizer_; }
  const backbone::BackboneConfig& config() const { return config_; }
  backbone::HeadOptions head_options() const;

  /// Backend parameters followed by head parameters.
  std::vector<ag::Var> parameters() const;
  std::vector<ag::Var> head_parameters() const { return head_.parameters(); }

 private:
  MultiTaskModel(backbone::BackboneConfig config, Tokenizer tokenizer, std::uint64_t seed,
                 std::shared_ptr<std::mt19937_64> rng);

  backbone::BackboneConfig config_;
  Tokenizer tokenizer_;
  std::unique_ptr<backbone::ModelBackend> backend_;
  backbone::ClassifierHead head_;
};

std::vector<backbone::TextExample> to_examples(const corpus::DatasetSplit& split,
                                               std::string_view input_template);

struct StepRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double loss_summ = 0.0;
  double loss_cl = 0.0;
  double loss_total = 0.0;
  std::optional<objective::UncertaintyState> uncertainty;

  bool operator==(const StepRecord&) const = default;
};

nlohmann::json to_json(const StepRecord& r);

struct AdamState {
  std::size_t t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

struct TrainState {
  std::size_t step = 0;  // updates applied so far
  double lr = 0.0;
  double loss_summ = 0.0;
  double loss_cl = 0.0;
  double loss_total = 0.0;
  std::optional<objective::UncertaintyState> uncertainty;
  std::optional<double> best_f1_macro;
  std::size_t best_step = 0;
};

nlohmann::json to_json(const TrainState& s);

struct TrainResult {
  TrainState state;
  std::vector<StepRecord> history;
  AdamState optimizer;
  bool stopped_early = false;
};

struct TrainOptions {
  const corpus::DatasetSplit* validation = nullptr;
  std::function<void(const StepRecord&)> on_step;
  // Resume: counters, optimizer moments and uncertainty state from a checkpoint.
  std::optional<TrainState> resume_state;
  std::optional<AdamState> resume_optimizer;
  // Stop once this many updates have been applied (the schedule still spans
  // the full planned run), so a run can be split into resumable chunks.
  std::optional<std::size_t> stop_at_step;
};

/// Thrown when a loss or gradient becomes non-finite.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(const std::string& what, nlohmann::json snapshot)
      : NumericError(what), snapshot_(std::move(snapshot)) {}
  const nlohmann::json& snapshot() const { return snapshot_; }

 private:
  nlohmann::json snapshot_;
};

/// Joint training: every step computes both task losses on one batch,
/// combines them per `loss_mode`, and applies one Adam update.
TrainResult train(const corpus::DatasetSplit& split, const TrainConfig& config,
                  MultiTaskModel& model, const TrainOptions& options = {});

// ---------------------------------------------------------------------------
// Evaluation

struct Prediction {
  std::string summary;
  int label = -1;
};

class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::vector<Prediction> predict(const corpus::DatasetSplit& split) = 0;
};

/// Runs the model in evaluation mode: one encoder pass per batch feeds both
/// generation and classification.
class ModelPredictor final : public Predictor {
 public:
  ModelPredictor(MultiTaskModel& model, backbone::GenerationConfig generation,
                 std::string input_template, std::size_t batch_size = 8);
  std::vector<Prediction> predict(const corpus::DatasetSplit& split) override;

 private:
  MultiTaskModel& model_;
  backbone::GenerationConfig generation_;
  std::string input_template_;
  std::size_t batch_size_;
};

struct EvalConfig {
  metrics::RougeConfig rouge;
};

struct EvalReport {
  std::size_t records = 0;
  metrics::RougeSummary rouge;
  std::size_t rouge_excluded = 0;  // records without a gold summary
  metrics::ConfusionMatrix confusion{corpus::LabelSpace::pubhealth()};
  metrics::ClassificationReport classification;
  std::optional<double> binary_accuracy;  // NEI excluded, when the space has one
  std::vector<Prediction> predictions;
};

EvalReport evaluate(const corpus::DatasetSplit& split, Predictor& predictor,
                    const EvalConfig& config = {});

nlohmann::json to_json(const EvalReport& r);

/// Teacher-forced token accuracy and classification accuracy in eval mode.
struct TeacherForcedStats {
  double token_accuracy = 0.0;
  double class_accuracy = 0.0;
  double loss_summ = 0.0;
  double loss_cl = 0.0;
};

TeacherForcedStats teacher_forced_eval(const corpus::DatasetSplit& split, MultiTaskModel& model,
                                       const TrainConfig& config);

// ---------------------------------------------------------------------------
// Checkpoints: a directory holding config.json, params.bin, optimizer.bin
// and tokenizer.json.

inline constexpr int kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
  bool operator==(const NamedTensor&) const = default;
};

struct Checkpoint {
  backbone::BackboneConfig backbone;
  TrainConfig train;
  Tokenizer tokenizer;
  TrainState state;
  nlohmann::json metrics = nlohmann::json::object();
  std::vector<NamedTensor> params;
  std::optional<AdamState> optimizer;
};

Checkpoint make_checkpoint(const MultiTaskModel& model, const TrainConfig& config,
                           const TrainResult& result, nlohmann::json metrics = nlohmann::json::object());
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& checkpoint);
/// Throws IoError for a missing directory, SchemaError for version, shape or
/// checksum problems, or a class count other than `expected_num_classes`.
Checkpoint load_checkpoint(const std::filesystem::path& dir,
                           std::optional<std::size_t> expected_num_classes = std::nullopt);
/// Rebuilds a TinyTransformer-backed model with the stored parameter values.
MultiTaskModel model_from_checkpoint(const Checkpoint& checkpoint);

void write_tensor_blob(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_tensor_blob(const std::filesystem::path& path);

}  // namespace mtfc::trainer
