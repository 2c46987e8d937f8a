#include "mtfc/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <exception>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "mtfc/autograd.hpp"

namespace mtfc::trainer {

using json = nlohmann::json;

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  return splitmix(splitmix(seed ^ splitmix(stream)) ^ index);
}

constexpr std::uint64_t kShuffleStream = 1;
constexpr std::uint64_t kDropoutStream = 2;

int argmax_row(const std::vector<double>& v, std::size_t row, std::size_t cols) {
  const double* p = v.data() + row * cols;
  std::size_t best = 0;
  for (std::size_t c = 1; c < cols; ++c)
    if (p[c] > p[best]) best = c;
  return static_cast<int>(best);
}

bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

std::string join_evidence(const std::vector<std::string>& evidence) {
  std::string out;
  for (const auto& e : evidence) {
    if (e.empty()) continue;
    if (!out.empty()) out += ' ';
    out += e;
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  if (!std::isfinite(learning_rate) || learning_rate < 0.0)
    throw SchemaError("learning_rate must be finite and >= 0");
  if (batch_size == 0) throw SchemaError("batch_size must be > 0");
  if (epochs == 0 && max_steps == 0) throw SchemaError("epochs or max_steps must be > 0");
  if (!std::isfinite(grad_clip) || grad_clip < 0.0) throw SchemaError("grad_clip must be >= 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw SchemaError("adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw SchemaError("adam_eps must be > 0");
  try {
    static_weights.validate();
    if (!class_weights.empty()) objective::ClassWeights{class_weights};
  } catch (const ContractError& e) {
    throw SchemaError(e.what());
  }
  if (!std::isfinite(initial_uncertainty.log_sigma_cl) ||
      !std::isfinite(initial_uncertainty.log_sigma_summ))
    throw SchemaError("initial uncertainty must be finite");
}

objective::ClassWeights TrainConfig::resolved_class_weights(std::size_t num_classes) const {
  if (class_weights.empty()) return objective::ClassWeights::uniform(num_classes);
  if (class_weights.size() != num_classes)
    throw SchemaError("class_weights has " + std::to_string(class_weights.size()) +
                      " entries for " + std::to_string(num_classes) + " classes");
  return objective::ClassWeights(class_weights);
}

json to_json(const TrainConfig& c) {
  return json{{"learning_rate", c.learning_rate},
              {"batch_size", c.batch_size},
              {"epochs", c.epochs},
              {"max_steps", c.max_steps},
              {"seed", c.seed},
              {"loss_mode", objective::to_string(c.loss_mode)},
              {"static_weights",
               {{"summary", c.static_weights.summary},
                {"classification", c.static_weights.classification}}},
              {"class_weights", c.class_weights},
              {"initial_uncertainty",
               {{"log_sigma_cl", c.initial_uncertainty.log_sigma_cl},
                {"log_sigma_summ", c.initial_uncertainty.log_sigma_summ}}},
              {"eval_every", c.eval_every},
              {"patience", c.patience},
              {"checkpoint_dir", c.checkpoint_dir},
              {"grad_clip", c.grad_clip},
              {"adam_beta1", c.adam_beta1},
              {"adam_beta2", c.adam_beta2},
              {"adam_eps", c.adam_eps},
              {"shuffle", c.shuffle},
              {"input_template", c.input_template}};
}

TrainConfig train_config_from_json(const json& j) {
  try {
    TrainConfig c;
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.seed = j.value("seed", c.seed);
    c.loss_mode = objective::loss_mode_from_string(
        j.value("loss_mode", objective::to_string(c.loss_mode)));
    if (auto it = j.find("static_weights"); it != j.end()) {
      c.static_weights.summary = it->value("summary", c.static_weights.summary);
      c.static_weights.classification =
          it->value("classification", c.static_weights.classification);
    }
    c.class_weights = j.value("class_weights", c.class_weights);
    if (auto it = j.find("initial_uncertainty"); it != j.end()) {
      c.initial_uncertainty.log_sigma_cl = it->value("log_sigma_cl", 0.0);
      c.initial_uncertainty.log_sigma_summ = it->value("log_sigma_summ", 0.0);
    }
    c.eval_every = j.value("eval_every", c.eval_every);
    c.patience = j.value("patience", c.patience);
    c.checkpoint_dir = j.value("checkpoint_dir", c.checkpoint_dir);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.shuffle = j.value("shuffle", c.shuffle);
    c.input_template = j.value("input_template", c.input_template);
    return c;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("bad train config: ") + e.what());
  }
}

double lr_schedule(std::size_t step, std::size_t total_steps, double lr0) {
  if (total_steps == 0) throw ContractError("lr_schedule: total_steps must be > 0");
  if (step >= total_steps) return 0.0;
  return lr0 * (1.0 - static_cast<double>(step) / static_cast<double>(total_steps));
}

std::size_t planned_steps(const TrainConfig& config, std::size_t records) {
  if (config.max_steps > 0) return config.max_steps;
  if (config.batch_size == 0) throw ContractError("batch_size must be > 0");
  const std::size_t per_epoch = (records + config.batch_size - 1) / config.batch_size;
  return per_epoch * config.epochs;
}

// ---------------------------------------------------------------------------
// Model

namespace {

backbone::BackboneConfig resolve_vocab(backbone::BackboneConfig config, const Tokenizer& tokenizer) {
  if (config.vocab_size == 0) config.vocab_size = tokenizer.size();
  if (config.vocab_size != tokenizer.size())
    throw SchemaError("vocab_size " + std::to_string(config.vocab_size) +
                      " does not match tokenizer size " + std::to_string(tokenizer.size()));
  config.validate();
  return config;
}

}  // namespace

MultiTaskModel::MultiTaskModel(backbone::BackboneConfig config, Tokenizer tokenizer,
                               std::uint64_t seed)
    : MultiTaskModel(config, tokenizer, seed, std::make_shared<std::mt19937_64>(seed)) {}

MultiTaskModel::MultiTaskModel(backbone::BackboneConfig config, Tokenizer tokenizer,
                               std::uint64_t, std::shared_ptr<std::mt19937_64> rng)
    : config_(resolve_vocab(std::move(config), tokenizer)),
      tokenizer_(std::move(tokenizer)),
      backend_(std::make_unique<backbone::TinyTransformer>(config_, *rng)),
      head_(config_.d_model, config_.classifier_hidden_dim, config_.num_classes, *rng) {}

MultiTaskModel::MultiTaskModel(backbone::BackboneConfig config, Tokenizer tokenizer,
                               std::unique_ptr<backbone::ModelBackend> backend,
                               backbone::ClassifierHead head)
    : config_(std::move(config)),
      tokenizer_(std::move(tokenizer)),
      backend_(std::move(backend)),
      head_(std::move(head)) {
  if (!backend_) throw ContractError("MultiTaskModel: null backend");
  if (head_.input_dim() != backend_->d_model())
    throw ContractError("classifier input dim does not match backend d_model");
  if (head_.num_classes() != config_.num_classes)
    throw ContractError("classifier output dim does not match num_classes");
}

backbone::HeadOptions MultiTaskModel::head_options() const {
  return {config_.dropout, config_.classifier_final_activation, config_.pooling};
}

std::vector<ag::Var> MultiTaskModel::parameters() const {
  auto params = backend_->parameters();
  for (const auto& p : head_.parameters()) params.push_back(p);
  return params;
}

std::vector<backbone::TextExample> to_examples(const corpus::DatasetSplit& split,
                                               std::string_view input_template) {
  std::vector<backbone::TextExample> out;
  out.reserve(split.size());
  for (const auto& r : split.records)
    out.push_back({evidence::build_model_input(input_template, r.claim, join_evidence(r.evidence)),
                   r.gold_summary, r.label});
  return out;
}

json to_json(const StepRecord& r) {
  json j{{"step", r.step},
         {"lr", r.lr},
         {"loss_summ", r.loss_summ},
         {"loss_cl", r.loss_cl},
         {"loss_total", r.loss_total}};
  if (r.uncertainty) {
    j["s_c"] = r.uncertainty->log_sigma_cl;
    j["s_s"] = r.uncertainty->log_sigma_summ;
  }
  return j;
}

json to_json(const TrainState& s) {
  json j{{"step", s.step},
         {"lr", s.lr},
         {"loss_summ", s.loss_summ},
         {"loss_cl", s.loss_cl},
         {"loss_total", s.loss_total},
         {"best_step", s.best_step}};
  j["best_f1_macro"] = s.best_f1_macro ? json(*s.best_f1_macro) : json(nullptr);
  if (s.uncertainty)
    j["uncertainty"] = {{"log_sigma_cl", s.uncertainty->log_sigma_cl},
                        {"log_sigma_summ", s.uncertainty->log_sigma_summ}};
  return j;
}

namespace {

TrainState train_state_from_json(const json& j) {
  TrainState s;
  s.step = j.at("step").get<std::size_t>();
  s.lr = j.value("lr", 0.0);
  s.loss_summ = j.value("loss_summ", 0.0);
  s.loss_cl = j.value("loss_cl", 0.0);
  s.loss_total = j.value("loss_total", 0.0);
  s.best_step = j.value("best_step", std::size_t{0});
  if (auto it = j.find("best_f1_macro"); it != j.end() && !it->is_null())
    s.best_f1_macro = it->get<double>();
  if (auto it = j.find("uncertainty"); it != j.end())
    s.uncertainty = objective::UncertaintyState{it->at("log_sigma_cl").get<double>(),
                                                it->at("log_sigma_summ").get<double>()};
  return s;
}

// Argmax labels for a split, eval mode, batched.
std::vector<int> predict_labels(const corpus::DatasetSplit& split, MultiTaskModel& model,
                                const std::string& input_template, std::size_t batch_size) {
  ag::NoGradGuard no_grad;
  const auto examples = to_examples(split, input_template);
  std::vector<int> out(examples.size(), 0);
  const auto opts = model.head_options();
  for (std::size_t b = 0; b < examples.size(); b += batch_size) {
    const std::size_t e = std::min(examples.size(), b + batch_size);
    std::vector<backbone::TextExample> chunk(examples.begin() + static_cast<std::ptrdiff_t>(b),
                                             examples.begin() + static_cast<std::ptrdiff_t>(e));
    for (auto& ex : chunk) ex.target.reset();
    const auto batch = backbone::make_batch(model.tokenizer(), chunk, model.config());
    const auto enc = model.backend().encode(batch, {});
    const auto pooled = backbone::pool(enc->hidden, enc->mask, enc->batch, enc->len, opts.pooling);
    const auto scores =
        backbone::classify(pooled, model.head(), opts.dropout, {}, opts.final_activation);
    for (std::size_t i = 0; i < chunk.size(); ++i)
      out[b + i] = argmax_row(scores->value, i, scores->cols);
  }
  return out;
}

class Adam {
 public:
  Adam(std::vector<ag::Var> params, const TrainConfig& config, std::optional<AdamState> resume)
      : params_(std::move(params)), b1_(config.adam_beta1), b2_(config.adam_beta2),
        eps_(config.adam_eps) {
    if (resume) {
      state_ = std::move(*resume);
      if (state_.m.size() != params_.size() || state_.v.size() != params_.size())
        throw SchemaError("optimizer state does not match parameter count");
      for (std::size_t i = 0; i < params_.size(); ++i)
        if (state_.m[i].size() != params_[i]->size() || state_.v[i].size() != params_[i]->size())
          throw SchemaError("optimizer state shape mismatch for " + params_[i]->name);
    } else {
      for (const auto& p : params_) {
        state_.m.emplace_back(p->size(), 0.0);
        state_.v.emplace_back(p->size(), 0.0);
      }
    }
  }

  void step(double lr) {
    ++state_.t;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(state_.t));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(state_.t));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i];
      if (p.grad.size() != p.value.size()) continue;  // untouched this step
      auto& m = state_.m[i];
      auto& v = state_.v[i];
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        const double g = p.grad[k];
        m[k] = b1_ * m[k] + (1.0 - b1_) * g;
        v[k] = b2_ * v[k] + (1.0 - b2_) * g * g;
        const double mhat = m[k] / c1;
        const double vhat = v[k] / c2;
        p.value[k] -= lr * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  const AdamState& state() const { return state_; }

 private:
  std::vector<ag::Var> params_;
  double b1_, b2_, eps_;
  AdamState state_;
};

void clip_gradients(const std::vector<ag::Var>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p->grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  const double s = max_norm / norm;
  for (const auto& p : params)
    for (double& g : p->grad) g *= s;
}

}  // namespace

TrainResult train(const corpus::DatasetSplit& split, const TrainConfig& config,
                  MultiTaskModel& model, const TrainOptions& options) {
  config.validate();
  if (split.empty()) throw EmptyDatasetError("training split is empty");
  if (split.label_space.size() != model.config().num_classes)
    throw SchemaError("label space has " + std::to_string(split.label_space.size()) +
                      " classes but the model has " + std::to_string(model.config().num_classes));
  const auto weights = config.resolved_class_weights(model.config().num_classes);
  const auto examples = to_examples(split, config.input_template);
  const std::size_t n = examples.size();
  const std::size_t per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const std::size_t total = planned_steps(config, n);
  const bool uncertainty = config.loss_mode == LossMode::kUncertainty;
  const auto head_opts = model.head_options();

  TrainResult result;
  if (options.resume_state) result.state = *options.resume_state;

  ag::Var s_c, s_s;
  std::vector<ag::Var> trainable = model.parameters();
  if (uncertainty) {
    const auto init = result.state.uncertainty.value_or(config.initial_uncertainty);
    s_c = ag::parameter(1, 1, {init.log_sigma_cl}, "uncertainty.log_sigma_cl");
    s_s = ag::parameter(1, 1, {init.log_sigma_summ}, "uncertainty.log_sigma_summ");
    trainable.push_back(s_c);
    trainable.push_back(s_s);
    result.state.uncertainty = init;
  } else {
    result.state.uncertainty.reset();
  }
  Adam adam(trainable, config, options.resume_optimizer);

  std::vector<std::size_t> order(n);
  std::size_t order_epoch = static_cast<std::size_t>(-1);
  std::size_t since_best = 0;

  const std::size_t last = options.stop_at_step ? std::min(total, *options.stop_at_step) : total;
  for (std::size_t step = result.state.step; step < last; ++step) {
    const std::size_t epoch = step / per_epoch;
    if (epoch != order_epoch) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      if (config.shuffle) {
        std::mt19937_64 shuffle_rng(mix(config.seed, kShuffleStream, epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
      }
      order_epoch = epoch;
    }
    const std::size_t begin = (step % per_epoch) * config.batch_size;
    const std::size_t end = std::min(n, begin + config.batch_size);
    std::vector<backbone::TextExample> chunk;
    for (std::size_t i = begin; i < end; ++i) chunk.push_back(examples[order[i]]);
    const auto batch = backbone::make_batch(model.tokenizer(), chunk, model.config());

    const double lr = lr_schedule(step, total, config.learning_rate);
    ag::zero_grad(trainable);
    std::mt19937_64 rng(mix(config.seed, kDropoutStream, step));
    const backbone::ForwardContext ctx{true, &rng};
    const auto out = backbone::forward_multitask(batch, model.backend(), model.head(), head_opts, ctx);

    const bool any_target =
        batch.has_targets() &&
        std::any_of(batch.target_mask.begin(), batch.target_mask.end(), [](auto m) { return m; });
    const ag::Var loss_summ = any_target
                                  ? objective::token_ce(out.summary_logits, batch.target_ids,
                                                        Tokenizer::kPad)
                                  : ag::scalar(0.0);
    const ag::Var loss_cl = objective::class_weighted_ce(out.class_scores, batch.labels, weights,
                                                         head_opts.final_activation);
    const ag::Var loss_total = uncertainty
                                   ? objective::combine_uncertainty(loss_summ, loss_cl, s_c, s_s)
                                   : objective::combine_static(loss_summ, loss_cl,
                                                               config.static_weights);

    StepRecord rec{step, lr, loss_summ->scalar(), loss_cl->scalar(), loss_total->scalar(),
                   std::nullopt};
    if (uncertainty) rec.uncertainty = objective::UncertaintyState{s_c->scalar(), s_s->scalar()};

    auto diverged = [&](const std::string& what) {
      json snap = to_json(rec);
      snap["last_state"] = to_json(result.state);
      return TrainingDiverged(what + " at step " + std::to_string(step), snap);
    };
    if (!std::isfinite(rec.loss_total)) throw diverged("non-finite loss");
    ag::backward(loss_total);
    for (const auto& p : trainable)
      if (!all_finite(p->grad)) throw diverged("non-finite gradient in " + p->name);
    if (config.grad_clip > 0.0) clip_gradients(trainable, config.grad_clip);
    adam.step(lr);

    result.state.step = step + 1;
    result.state.lr = lr;
    result.state.loss_summ = rec.loss_summ;
    result.state.loss_cl = rec.loss_cl;
    result.state.loss_total = rec.loss_total;
    if (uncertainty)
      result.state.uncertainty = objective::UncertaintyState{s_c->scalar(), s_s->scalar()};
    result.history.push_back(rec);
    if (options.on_step) options.on_step(rec);

    if (options.validation && config.eval_every > 0 && (step + 1) % config.eval_every == 0) {
      const auto preds = predict_labels(*options.validation, model, config.input_template,
                                        config.batch_size);
      std::vector<int> golds;
      for (const auto& r : options.validation->records) golds.push_back(r.label);
      const auto cm = metrics::confusion_matrix(preds, golds, options.validation->label_space);
      const double f1 = metrics::classification_report(cm).f1_macro;
      if (!result.state.best_f1_macro || f1 > *result.state.best_f1_macro) {
        result.state.best_f1_macro = f1;
        result.state.best_step = step + 1;
        since_best = 0;
        if (!config.checkpoint_dir.empty()) {
          result.optimizer = adam.state();
          save_checkpoint(config.checkpoint_dir,
                          make_checkpoint(model, config, result, json{{"f1_macro", f1}}));
        }
      } else if (config.patience > 0 && ++since_best >= config.patience) {
        result.stopped_early = true;
        break;
      }
    }
  }
  result.optimizer = adam.state();
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

ModelPredictor::ModelPredictor(MultiTaskModel& model, backbone::GenerationConfig generation,
                               std::string input_template, std::size_t batch_size)
    : model_(model),
      generation_(generation),
      input_template_(std::move(input_template)),
      batch_size_(batch_size == 0 ? 1 : batch_size) {}

std::vector<Prediction> ModelPredictor::predict(const corpus::DatasetSplit& split) {
  auto examples = to_examples(split, input_template_);
  for (auto& ex : examples) ex.target.reset();
  const std::size_t n = examples.size();
  const std::size_t batches = (n + batch_size_ - 1) / batch_size_;
  std::vector<Prediction> out(n);
  const auto opts = model_.head_options();
  std::exception_ptr error;

  auto run_batch = [&](std::size_t bi) {
    ag::NoGradGuard no_grad;
    const std::size_t b = bi * batch_size_;
    const std::size_t e = std::min(n, b + batch_size_);
    const std::span<const backbone::TextExample> chunk(examples.data() + b, e - b);
    const auto batch = backbone::make_batch(model_.tokenizer(), chunk, model_.config());
    const auto enc = model_.backend().encode(batch, {});
    const auto pooled = backbone::pool(enc->hidden, enc->mask, enc->batch, enc->len, opts.pooling);
    const auto scores =
        backbone::classify(pooled, model_.head(), opts.dropout, {}, opts.final_activation);
    const auto ids = model_.backend().generate(*enc, generation_);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      out[b + i].label = argmax_row(scores->value, i, scores->cols);
      out[b + i].summary = model_.tokenizer().decode(ids[i]);
    }
  };

  const auto nb = static_cast<std::ptrdiff_t>(batches);
  if (kernels::default_policy() == kernels::Policy::kParallel && batches > 1) {
#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t bi = 0; bi < nb; ++bi) {
      try {
        run_batch(static_cast<std::size_t>(bi));
      } catch (...) {
#pragma omp critical(mtfc_predict_error)
        if (!error) error = std::current_exception();
      }
    }
  } else {
    for (std::size_t bi = 0; bi < batches; ++bi) run_batch(bi);
  }
  if (error) std::rethrow_exception(error);
  return out;
}

EvalReport evaluate(const corpus::DatasetSplit& split, Predictor& predictor,
                    const EvalConfig& config) {
  if (split.empty()) throw EmptyDatasetError("evaluation split is empty");
  EvalReport report;
  report.records = split.size();
  report.predictions = predictor.predict(split);
  if (report.predictions.size() != split.size())
    throw ContractError("predictor returned " + std::to_string(report.predictions.size()) +
                        " predictions for " + std::to_string(split.size()) + " records");

  std::vector<std::string> candidates, references;
  std::vector<int> preds, golds;
  for (std::size_t i = 0; i < split.size(); ++i) {
    const auto& r = split.records[i];
    if (r.gold_summary) {
      candidates.push_back(report.predictions[i].summary);
      references.push_back(*r.gold_summary);
    } else {
      ++report.rouge_excluded;
    }
    preds.push_back(report.predictions[i].label);
    golds.push_back(r.label);
  }
  report.rouge = metrics::corpus_rouge(candidates, references, config.rouge);
  report.confusion = metrics::confusion_matrix(preds, golds, split.label_space);
  report.classification = metrics::classification_report(report.confusion);
  if (const auto nei = split.label_space.nei_index()) {
    bool any = false;
    for (int g : golds) any = any || g != *nei;
    if (any) report.binary_accuracy = metrics::binary_accuracy_excluding(preds, golds, *nei);
  }
  return report;
}

json to_json(const EvalReport& r) {
  json j{{"records", r.records},
         {"rouge", metrics::to_json(r.rouge)},
         {"rouge_excluded", r.rouge_excluded},
         {"confusion", metrics::to_json(r.confusion)},
         {"classification", metrics::to_json(r.classification)}};
  j["binary_accuracy"] = r.binary_accuracy ? json(*r.binary_accuracy) : json(nullptr);
  return j;
}

TeacherForcedStats teacher_forced_eval(const corpus::DatasetSplit& split, MultiTaskModel& model,
                                       const TrainConfig& config) {
  if (split.empty()) throw EmptyDatasetError("split is empty");
  ag::NoGradGuard no_grad;
  const auto examples = to_examples(split, config.input_template);
  const auto weights = config.resolved_class_weights(model.config().num_classes);
  const auto opts = model.head_options();
  std::size_t tokens = 0, token_hits = 0, class_hits = 0;
  double summ_sum = 0.0, cl_sum = 0.0;
  const std::size_t bs = config.batch_size;
  for (std::size_t b = 0; b < examples.size(); b += bs) {
    const std::size_t e = std::min(examples.size(), b + bs);
    const std::span<const backbone::TextExample> chunk(examples.data() + b, e - b);
    const auto batch = backbone::make_batch(model.tokenizer(), chunk, model.config());
    const auto out = backbone::forward_multitask(batch, model.backend(), model.head(), opts, {});
    std::size_t batch_tokens = 0;
    if (batch.has_targets()) {
      const std::size_t v = out.summary_logits->cols;
      for (std::size_t k = 0; k < batch.target_ids.size(); ++k) {
        if (!batch.target_mask[k]) continue;
        ++batch_tokens;
        if (argmax_row(out.summary_logits->value, k, v) == batch.target_ids[k]) ++token_hits;
      }
      if (batch_tokens > 0)
        summ_sum += objective::token_ce(out.summary_logits->value, v, batch.target_ids,
                                        Tokenizer::kPad) *
                    static_cast<double>(batch_tokens);
    }
    tokens += batch_tokens;
    for (std::size_t i = 0; i < chunk.size(); ++i)
      if (argmax_row(out.class_scores->value, i, out.class_scores->cols) == batch.labels[i])
        ++class_hits;
    cl_sum += objective::class_weighted_ce(out.class_scores->value, out.class_scores->cols,
                                           batch.labels, weights, opts.final_activation)
                  .mean *
              static_cast<double>(chunk.size());
  }
  TeacherForcedStats s;
  s.token_accuracy = tokens ? static_cast<double>(token_hits) / static_cast<double>(tokens) : 0.0;
  s.class_accuracy = static_cast<double>(class_hits) / static_cast<double>(examples.size());
  s.loss_summ = tokens ? summ_sum / static_cast<double>(tokens) : 0.0;
  s.loss_cl = cl_sum / static_cast<double>(examples.size());
  return s;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kBlobMagic[8] = {'M', 'T', 'F', 'C', 'T', 'N', 'S', '1'};
constexpr std::uint32_t kBlobVersion = 1;

std::uint64_t fnv1a(const char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
void put(std::string& buf, const T& v) {
  buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& buf, std::size_t limit, std::string path)
      : buf_(buf), limit_(limit), path_(std::move(path)) {}

  template <typename T>
  T get() {
    T v;
    need(sizeof(T));
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return limit_ - pos_; }

 private:
  void need(std::size_t n) const {
    if (n > limit_ - pos_) throw SchemaError(path_ + ": truncated tensor blob");
  }
  const std::string& buf_;
  std::size_t limit_;
  std::size_t pos_ = 0;
  std::string path_;
};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

json read_json_file(const std::filesystem::path& path) {
  const auto text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

}  // namespace

void write_tensor_blob(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::string buf(kBlobMagic, sizeof(kBlobMagic));
  put(buf, kBlobVersion);
  put(buf, static_cast<std::uint64_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (t.values.size() != t.rows * t.cols)
      throw ContractError("tensor " + t.name + " has inconsistent shape");
    put(buf, static_cast<std::uint32_t>(t.name.size()));
    buf += t.name;
    put(buf, static_cast<std::uint64_t>(t.rows));
    put(buf, static_cast<std::uint64_t>(t.cols));
    buf.append(reinterpret_cast<const char*>(t.values.data()), t.values.size() * sizeof(double));
  }
  put(buf, fnv1a(buf.data(), buf.size()));
  write_file(path, buf);
}

std::vector<NamedTensor> read_tensor_blob(const std::filesystem::path& path) {
  const std::string buf = read_file(path);
  const std::string where = path.string();
  if (buf.size() < sizeof(kBlobMagic) + 4 + 8 + 8) throw SchemaError(where + ": truncated tensor blob");
  if (std::memcmp(buf.data(), kBlobMagic, sizeof(kBlobMagic)) != 0)
    throw SchemaError(where + ": not a tensor blob");
  const std::size_t body = buf.size() - sizeof(std::uint64_t);
  std::uint64_t stored = 0;
  std::memcpy(&stored, buf.data() + body, sizeof(stored));
  if (stored != fnv1a(buf.data(), body)) throw SchemaError(where + ": checksum mismatch");

  Reader r(buf, body, where);
  r.bytes(sizeof(kBlobMagic));
  const auto version = r.get<std::uint32_t>();
  if (version != kBlobVersion)
    throw SchemaError(where + ": unsupported blob version " + std::to_string(version));
  const auto count = r.get<std::uint64_t>();
  std::vector<NamedTensor> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.bytes(r.get<std::uint32_t>());
    t.rows = r.get<std::uint64_t>();
    t.cols = r.get<std::uint64_t>();
    if (t.cols != 0 && t.rows > r.remaining() / sizeof(double) / t.cols)
      throw SchemaError(where + ": tensor " + t.name + " overruns the blob");
    t.values.resize(t.rows * t.cols);
    const auto raw = r.bytes(t.values.size() * sizeof(double));
    std::memcpy(t.values.data(), raw.data(), raw.size());
    out.push_back(std::move(t));
  }
  if (r.remaining() != 0) throw SchemaError(where + ": trailing bytes in tensor blob");
  return out;
}

Checkpoint make_checkpoint(const MultiTaskModel& model, const TrainConfig& config,
                           const TrainResult& result, json metrics) {
  Checkpoint c;
  c.backbone = model.config();
  c.train = config;
  c.tokenizer = model.tokenizer();
  c.state = result.state;
  c.metrics = std::move(metrics);
  for (const auto& p : model.parameters()) c.params.push_back({p->name, p->rows, p->cols, p->value});
  if (!result.optimizer.m.empty()) c.optimizer = result.optimizer;
  return c;
}

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& c) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  json cfg{{"format", "mtfc-checkpoint"},
           {"version", kCheckpointVersion},
           {"backbone", backbone::to_json(c.backbone)},
           {"train", to_json(c.train)},
           {"state", to_json(c.state)},
           {"metrics", c.metrics}};
  write_tensor_blob(dir / "params.bin", c.params);
  if (c.optimizer) {
    cfg["optimizer"] = {{"t", c.optimizer->t}, {"tensors", c.optimizer->m.size()}};
    std::vector<NamedTensor> moments;
    for (std::size_t i = 0; i < c.optimizer->m.size(); ++i) {
      moments.push_back({"m." + std::to_string(i), 1, c.optimizer->m[i].size(), c.optimizer->m[i]});
      moments.push_back({"v." + std::to_string(i), 1, c.optimizer->v[i].size(), c.optimizer->v[i]});
    }
    write_tensor_blob(dir / "optimizer.bin", moments);
  } else {
    std::filesystem::remove(dir / "optimizer.bin", ec);
  }
  write_file(dir / "tokenizer.json", c.tokenizer.to_json().dump(2) + "\n");
  write_file(dir / "config.json", cfg.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir,
                           std::optional<std::size_t> expected_num_classes) {
  if (!std::filesystem::is_directory(dir)) throw IoError("no checkpoint at " + dir.string());
  const json cfg = read_json_file(dir / "config.json");
  if (!cfg.is_object() || cfg.value("format", std::string()) != "mtfc-checkpoint")
    throw SchemaError(dir.string() + ": not an mtfc checkpoint");
  const int version = cfg.value("version", -1);
  if (version != kCheckpointVersion)
    throw SchemaError(dir.string() + ": checkpoint version " + std::to_string(version) +
                      ", expected " + std::to_string(kCheckpointVersion));
  Checkpoint c;
  try {
    c.backbone = backbone::backbone_config_from_json(cfg.at("backbone"));
    c.train = train_config_from_json(cfg.at("train"));
    c.state = train_state_from_json(cfg.at("state"));
    c.metrics = cfg.value("metrics", json::object());
  } catch (const json::exception& e) {
    throw SchemaError(dir.string() + ": " + e.what());
  }
  if (expected_num_classes && *expected_num_classes != c.backbone.num_classes)
    throw SchemaError("checkpoint has " + std::to_string(c.backbone.num_classes) +
                      " classes, configuration expects " + std::to_string(*expected_num_classes));
  try {
    c.tokenizer = Tokenizer::from_json(read_json_file(dir / "tokenizer.json"));
  } catch (const json::exception& e) {
    throw SchemaError(dir.string() + "/tokenizer.json: " + e.what());
  }
  c.params = read_tensor_blob(dir / "params.bin");
  if (auto it = cfg.find("optimizer"); it != cfg.end()) {
    const auto moments = read_tensor_blob(dir / "optimizer.bin");
    const auto count = it->at("tensors").get<std::size_t>();
    if (moments.size() != 2 * count) throw SchemaError("optimizer blob has the wrong tensor count");
    AdamState s;
    s.t = it->at("t").get<std::size_t>();
    for (std::size_t i = 0; i < count; ++i) {
      s.m.push_back(moments[2 * i].values);
      s.v.push_back(moments[2 * i + 1].values);
    }
    c.optimizer = std::move(s);
  }
  return c;
}

MultiTaskModel model_from_checkpoint(const Checkpoint& c) {
  MultiTaskModel model(c.backbone, c.tokenizer, 0);
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : c.params)
    if (!by_name.emplace(t.name, &t).second)
      throw SchemaError("duplicate parameter " + t.name + " in checkpoint");
  const auto params = model.parameters();
  if (params.size() != by_name.size())
    throw SchemaError("checkpoint has " + std::to_string(by_name.size()) + " parameters, model has " +
                      std::to_string(params.size()));
  for (const auto& p : params) {
    const auto it = by_name.find(p->name);
    if (it == by_name.end()) throw SchemaError("checkpoint is missing parameter " + p->name);
    const auto& t = *it->second;
    if (t.rows != p->rows || t.cols != p->cols)
      throw SchemaError("shape mismatch for parameter " + p->name);
    p->value = t.values;
  }
  return model;
}

}  // namespace mtfc::trainer
