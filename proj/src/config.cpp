#include "mtfc/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "mtfc/errors.hpp"

namespace mtfc::config {

using json = nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& block) {
  if (!j.is_object()) throw SchemaError(block + " must be an object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw SchemaError("unknown key '" + k + "' in " + block);
}

std::set<std::string> keys_of(const json& j) {
  std::set<std::string> out;
  for (const auto& [k, v] : j.items()) out.insert(k);
  return out;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_relative() && !base.empty()) path = base / path;
  return std::filesystem::absolute(path).lexically_normal();
}

const std::set<std::string> kObjectiveOwnedTrainKeys = {
    "loss_mode", "static_weights", "class_weights", "initial_uncertainty", "input_template"};

corpus::LabelSpace default_labels(corpus::Dataset d) {
  return d == corpus::Dataset::kPubhealth ? corpus::LabelSpace::pubhealth()
                                          : corpus::LabelSpace::fever();
}

corpus::ColumnMapping default_mapping(corpus::Dataset d) {
  return d == corpus::Dataset::kPubhealth ? corpus::ColumnMapping::pubhealth_default()
                                          : corpus::ColumnMapping::efever_default();
}

SourceFormat default_format(corpus::Dataset d) {
  return d == corpus::Dataset::kPubhealth ? SourceFormat::kTsv : SourceFormat::kJsonl;
}

std::vector<std::string> split_path(std::string_view path) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : path) {
    if (c == '.') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  parts.push_back(cur);
  for (const auto& p : parts)
    if (p.empty()) throw SchemaError("malformed config path '" + std::string(path) + "'");
  return parts;
}

}  // namespace

std::string to_string(SourceFormat f) {
  switch (f) {
    case SourceFormat::kTsv: return "tsv";
    case SourceFormat::kJsonl: return "jsonl";
    case SourceFormat::kCanonical: return "canonical";
  }
  return "tsv";
}

SourceFormat source_format_from_string(std::string_view s) {
  if (s == "tsv") return SourceFormat::kTsv;
  if (s == "jsonl") return SourceFormat::kJsonl;
  if (s == "canonical") return SourceFormat::kCanonical;
  throw SchemaError("unknown dataset format '" + std::string(s) + "'");
}

std::vector<double> RunConfig::class_weight_vector() const {
  std::vector<double> out(dataset.labels.size(), 1.0);
  for (const auto& [label, w] : objective.class_weights) {
    const auto idx = dataset.labels.index_of(label);
    if (!idx) throw SchemaError("class weight for unknown label '" + label + "'");
    out[static_cast<std::size_t>(*idx)] = w;
  }
  return out;
}

trainer::TrainConfig RunConfig::resolved_train_config() const {
  auto t = train;
  t.loss_mode = objective.loss_mode;
  t.static_weights = objective.static_weights;
  t.class_weights = class_weight_vector();
  t.initial_uncertainty = objective.initial_uncertainty;
  t.input_template = evidence.input_template;
  return t;
}

json to_json(const RunConfig& c) {
  json paths = json::object();
  for (const auto& [split, p] : c.dataset.paths) paths[corpus::to_string(split)] = p.string();
  json weights = json::object();
  const auto vec = c.class_weight_vector();
  for (std::size_t i = 0; i < vec.size(); ++i)
    weights[c.dataset.labels.label(static_cast<int>(i))] = vec[i];

  json model{{"tokenizer",
              {{"min_count", c.model.tokenizer_min_count}, {"max_size", c.model.tokenizer_max_size}}},
             {"generation", backbone::to_json(c.model.generation)}};
  if (c.model.backbone) model["backbone"] = backbone::to_json(*c.model.backbone);
  if (c.model.checkpoint) model["checkpoint"] = c.model.checkpoint->string();

  json train = trainer::to_json(c.train);
  for (const auto& k : kObjectiveOwnedTrainKeys) train.erase(k);

  return json{
      {"dataset",
       {{"name", corpus::to_string(c.dataset.name)},
        {"format", to_string(c.dataset.format)},
        {"paths", paths},
        {"mapping", corpus::to_json(c.dataset.mapping)},
        {"labels", corpus::to_json(c.dataset.labels)},
        {"small_variant", c.dataset.small_variant}}},
      {"evidence",
       {{"top_k", c.evidence.top_k},
        {"vocabulary",
         c.evidence.vocabulary == evidence::VocabularyPolicy::Mode::kFitted ? "fitted" : "hashed"},
        {"hash_dimension", c.evidence.hash_dimension},
        {"input_template", c.evidence.input_template}}},
      {"model", model},
      {"objective",
       {{"loss_mode", objective::to_string(c.objective.loss_mode)},
        {"static_weights",
         {{"summary", c.objective.static_weights.summary},
          {"classification", c.objective.static_weights.classification}}},
        {"class_weights", weights},
        {"initial_uncertainty",
         {{"log_sigma_cl", c.objective.initial_uncertainty.log_sigma_cl},
          {"log_sigma_summ", c.objective.initial_uncertainty.log_sigma_summ}}}}},
      {"train", train},
      {"output",
       {{"dir", c.output.dir.string()},
        {"rouge_stem", c.output.rouge_stem},
        {"eval_split", corpus::to_string(c.output.eval_split)},
        {"decimal_comma", c.output.decimal_comma}}}};
}

RunConfig run_config_from_json(const json& j, const std::filesystem::path& base_dir) {
  try {
    check_keys(j, {"dataset", "evidence", "model", "objective", "train", "output"}, "config");
    RunConfig c;

    const json ds = j.value("dataset", json::object());
    check_keys(ds, {"name", "format", "paths", "mapping", "labels", "small_variant"}, "dataset");
    c.dataset.name = corpus::dataset_from_string(ds.value("name", std::string("pubhealth")));
    c.dataset.format = ds.contains("format")
                           ? source_format_from_string(ds.at("format").get<std::string>())
                           : default_format(c.dataset.name);
    const json paths = ds.value("paths", json::object());
    for (const auto& [k, v] : paths.items())
      c.dataset.paths[corpus::split_from_string(k)] = resolve(base_dir, v.get<std::string>());
    c.dataset.mapping = ds.contains("mapping") ? corpus::column_mapping_from_json(ds.at("mapping"))
                                               : default_mapping(c.dataset.name);
    c.dataset.mapping.validate();
    c.dataset.labels = ds.contains("labels") ? corpus::label_space_from_json(ds.at("labels"))
                                             : default_labels(c.dataset.name);
    c.dataset.small_variant = ds.value("small_variant", false);

    const json ev = j.value("evidence", json::object());
    check_keys(ev, {"top_k", "vocabulary", "hash_dimension", "input_template"}, "evidence");
    c.evidence.top_k = ev.value("top_k", c.evidence.top_k);
    if (c.evidence.top_k == 0) throw SchemaError("evidence.top_k must be >= 1");
    const auto vocab = ev.value("vocabulary", std::string("fitted"));
    if (vocab == "fitted") c.evidence.vocabulary = evidence::VocabularyPolicy::Mode::kFitted;
    else if (vocab == "hashed") c.evidence.vocabulary = evidence::VocabularyPolicy::Mode::kHashed;
    else throw SchemaError("unknown evidence.vocabulary '" + vocab + "'");
    c.evidence.hash_dimension = ev.value("hash_dimension", c.evidence.hash_dimension);
    c.evidence.input_template = ev.value("input_template", c.evidence.input_template);

    const json md = j.value("model", json::object());
    check_keys(md, {"backbone", "checkpoint", "tokenizer", "generation"}, "model");
    if (md.contains("backbone") == md.contains("checkpoint"))
      throw SchemaError("model block needs exactly one of 'backbone' or 'checkpoint'");
    if (md.contains("backbone")) {
      json bj = md.at("backbone");
      check_keys(bj, keys_of(backbone::to_json(backbone::BackboneConfig{})), "model.backbone");
      if (!bj.contains("num_classes")) bj["num_classes"] = c.dataset.labels.size();
      c.model.backbone = backbone::backbone_config_from_json(bj);
      if (c.model.backbone->num_classes != c.dataset.labels.size())
        throw SchemaError("model.backbone.num_classes does not match the label space");
    } else {
      c.model.checkpoint = resolve(base_dir, md.at("checkpoint").get<std::string>());
    }
    if (md.contains("tokenizer")) {
      const json& tj = md.at("tokenizer");
      check_keys(tj, {"min_count", "max_size"}, "model.tokenizer");
      c.model.tokenizer_min_count = tj.value("min_count", c.model.tokenizer_min_count);
      c.model.tokenizer_max_size = tj.value("max_size", c.model.tokenizer_max_size);
    }
    if (md.contains("generation"))
      c.model.generation = backbone::generation_config_from_json(md.at("generation"));

    const json ob = j.value("objective", json::object());
    check_keys(ob, {"loss_mode", "static_weights", "class_weights", "initial_uncertainty"},
               "objective");
    c.objective.loss_mode =
        objective::loss_mode_from_string(ob.value("loss_mode", std::string("static")));
    if (ob.contains("static_weights")) {
      const json& sw = ob.at("static_weights");
      check_keys(sw, {"summary", "classification"}, "objective.static_weights");
      c.objective.static_weights.summary = sw.value("summary", 0.5);
      c.objective.static_weights.classification = sw.value("classification", 0.5);
    }
    try {
      c.objective.static_weights.validate();
    } catch (const ContractError& e) {
      throw SchemaError(std::string("objective.static_weights: ") + e.what());
    }
    const json weights = ob.value("class_weights", json::object());
    for (const auto& [label, w] : weights.items())
      c.objective.class_weights[label] = w.get<double>();
    if (ob.contains("initial_uncertainty")) {
      const json& u = ob.at("initial_uncertainty");
      check_keys(u, {"log_sigma_cl", "log_sigma_summ"}, "objective.initial_uncertainty");
      c.objective.initial_uncertainty.log_sigma_cl = u.value("log_sigma_cl", 0.0);
      c.objective.initial_uncertainty.log_sigma_summ = u.value("log_sigma_summ", 0.0);
    }

    const json tr = j.value("train", json::object());
    for (const auto& k : kObjectiveOwnedTrainKeys)
      if (tr.contains(k)) throw SchemaError("train." + k + " belongs in the objective/evidence block");
    auto allowed = keys_of(trainer::to_json(trainer::TrainConfig{}));
    for (const auto& k : kObjectiveOwnedTrainKeys) allowed.erase(k);
    check_keys(tr, allowed, "train");
    c.train = trainer::train_config_from_json(tr);
    if (!c.train.checkpoint_dir.empty())
      c.train.checkpoint_dir = resolve(base_dir, c.train.checkpoint_dir).string();

    const json out = j.value("output", json::object());
    check_keys(out, {"dir", "rouge_stem", "eval_split", "decimal_comma"}, "output");
    c.output.dir = resolve(base_dir, out.value("dir", std::string("out")));
    c.output.rouge_stem = out.value("rouge_stem", false);
    c.output.eval_split = corpus::split_from_string(out.value("eval_split", std::string("test")));
    c.output.decimal_comma = out.value("decimal_comma", false);

    c.class_weight_vector();  // unknown labels
    c.resolved_train_config().validate();
    return c;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("bad run config: ") + e.what());
  }
}

json read_config_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return json::parse(ss.str());
  } catch (const json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return run_config_from_json(read_config_json(path), path.parent_path());
}

json normalize(const json& raw, const std::filesystem::path& base_dir) {
  return to_json(run_config_from_json(raw, base_dir));
}

const json& get_path(const json& j, std::string_view path) {
  const json* cur = &j;
  for (const auto& part : split_path(path)) {
    if (!cur->is_object() || !cur->contains(part))
      throw SchemaError("config path '" + std::string(path) + "' does not exist");
    cur = &cur->at(part);
  }
  return *cur;
}

bool has_path(const json& j, std::string_view path) {
  try {
    get_path(j, path);
    return true;
  } catch (const SchemaError&) {
    return false;
  }
}

void set_path(json& j, std::string_view path, json value) {
  json* cur = &j;
  for (const auto& part : split_path(path)) {
    if (!cur->is_object() || !cur->contains(part))
      throw SchemaError("config path '" + std::string(path) + "' does not exist");
    cur = &cur->at(part);
  }
  *cur = std::move(value);
}

void check_paths_exist(const RunConfig& c) {
  for (const auto& [split, p] : c.dataset.paths)
    if (!std::filesystem::exists(p))
      throw IoError(corpus::to_string(split) + " data not found: " + p.string());
  if (c.model.checkpoint && !std::filesystem::exists(*c.model.checkpoint))
    throw IoError("checkpoint not found: " + c.model.checkpoint->string());
}

}  // namespace mtfc::config
