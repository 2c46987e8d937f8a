// Acceptance gates. Prints one PASS/FAIL line per criterion and exits
// nonzero when any gating criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "mtfc/backbone.hpp"
#include "mtfc/corpus.hpp"
#include "mtfc/metrics.hpp"
#include "mtfc/objective.hpp"
#include "mtfc/pipeline.hpp"
#include "mtfc/sweep.hpp"
#include "mtfc/trainer.hpp"

namespace {

using namespace mtfc;
using nlohmann::json;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

std::string fixture(const std::string& name) { return std::string(MTFC_FIXTURE_DIR) + "/" + name; }

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::string detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

// ---------------------------------------------------------------------------

double oracle_rouge_n_f(const std::vector<std::string>& c, const std::vector<std::string>& r,
                        std::size_t n) {
  if (c.size() < n || r.size() < n) return 0.0;
  std::vector<std::vector<std::string>> cg, rg;
  for (std::size_t i = 0; i + n <= c.size(); ++i) cg.emplace_back(c.begin() + i, c.begin() + i + n);
  for (std::size_t i = 0; i + n <= r.size(); ++i) rg.emplace_back(r.begin() + i, r.begin() + i + n);
  std::vector<bool> used(rg.size(), false);
  std::size_t hits = 0;
  for (const auto& g : cg)
    for (std::size_t j = 0; j < rg.size(); ++j)
      if (!used[j] && rg[j] == g) {
        used[j] = true;
        ++hits;
        break;
      }
  const double p = double(hits) / double(cg.size()), rc = double(hits) / double(rg.size());
  return p + rc > 0 ? 2 * p * rc / (p + rc) : 0.0;
}

bool is_subsequence(const std::vector<std::string>& s, const std::vector<std::string>& of) {
  std::size_t j = 0;
  for (const auto& t : of)
    if (j < s.size() && s[j] == t) ++j;
  return j == s.size();
}

double oracle_rouge_l_f(const std::vector<std::string>& c, const std::vector<std::string>& r) {
  if (c.empty() || r.empty()) return 0.0;
  std::size_t best = 0;
  for (std::uint32_t mask = 0; mask < (1u << c.size()); ++mask) {
    std::vector<std::string> sub;
    for (std::size_t i = 0; i < c.size(); ++i)
      if (mask >> i & 1u) sub.push_back(c[i]);
    if (sub.size() > best && is_subsequence(sub, r)) best = sub.size();
  }
  const double p = double(best) / double(c.size()), rc = double(best) / double(r.size());
  return p + rc > 0 ? 2 * p * rc / (p + rc) : 0.0;
}

Outcome ac1_rouge_oracles() {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> word(0, 9), len(1, 12);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<std::string> c(len(rng)), r(len(rng));
    for (auto& t : c) t = "w" + std::to_string(word(rng));
    for (auto& t : r) t = "w" + std::to_string(word(rng));
    worst = std::max(worst, std::abs(metrics::rouge_n(c, r, 1).f_measure - oracle_rouge_n_f(c, r, 1)));
    worst = std::max(worst, std::abs(metrics::rouge_n(c, r, 2).f_measure - oracle_rouge_n_f(c, r, 2)));
    worst = std::max(worst, std::abs(metrics::rouge_l(c, r).f_measure - oracle_rouge_l_f(c, r)));
  }
  const double secs = seconds_since(t0);
  o.require(worst < 1e-12, "max |delta| " + num(worst));
  o.require(secs < 30.0, "runtime " + num(secs) + " s");
  o.detail += (o.detail.empty() ? "" : "; ") + std::string("1000 pairs, max |delta| ") +
              num(worst) + ", " + num(secs) + " s";
  return o;
}

// ---------------------------------------------------------------------------

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

Outcome ac2_uncertainty_gradients() {
  Outcome o;
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> loss(0.05, 5.0), s(-2.0, 2.0);
  const double h = 1e-5;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const double ls = loss(rng), lc = loss(rng);
    const objective::UncertaintyState st{s(rng), s(rng)};
    const auto v = objective::combine_uncertainty(ls, lc, st);
    auto f = [&](double a, double b, double sc, double ss) {
      return objective::combine_uncertainty(a, b, {sc, ss}).total;
    };
    const double n_ls = (f(ls + h, lc, st.log_sigma_cl, st.log_sigma_summ) -
                         f(ls - h, lc, st.log_sigma_cl, st.log_sigma_summ)) / (2 * h);
    const double n_lc = (f(ls, lc + h, st.log_sigma_cl, st.log_sigma_summ) -
                         f(ls, lc - h, st.log_sigma_cl, st.log_sigma_summ)) / (2 * h);
    const double n_sc = (f(ls, lc, st.log_sigma_cl + h, st.log_sigma_summ) -
                         f(ls, lc, st.log_sigma_cl - h, st.log_sigma_summ)) / (2 * h);
    const double n_ss = (f(ls, lc, st.log_sigma_cl, st.log_sigma_summ + h) -
                         f(ls, lc, st.log_sigma_cl, st.log_sigma_summ - h)) / (2 * h);
    worst = std::max({worst, rel_err(v.d_loss_summ, n_ls), rel_err(v.d_loss_cl, n_lc),
                      rel_err(v.d_log_sigma_cl, n_sc), rel_err(v.d_log_sigma_summ, n_ss)});
  }
  o.require(worst < 1e-4, "gradient rel. error " + num(worst));

  // Minimize over s by golden-section search on the scalar routine; the
  // minimizer satisfies sigma^2 = exp(2 s) = L.
  for (double L : {0.5, 1.0, 4.0}) {
    auto g = [&](double sv) { return objective::combine_uncertainty(0.0, L, {sv, 0.0}).total; };
    double a = -5.0, b = 5.0;
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    for (int it = 0; it < 200; ++it) {
      const double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
      (g(x1) < g(x2) ? b : a) = g(x1) < g(x2) ? x2 : x1;
    }
    const double sigma2 = std::exp(a + b);
    o.require(std::abs(sigma2 - L) < 1e-3,
              "sigma*^2 " + num(sigma2) + " for L " + num(L));
  }
  if (o.pass) o.detail = "100 draws, max rel. error " + num(worst) + "; sigma*^2 = L";
  return o;
}

// ---------------------------------------------------------------------------

Outcome ac3_loss_algebra() {
  Outcome o;
  o.require(objective::combine_static(2.0, 4.0, {0.5, 0.5}) == 3.0, "combine_static((0.5,0.5),2,4) != 3");
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> loss(0.0, 10.0);
  for (int i = 0; i < 50; ++i) {
    const double a = loss(rng), b = loss(rng);
    if (objective::combine_uncertainty(a, b, {}).total != objective::combine_static(a, b, {0.5, 0.5})) {
      o.require(false, "uncertainty at s=0 differs from static");
      break;
    }
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 6, c = 4;
    std::vector<double> scores(n * c);
    std::vector<int> gold(n);
    for (auto& s : scores) s = unit(rng);
    for (auto& g : gold) g = static_cast<int>(rng() % c);
    double plain = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double mx = scores[i * c], z = 0.0;
      for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, scores[i * c + k]);
      for (std::size_t k = 0; k < c; ++k) z += std::exp(scores[i * c + k] - mx);
      plain += -(scores[i * c + gold[i]] - mx - std::log(z));
    }
    plain /= double(n);
    const auto w = objective::class_weighted_ce(scores, c, gold, objective::ClassWeights::uniform(c),
                                                objective::FinalActivation::kSigmoid);
    worst = std::max(worst, std::abs(w.mean - plain));
  }
  o.require(worst < 1e-9, "unit-weight CE differs by " + num(worst));
  if (o.pass) o.detail = "static = 3, s=0 equals static on 50 pairs, unit-weight CE |delta| " + num(worst);
  return o;
}

// ---------------------------------------------------------------------------

class CountingBackend final : public backbone::ModelBackend {
 public:
  explicit CountingBackend(backbone::ModelBackend& inner) : inner_(inner) {}
  std::shared_ptr<const backbone::EncoderOutput> encode(const backbone::EncodedBatch& b,
                                                        const backbone::ForwardContext& ctx) override {
    ++encode_calls;
    return inner_.encode(b, ctx);
  }
  ag::Var decode_logits(const backbone::EncoderOutput& e, std::span<const int> ids, std::size_t len,
                        const backbone::ForwardContext& ctx) override {
    return inner_.decode_logits(e, ids, len, ctx);
  }
  std::vector<ag::Var> parameters() const override { return inner_.parameters(); }
  std::size_t d_model() const override { return inner_.d_model(); }
  std::size_t vocab_size() const override { return inner_.vocab_size(); }
  std::size_t max_target_len() const override { return inner_.max_target_len(); }
  int encode_calls = 0;

 private:
  backbone::ModelBackend& inner_;
};

std::vector<backbone::TextExample> invariant_examples() {
  return {{"summarize: claim: vitamin c cures colds evidence: trials show no cure",
           std::string("vitamin c does not cure colds"), 1},
          {"summarize: claim: walking lowers blood pressure evidence: a trial found lower pressure",
           std::string("walking lowers blood pressure"), 3},
          {"summarize: claim: honey treats cough evidence: some studies disagree",
           std::string("evidence is mixed"), 2}};
}

backbone::BackboneConfig test_backbone(std::size_t vocab) {
  backbone::BackboneConfig c;
  c.vocab_size = vocab;
  c.d_model = 64;
  c.encoder_layers = 2;
  c.decoder_layers = 2;
  c.attention_heads = 4;
  c.max_source_len = 32;
  c.max_target_len = 12;
  c.classifier_hidden_dim = 32;
  c.num_classes = 4;
  c.dropout = 0.0;
  return c;
}

double grad_norm(const std::vector<ag::Var>& params) {
  double s = 0.0;
  for (const auto& p : params)
    for (double g : p->grad) s += g * g;
  return std::sqrt(s);
}

Outcome ac4_shared_encoder() {
  Outcome o;
  const auto t0 = Clock::now();
  const auto ex = invariant_examples();
  std::vector<std::string> texts;
  for (const auto& e : ex) {
    texts.push_back(e.source);
    texts.push_back(*e.target);
  }
  const auto tok = Tokenizer::build(texts);
  const auto cfg = test_backbone(tok.size());
  std::mt19937_64 rng(404);
  backbone::TinyTransformer model(cfg, rng);
  backbone::ClassifierHead head(cfg.d_model, cfg.classifier_hidden_dim, cfg.num_classes, rng);
  const auto batch = backbone::make_batch(tok, ex, cfg);
  const std::vector<int> targets(batch.target_ids);

  CountingBackend counting(model);
  {
    ag::NoGradGuard g;
    backbone::forward_multitask(batch, counting, head, {}, {});
  }
  o.require(counting.encode_calls == 1, "encode calls " + std::to_string(counting.encode_calls));

  const objective::ClassWeights cw({1, 1, 2.5, 7});
  auto loss = [&](objective::StaticWeights w) {
    const auto out = backbone::forward_multitask(batch, model, head, {}, {});
    auto ls = objective::token_ce(out.summary_logits, targets, Tokenizer::kPad);
    auto lc = objective::class_weighted_ce(out.class_scores, batch.labels, cw,
                                           objective::FinalActivation::kSigmoid);
    return objective::combine_static(ls, lc, w);
  };
  auto zero = [&] {
    for (const auto& p : model.parameters()) std::fill(p->grad.begin(), p->grad.end(), 0.0);
    for (const auto& p : head.parameters()) std::fill(p->grad.begin(), p->grad.end(), 0.0);
  };
  std::vector<ag::Var> encoder;
  for (const auto& p : model.encoder_parameters())
    if (p->name.rfind("encoder.", 0) == 0) encoder.push_back(p);

  zero();
  ag::backward(loss({1.0, 0.0}));
  o.require(grad_norm(head.parameters()) == 0.0, "head gradient under w=(1,0)");
  o.require(grad_norm(encoder) > 0.0, "no encoder gradient under w=(1,0)");
  zero();
  ag::backward(loss({0.0, 1.0}));
  o.require(grad_norm(model.decoder_parameters()) == 0.0, "decoder gradient under w=(0,1)");
  o.require(grad_norm(encoder) > 0.0, "no encoder gradient under w=(0,1)");

  zero();
  ag::backward(loss({0.5, 0.5}));
  auto params = model.parameters();
  for (const auto& p : head.parameters()) params.push_back(p);
  std::mt19937_64 pick(405);
  double worst = 0.0;
  const double h = 1e-6;
  for (int k = 0; k < 20; ++k) {
    const auto& p = params[pick() % params.size()];
    const std::size_t i = pick() % p->value.size();
    const double orig = p->value[i];
    double up, down;
    {
      ag::NoGradGuard g;
      p->value[i] = orig + h;
      up = loss({0.5, 0.5})->scalar();
      p->value[i] = orig - h;
      down = loss({0.5, 0.5})->scalar();
    }
    p->value[i] = orig;
    const double num = (up - down) / (2 * h);
    const double err = std::abs(p->grad[i] - num) / std::max(std::abs(num), 1e-6);
    // Entries whose gradient is numerically zero compare absolutely.
    worst = std::max(worst, std::abs(num) < 1e-6 ? std::abs(p->grad[i] - num) : err);
  }
  o.require(worst < 1e-3, "composite gradient rel. error " + num(worst));
  const double secs = seconds_since(t0);
  o.require(secs < 120.0, "runtime " + num(secs) + " s");
  if (o.pass)
    o.detail = "1 encode/forward, zero-gradient invariants hold, 20-sample rel. error " +
               num(worst) + ", " + num(secs) + " s";
  return o;
}

// ---------------------------------------------------------------------------

corpus::DatasetSplit overfit_records() {
  corpus::DatasetSplit split;
  split.label_space = corpus::LabelSpace::pubhealth();
  const char* topics[8] = {"coffee", "sugar", "vaccines", "salt", "honey", "fluoride", "red wine", "soy"};
  const char* labels[8] = {"true", "false", "false", "true", "mixture", "unproven", "mixture", "unproven"};
  const char* summaries[4] = {"there is not enough research on", "studies found no link for",
                              "the evidence on this is mixed for", "evidence supports the claim about"};
  for (int i = 0; i < 8; ++i) {
    corpus::ClaimRecord r;
    r.id = "o" + std::to_string(i);
    r.claim = std::string(topics[i]) + " improves health";
    const int label = *split.label_space.index_of(labels[i]);
    r.label = label;
    r.evidence = {std::string("researchers studied ") + topics[i] + " in trials.",
                  std::string("the findings were ") + labels[i] + "."};
    r.gold_summary = std::string(summaries[label]) + " " + topics[i];
    split.records.push_back(std::move(r));
  }
  return split;
}

struct OverfitRun {
  trainer::TrainResult result;
  trainer::TeacherForcedStats stats;
  std::size_t exact_summaries = 0;
  std::vector<double> params;
};

OverfitRun overfit_once(const corpus::DatasetSplit& split) {
  std::vector<std::string> texts;
  for (const auto& e : trainer::to_examples(split, evidence::kDefaultInputTemplate)) {
    texts.push_back(e.source);
    texts.push_back(*e.target);
  }
  auto cfg = test_backbone(0);
  const auto tok = Tokenizer::build(texts);
  cfg.vocab_size = tok.size();
  // Sigmoid scores put a floor near 0.74 under the class loss; raw scores let
  // the total fall freely.
  cfg.classifier_final_activation = objective::FinalActivation::kNone;
  trainer::TrainConfig tc;
  tc.learning_rate = 2e-3;
  tc.batch_size = 8;
  tc.max_steps = 500;
  tc.seed = 505;
  trainer::MultiTaskModel model(cfg, tok, tc.seed);
  OverfitRun run;
  run.result = trainer::train(split, tc, model);
  run.stats = trainer::teacher_forced_eval(split, model, tc);
  backbone::GenerationConfig g;
  g.max_len = cfg.max_target_len;
  const auto ex = trainer::to_examples(split, tc.input_template);
  for (const auto& e : ex)
    if (backbone::generate_summary(e.source, model.backend(), tok, cfg, g).text == *e.target)
      ++run.exact_summaries;
  for (const auto& p : model.parameters()) run.params.insert(run.params.end(), p->value.begin(), p->value.end());
  return run;
}

Outcome ac5_overfit() {
  Outcome o;
  const auto split = overfit_records();
  const auto t0 = Clock::now();
  const auto a = overfit_once(split);
  const double secs = seconds_since(t0);
  const auto b = overfit_once(split);
  const double first = a.result.history.front().loss_total;
  const double last = a.result.history.back().loss_total;
  const double drop = 1.0 - last / first;
  o.require(a.stats.class_accuracy == 1.0, "class accuracy " + num(a.stats.class_accuracy));
  o.require(a.stats.token_accuracy >= 0.95, "token accuracy " + num(a.stats.token_accuracy));
  o.require(drop >= 0.90, "loss drop " + num(drop));
  o.require(a.result.history == b.result.history && a.params == b.params, "rerun differs");
  o.require(secs < 300.0, "runtime " + num(secs) + " s");
  std::ostringstream d;
  d << "class acc " << a.stats.class_accuracy * 100 << "%, token acc " << a.stats.token_accuracy * 100
    << "%, loss " << first << " -> " << last << " (" << drop * 100 << "% down), exact summaries "
    << a.exact_summaries << "/8, " << secs << " s per run";
  o.detail = o.pass ? d.str() : o.detail + "; " + d.str();
  return o;
}

// ---------------------------------------------------------------------------

// Rows and columns follow `names`; the matrix uses the library's class order.
metrics::ConfusionMatrix replay(const std::vector<std::vector<std::size_t>>& rows,
                                const std::vector<std::string>& names,
                                const corpus::LabelSpace& labels) {
  std::vector<int> preds, golds;
  for (std::size_t g = 0; g < rows.size(); ++g)
    for (std::size_t p = 0; p < rows[g].size(); ++p)
      for (std::size_t k = 0; k < rows[g][p]; ++k) {
        golds.push_back(*labels.index_of(names[g]));
        preds.push_back(*labels.index_of(names[p]));
      }
  return metrics::confusion_matrix(preds, golds, labels);
}

Outcome ac6_paper_fixtures() {
  Outcome o;
  std::ifstream in(fixture("pubhealth_confusions.json"));
  const auto j = json::parse(in);
  const auto labels = corpus::LabelSpace::pubhealth();
  const auto names = j.at("labels").get<std::vector<std::string>>();
  // Per-class accuracy in the fixture's class order.
  const std::vector<std::pair<std::string, std::vector<double>>> want{
      {"t5_single", {60.00, 62.89, 65.17, 79.13}},
      {"t5_multi", {57.78, 60.82, 68.16, 78.13}},
      {"flan_t5_multi", {55.56, 79.12, 43.28, 87.81}}};
  for (const auto& [key, acc] : want) {
    const auto r = metrics::classification_report(
        replay(j.at(key).get<std::vector<std::vector<std::size_t>>>(), names, labels));
    for (std::size_t c = 0; c < 4; ++c) {
      const auto& pc = r.per_class[static_cast<std::size_t>(*labels.index_of(names[c]))];
      o.require(std::abs(pc.accuracy - acc[c]) <= 0.01, key + " " + names[c] + " " + num(pc.accuracy));
    }
  }
  const auto rows = sweep::read_ledger(fixture("loss_coefficient_grid.jsonl"));
  const auto& f1 = sweep::best_by(rows, "f1_macro");
  const auto& r1 = sweep::best_by(rows, "rouge1");
  o.require(f1.metrics.at("f1_macro").get<double>() == 60.76, "best f1_macro row " + f1.id);
  o.require(r1.metrics.at("rouge1").get<double>() == 32.54, "best rouge1 row " + r1.id);
  if (o.pass) o.detail = "per-class accuracy within 0.01 for 3 models; best f1_macro 60.76, best rouge1 32.54";
  return o;
}

// ---------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path run_pipeline(const fs::path& out) {
  const json cfg{
      {"dataset",
       {{"name", "pubhealth"},
        {"paths",
         {{"train", fixture("pipeline_train.tsv")},
          {"validation", fixture("pipeline_test.tsv")},
          {"test", fixture("pipeline_test.tsv")}}}}},
      {"model",
       {{"backbone",
         {{"d_model", 32},
          {"encoder_layers", 1},
          {"decoder_layers", 1},
          {"attention_heads", 2},
          {"max_source_len", 64},
          {"max_target_len", 24},
          {"classifier_hidden_dim", 32}}},
        {"generation", {{"max_len", 24}}}}},
      {"objective", {{"class_weights", {{"mixture", 2.5}, {"unproven", 7}}}}},
      {"train", {{"learning_rate", 1e-3}, {"batch_size", 4}, {"max_steps", 50}, {"seed", 7}}},
      {"output", {{"dir", out.string()}}}};
  const auto ctx = pipeline::make_context(cfg, out.parent_path());
  pipeline::cmd_prepare(ctx);
  pipeline::cmd_select_evidence(ctx);
  pipeline::cmd_train(ctx);
  pipeline::cmd_eval(ctx);
  return ctx.out;
}

Outcome ac7_pipeline_determinism() {
  Outcome o;
  const fs::path root = fs::temp_directory_path() / ("mtfc-acceptance-" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);
  const auto a = run_pipeline(root / "a");
  const auto b = run_pipeline(root / "b");
  std::size_t compared = 0;
  for (const char* f : {"eval/report.json", "eval/report.csv", "eval/report.txt", "eval/confusion.csv",
                        "eval/predictions.jsonl"}) {
    const auto x = slurp(a / f), y = slurp(b / f);
    o.require(!x.empty() && x == y, std::string(f) + " differs");
    ++compared;
  }
  fs::remove_all(root);
  if (o.pass) o.detail = std::to_string(compared) + " report files byte-identical across two 50-step runs";
  return o;
}

}  // namespace

int main() {
  struct Gate {
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Gate> gates{
      {"AC1 rouge oracle equivalence", ac1_rouge_oracles},
      {"AC2 uncertainty combiner gradients", ac2_uncertainty_gradients},
      {"AC3 loss algebra", ac3_loss_algebra},
      {"AC4 shared encoder and gradient flow", ac4_shared_encoder},
      {"AC5 overfit sanity", ac5_overfit},
      {"AC6 paper fixture metrics", ac6_paper_fixtures},
      {"AC7 pipeline determinism", ac7_pipeline_determinism},
  };
  int failed = 0;
  for (const auto& g : gates) {
    Outcome o;
    try {
      o = g.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    if (!o.pass) ++failed;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", g.name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("SKIP AC8 pretrained integration run: no pretrained checkpoint in this build (non-gating)\n");
  return failed == 0 ? 0 : 1;
}
