#include "mtfc/objective.hpp"

#include <algorithm>
#include <cmath>

#include "mtfc/errors.hpp"

namespace mtfc::objective {

std::string to_string(FinalActivation a) { return a == FinalActivation::kSigmoid ? "sigmoid" : "none"; }

FinalActivation final_activation_from_string(const std::string& s) {
  if (s == "sigmoid") return FinalActivation::kSigmoid;
  if (s == "none") return FinalActivation::kNone;
  throw SchemaError("unknown classifier_final_activation '" + s + "'");
}

std::string to_string(LossMode m) { return m == LossMode::kStatic ? "static" : "uncertainty"; }

LossMode loss_mode_from_string(const std::string& s) {
  if (s == "static") return LossMode::kStatic;
  if (s == "uncertainty") return LossMode::kUncertainty;
  throw SchemaError("unknown loss_mode '" + s + "'");
}

void StaticWeights::validate() const {
  if (!std::isfinite(summary) || !std::isfinite(classification) || summary < 0.0 ||
      classification < 0.0 || summary + classification <= 0.0)
    throw ContractError("static weights must be finite, nonnegative and not both zero");
}

ClassWeights::ClassWeights(std::vector<double> weights) : weights_(std::move(weights)) {
  bool any_positive = false;
  for (double w : weights_) {
    if (!std::isfinite(w) || w < 0.0) throw ContractError("class weights must be finite and >= 0");
    any_positive = any_positive || w > 0.0;
  }
  if (!any_positive) throw ContractError("class weights need at least one positive entry");
}

ClassWeights ClassWeights::uniform(std::size_t num_classes) {
  return ClassWeights(std::vector<double>(num_classes, 1.0));
}

namespace {

// log Σ exp(row) computed stably.
double log_sum_exp(const double* row, std::size_t n) {
  double mx = row[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
  double s = 0.0;
  for (std::size_t j = 0; j < n; ++j) s += std::exp(row[j] - mx);
  return mx + std::log(s);
}

}  // namespace

double token_ce(std::span<const double> logits, std::size_t vocab, std::span<const int> targets,
                int pad_id, std::span<double> grad_out) {
  if (vocab == 0 || logits.size() != targets.size() * vocab)
    throw ContractError("token_ce: logits shape does not match targets");
  const bool want_grad = !grad_out.empty();
  if (want_grad && grad_out.size() != logits.size())
    throw ContractError("token_ce: gradient buffer size mismatch");

  std::size_t count = 0;
  for (int t : targets)
    if (t != pad_id) ++count;
  if (count == 0) throw DegenerateInputError("token_ce: every target position is padding");

  const double inv = 1.0 / static_cast<double>(count);
  double total = 0.0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    const int t = targets[r];
    if (t == pad_id) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= vocab)
      throw ContractError("token_ce: target id " + std::to_string(t) + " outside vocabulary");
    const double* row = logits.data() + r * vocab;
    const double lse = log_sum_exp(row, vocab);
    total += lse - row[t];
    if (want_grad) {
      double* g = grad_out.data() + r * vocab;
      for (std::size_t j = 0; j < vocab; ++j) g[j] = std::exp(row[j] - lse) * inv;
      g[t] -= inv;
    }
  }
  return total * inv;
}

WeightedCe class_weighted_ce(std::span<const double> scores, std::size_t num_classes,
                             std::span<const int> gold, const ClassWeights& weights,
                             FinalActivation activation, std::span<double> grad_out) {
  if (weights.size() != num_classes)
    throw ContractError("class_weighted_ce: " + std::to_string(weights.size()) +
                        " weights for " + std::to_string(num_classes) + " classes");
  if (num_classes == 0 || scores.size() != gold.size() * num_classes)
    throw ContractError("class_weighted_ce: scores shape does not match gold labels");
  const bool want_grad = !grad_out.empty();
  if (want_grad && grad_out.size() != scores.size())
    throw ContractError("class_weighted_ce: gradient buffer size mismatch");
  if (activation == FinalActivation::kSigmoid)
    for (double s : scores)
      if (!(s >= 0.0 && s <= 1.0))
        throw ContractError("class_weighted_ce: sigmoid scores must lie in [0, 1]");

  WeightedCe out;
  for (int g : gold) {
    if (g < 0 || static_cast<std::size_t>(g) >= num_classes)
      throw ContractError("class_weighted_ce: gold index " + std::to_string(g) + " out of range");
    out.weight_total += weights[static_cast<std::size_t>(g)];
  }
  if (out.weight_total <= 0.0)
    throw DegenerateInputError("class_weighted_ce: gold classes all carry zero weight");

  for (std::size_t r = 0; r < gold.size(); ++r) {
    const auto g = static_cast<std::size_t>(gold[r]);
    const double w = weights[g];
    const double* row = scores.data() + r * num_classes;
    const double lse = log_sum_exp(row, num_classes);
    out.sum += w * (lse - row[g]);
    if (want_grad) {
      const double c = w / out.weight_total;
      double* gr = grad_out.data() + r * num_classes;
      for (std::size_t j = 0; j < num_classes; ++j) gr[j] = c * std::exp(row[j] - lse);
      gr[g] -= c;
    }
  }
  out.mean = out.sum / out.weight_total;
  return out;
}

double combine_static(double loss_summ, double loss_cl, const StaticWeights& weights) {
  return weights.summary * loss_summ + weights.classification * loss_cl;
}

UncertaintyValue combine_uncertainty(double loss_summ, double loss_cl,
                                     const UncertaintyState& state) {
  const double coef_cl = 0.5 * std::exp(-2.0 * state.log_sigma_cl);
  const double coef_summ = 0.5 * std::exp(-2.0 * state.log_sigma_summ);
  UncertaintyValue v;
  // With both log-sigmas at 0 this sums the same products as combine_static
  // at (0.5, 0.5), so the two agree bit for bit.
  v.total = (coef_summ * loss_summ + coef_cl * loss_cl) +
            (state.log_sigma_summ + state.log_sigma_cl);
  v.d_loss_summ = coef_summ;
  v.d_loss_cl = coef_cl;
  v.d_log_sigma_summ = 1.0 - 2.0 * coef_summ * loss_summ;
  v.d_log_sigma_cl = 1.0 - 2.0 * coef_cl * loss_cl;
  return v;
}

// ---------------------------------------------------------------------------

ag::Var token_ce(const ag::Var& logits, std::span<const int> targets, int pad_id) {
  std::vector<double> grad(ag::grad_enabled() && logits->requires_grad ? logits->size() : 0);
  const double loss = token_ce(logits->value, logits->cols, targets, pad_id, grad);
  return ag::make_result(1, 1, {loss}, {logits}, [logits, grad](ag::Node& self) {
    auto& g = logits->ensure_grad();
    const double up = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += up * grad[i];
  });
}

ag::Var class_weighted_ce(const ag::Var& scores, std::span<const int> gold,
                          const ClassWeights& weights, FinalActivation activation) {
  std::vector<double> grad(ag::grad_enabled() && scores->requires_grad ? scores->size() : 0);
  const auto ce = class_weighted_ce(scores->value, scores->cols, gold, weights, activation, grad);
  return ag::make_result(1, 1, {ce.mean}, {scores}, [scores, grad](ag::Node& self) {
    auto& g = scores->ensure_grad();
    const double up = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += up * grad[i];
  });
}

ag::Var combine_static(const ag::Var& loss_summ, const ag::Var& loss_cl,
                       const StaticWeights& weights) {
  weights.validate();
  const double total = combine_static(loss_summ->scalar(), loss_cl->scalar(), weights);
  return ag::make_result(1, 1, {total}, {loss_summ, loss_cl},
                         [loss_summ, loss_cl, weights](ag::Node& self) {
                           if (loss_summ->requires_grad)
                             loss_summ->ensure_grad()[0] += weights.summary * self.grad[0];
                           if (loss_cl->requires_grad)
                             loss_cl->ensure_grad()[0] += weights.classification * self.grad[0];
                         });
}

ag::Var combine_uncertainty(const ag::Var& loss_summ, const ag::Var& loss_cl,
                            const ag::Var& log_sigma_cl, const ag::Var& log_sigma_summ) {
  const UncertaintyState state{log_sigma_cl->scalar(), log_sigma_summ->scalar()};
  const auto v = combine_uncertainty(loss_summ->scalar(), loss_cl->scalar(), state);
  return ag::make_result(
      1, 1, {v.total}, {loss_summ, loss_cl, log_sigma_cl, log_sigma_summ},
      [loss_summ, loss_cl, log_sigma_cl, log_sigma_summ, v](ag::Node& self) {
        const double up = self.grad[0];
        if (loss_summ->requires_grad) loss_summ->ensure_grad()[0] += up * v.d_loss_summ;
        if (loss_cl->requires_grad) loss_cl->ensure_grad()[0] += up * v.d_loss_cl;
        if (log_sigma_cl->requires_grad) log_sigma_cl->ensure_grad()[0] += up * v.d_log_sigma_cl;
        if (log_sigma_summ->requires_grad)
          log_sigma_summ->ensure_grad()[0] += up * v.d_log_sigma_summ;
      });
}

}  // namespace mtfc::objective
