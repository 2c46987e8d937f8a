#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mtfc/autograd.hpp"

namespace mtfc::objective {

enum class FinalActivation { kSigmoid, kNone };

std::string to_string(FinalActivation a);
FinalActivation final_activation_from_string(const std::string& s);

enum class LossMode { kStatic, kUncertainty };

std::string to_string(LossMode m);
LossMode loss_mode_from_string(const std::string& s);

/// Fixed task weights: total = summary * L_summ + classification * L_cl.
struct StaticWeights {
  double summary = 0.5;
  double classification = 0.5;

  /// Throws ContractError unless both are finite, nonnegative, and sum > 0.
  void validate() const;
  bool operator==(const StaticWeights&) const = default;
};

/// Learned log standard deviations, one per task.
struct UncertaintyState {
  double log_sigma_cl = 0.0;
  double log_sigma_summ = 0.0;
  bool operator==(const UncertaintyState&) const = default;
};

/// Per-class multipliers aligned with LabelSpace order.
class ClassWeights {
 public:
  ClassWeights() = default;
  explicit ClassWeights(std::vector<double> weights);
  static ClassWeights uniform(std::size_t num_classes);

  std::size_t size() const { return weights_.size(); }
  double operator[](std::size_t i) const { return weights_[i]; }
  const std::vector<double>& values() const { return weights_; }
  bool operator==(const ClassWeights&) const = default;

 private:
  std::vector<double> weights_;
};

/// Mean negative log-likelihood of `targets` under row-wise softmax of
/// `logits` [targets.size() × vocab], skipping positions equal to `pad_id`.
/// When `grad_out` is non-empty it receives d(mean)/d(logits).
double token_ce(std::span<const double> logits, std::size_t vocab, std::span<const int> targets,
                int pad_id, std::span<double> grad_out = {});

struct WeightedCe {
  double mean = 0.0;          // Σ w[gold]·nll / Σ w[gold]
  double sum = 0.0;           // Σ w[gold]·nll
  double weight_total = 0.0;  // Σ w[gold]
};

/// Class-weighted softmax cross-entropy over `scores` [gold.size() × C].
/// Scores are post-activation values; with kSigmoid they must lie in [0, 1]
/// and are fed to the softmax as logits. `grad_out` receives d(mean)/d(scores).
WeightedCe class_weighted_ce(std::span<const double> scores, std::size_t num_classes,
                             std::span<const int> gold, const ClassWeights& weights,
                             FinalActivation activation, std::span<double> grad_out = {});

double combine_static(double loss_summ, double loss_cl, const StaticWeights& weights);

struct UncertaintyValue {
  double total = 0.0;
  double d_loss_summ = 0.0;
  double d_loss_cl = 0.0;
  double d_log_sigma_summ = 0.0;
  double d_log_sigma_cl = 0.0;
};

/// exp(-2 s_c)/2 · L_cl + s_c + exp(-2 s_s)/2 · L_summ + s_s with partials.
UncertaintyValue combine_uncertainty(double loss_summ, double loss_cl,
                                     const UncertaintyState& state);

// Graph-building versions; gradients come from the scalar routines above.

ag::Var token_ce(const ag::Var& logits, std::span<const int> targets, int pad_id);
ag::Var class_weighted_ce(const ag::Var& scores, std::span<const int> gold,
                          const ClassWeights& weights, FinalActivation activation);
ag::Var combine_static(const ag::Var& loss_summ, const ag::Var& loss_cl,
                       const StaticWeights& weights);
ag::Var combine_uncertainty(const ag::Var& loss_summ, const ag::Var& loss_cl,
                            const ag::Var& log_sigma_cl, const ag::Var& log_sigma_summ);

}  // namespace mtfc::objective
