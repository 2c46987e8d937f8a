#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "mtfc/errors.hpp"
#include "mtfc/objective.hpp"

namespace {

using namespace mtfc;
using namespace mtfc::objective;

double nll(const std::vector<double>& row, int gold) {
  double z = 0;
  for (double x : row) z += std::exp(x);
  return std::log(z) - row[static_cast<std::size_t>(gold)];
}

TEST(TokenCe, MatchesHandComputedMeanAndSkipsPadding) {
  const std::vector<double> logits{1.0, 2.0, 0.5,   // target 1
                                   0.0, 0.0, 0.0,   // pad
                                   -1.0, 3.0, 2.0}; // target 2
  const std::vector<int> targets{1, 0, 2};
  const double expected = (nll({1.0, 2.0, 0.5}, 1) + nll({-1.0, 3.0, 2.0}, 2)) / 2.0;
  std::vector<double> grad(logits.size());
  EXPECT_NEAR(token_ce(logits, 3, targets, 0, grad), expected, 1e-12);
  for (std::size_t j = 3; j < 6; ++j) EXPECT_EQ(grad[j], 0.0);

  // Finite-difference check of the analytic gradient.
  for (std::size_t i = 0; i < logits.size(); ++i) {
    auto up = logits, down = logits;
    up[i] += 1e-6;
    down[i] -= 1e-6;
    const double num = (token_ce(up, 3, targets, 0) - token_ce(down, 3, targets, 0)) / 2e-6;
    EXPECT_NEAR(grad[i], num, 1e-7);
  }
}

TEST(TokenCe, DegenerateAndContractErrors) {
  const std::vector<double> logits(6, 0.0);
  const std::vector<int> pads{0, 0};
  EXPECT_THROW(token_ce(logits, 3, pads, 0), DegenerateInputError);
  const std::vector<int> oov{1, 7};
  EXPECT_THROW(token_ce(logits, 3, oov, 0), ContractError);
  const std::vector<int> wrong{1};
  EXPECT_THROW(token_ce(logits, 3, wrong, 0), ContractError);
}

TEST(ClassWeightedCe, WeightNormalizedMean) {
  const std::vector<double> scores{0.2, 0.9, 0.1, 0.4,
                                   0.7, 0.3, 0.6, 0.5,
                                   0.1, 0.1, 0.8, 0.2};
  const std::vector<int> gold{1, 0, 2};
  const ClassWeights w({7.0, 1.0, 2.5, 1.0});
  const double l0 = nll({0.2, 0.9, 0.1, 0.4}, 1), l1 = nll({0.7, 0.3, 0.6, 0.5}, 0),
               l2 = nll({0.1, 0.1, 0.8, 0.2}, 2);
  const auto ce = class_weighted_ce(scores, 4, gold, w, FinalActivation::kSigmoid);
  EXPECT_NEAR(ce.sum, 1.0 * l0 + 7.0 * l1 + 2.5 * l2, 1e-12);
  EXPECT_NEAR(ce.weight_total, 10.5, 1e-15);
  EXPECT_NEAR(ce.mean, ce.sum / 10.5, 1e-15);
}

TEST(ClassWeightedCe, UniformWeightsReduceToPlainMeanAndScaleInvariant) {
  const std::vector<double> scores{0.5, 0.2, 0.9, 0.1, 0.3, 0.4};
  const std::vector<int> gold{2, 0};
  const auto plain = class_weighted_ce(scores, 3, gold, ClassWeights::uniform(3),
                                       FinalActivation::kNone);
  EXPECT_NEAR(plain.mean, (nll({0.5, 0.2, 0.9}, 2) + nll({0.1, 0.3, 0.4}, 0)) / 2, 1e-12);
  const auto a = class_weighted_ce(scores, 3, gold, ClassWeights({1, 2, 3}),
                                   FinalActivation::kNone);
  const auto b = class_weighted_ce(scores, 3, gold, ClassWeights({10, 20, 30}),
                                   FinalActivation::kNone);
  EXPECT_NEAR(a.mean, b.mean, 1e-12);
}

TEST(ClassWeightedCe, GradientMatchesFiniteDifferences) {
  const std::vector<double> scores{0.2, 0.9, 0.1, 0.7, 0.3, 0.6};
  const std::vector<int> gold{1, 0};
  const ClassWeights w({3.0, 1.0, 2.0});
  std::vector<double> grad(scores.size());
  class_weighted_ce(scores, 3, gold, w, FinalActivation::kNone, grad);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    auto up = scores, down = scores;
    up[i] += 1e-6;
    down[i] -= 1e-6;
    const double num = (class_weighted_ce(up, 3, gold, w, FinalActivation::kNone).mean -
                        class_weighted_ce(down, 3, gold, w, FinalActivation::kNone).mean) /
                       2e-6;
    EXPECT_NEAR(grad[i], num, 1e-7);
  }
}

TEST(ClassWeightedCe, Preconditions) {
  const std::vector<double> scores{0.2, 1.5, 0.1, 0.7};
  const std::vector<int> gold{1, 0};
  EXPECT_THROW(class_weighted_ce(scores, 2, gold, ClassWeights::uniform(2),
                                 FinalActivation::kSigmoid),
               ContractError);
  EXPECT_NO_THROW(class_weighted_ce(scores, 2, gold, ClassWeights::uniform(2),
                                    FinalActivation::kNone));
  EXPECT_THROW(class_weighted_ce(scores, 2, gold, ClassWeights::uniform(3),
                                 FinalActivation::kNone),
               ContractError);
  const std::vector<int> bad{1, 2};
  EXPECT_THROW(class_weighted_ce(scores, 2, bad, ClassWeights::uniform(2),
                                 FinalActivation::kNone),
               ContractError);
  const std::vector<int> only_zero{0, 0};
  EXPECT_THROW(class_weighted_ce(scores, 2, only_zero, ClassWeights({0.0, 1.0}),
                                 FinalActivation::kNone),
               DegenerateInputError);
}

TEST(ClassWeights, Validation) {
  EXPECT_THROW(ClassWeights({1.0, -1.0}), ContractError);
  EXPECT_THROW(ClassWeights({0.0, 0.0}), ContractError);
  EXPECT_THROW(ClassWeights({1.0, NAN}), ContractError);
  EXPECT_EQ(ClassWeights::uniform(3).values(), (std::vector<double>{1, 1, 1}));
}

TEST(Combine, StaticAndValidation) {
  EXPECT_DOUBLE_EQ(combine_static(2.0, 4.0, {0.3, 0.7}), 0.3 * 2.0 + 0.7 * 4.0);
  EXPECT_EQ(combine_static(2.0, 4.0, {1.0, 0.0}), 2.0);
  EXPECT_THROW((StaticWeights{0.0, 0.0}.validate()), ContractError);
  EXPECT_THROW((StaticWeights{-0.1, 1.0}.validate()), ContractError);
  EXPECT_THROW((StaticWeights{INFINITY, 1.0}.validate()), ContractError);
}

TEST(Combine, UncertaintyFormulaAndPartials) {
  const UncertaintyState s{0.3, -0.2};
  const double ls = 1.7, lc = 0.9;
  const auto v = combine_uncertainty(ls, lc, s);
  EXPECT_NEAR(v.total,
              std::exp(-0.6) / 2 * lc + 0.3 + std::exp(0.4) / 2 * ls - 0.2, 1e-12);
  const double h = 1e-6;
  auto total = [&](double a, double b, double sc, double ss) {
    return combine_uncertainty(a, b, {sc, ss}).total;
  };
  EXPECT_NEAR(v.d_loss_summ, (total(ls + h, lc, 0.3, -0.2) - total(ls - h, lc, 0.3, -0.2)) / (2 * h), 1e-7);
  EXPECT_NEAR(v.d_loss_cl, (total(ls, lc + h, 0.3, -0.2) - total(ls, lc - h, 0.3, -0.2)) / (2 * h), 1e-7);
  EXPECT_NEAR(v.d_log_sigma_cl, (total(ls, lc, 0.3 + h, -0.2) - total(ls, lc, 0.3 - h, -0.2)) / (2 * h), 1e-7);
  EXPECT_NEAR(v.d_log_sigma_summ, (total(ls, lc, 0.3, -0.2 + h) - total(ls, lc, 0.3, -0.2 - h)) / (2 * h), 1e-7);
}

TEST(Combine, UncertaintyAtZeroEqualsEqualStaticWeights) {
  for (double ls : {0.1, 1.3, 7.25})
    for (double lc : {0.2, 2.9})
      EXPECT_EQ(combine_uncertainty(ls, lc, {}).total, combine_static(ls, lc, {0.5, 0.5}));
}

TEST(Combine, GraphVersionsPropagateGradients) {
  auto ls = ag::parameter(1, 1, {1.2}, "ls");
  auto lc = ag::parameter(1, 1, {0.8}, "lc");
  auto sc = ag::parameter(1, 1, {0.1}, "sc");
  auto ss = ag::parameter(1, 1, {-0.3}, "ss");
  auto t = combine_uncertainty(ls, lc, sc, ss);
  ag::backward(t);
  const auto v = combine_uncertainty(1.2, 0.8, {0.1, -0.3});
  EXPECT_EQ(ls->grad[0], v.d_loss_summ);
  EXPECT_EQ(lc->grad[0], v.d_loss_cl);
  EXPECT_EQ(sc->grad[0], v.d_log_sigma_cl);
  EXPECT_EQ(ss->grad[0], v.d_log_sigma_summ);

  ag::zero_grad(std::vector<ag::Var>{ls, lc});
  auto st = combine_static(ls, lc, {1.0, 0.0});
  ag::backward(st);
  EXPECT_EQ(ls->grad[0], 1.0);
  EXPECT_EQ(lc->grad[0], 0.0);
}

TEST(Enums, StringRoundTrip) {
  EXPECT_EQ(loss_mode_from_string(to_string(LossMode::kUncertainty)), LossMode::kUncertainty);
  EXPECT_EQ(final_activation_from_string(to_string(FinalActivation::kNone)),
            FinalActivation::kNone);
  EXPECT_THROW(loss_mode_from_string("dynamic"), SchemaError);
}

}  // namespace
