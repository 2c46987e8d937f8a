#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "mtfc/backbone.hpp"
#include "mtfc/errors.hpp"
#include "mtfc/objective.hpp"

namespace {

using namespace mtfc;
using namespace mtfc::backbone;

Tokenizer tiny_tokenizer() {
  const std::vector<std::string> texts{
      "summarize: claim: vitamin c cures colds evidence: trials show no cure",
      "vitamin c does not cure colds", "walking lowers blood pressure", "true false"};
  return Tokenizer::build(texts);
}

BackboneConfig tiny_config(const Tokenizer& tok) {
  BackboneConfig c;
  c.vocab_size = tok.size();
  c.d_model = 8;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.attention_heads = 2;
  c.max_source_len = 16;
  c.max_target_len = 8;
  c.classifier_hidden_dim = 6;
  c.num_classes = 4;
  c.dropout = 0.0;
  return c;
}

std::vector<TextExample> examples() {
  return {{"summarize: claim: vitamin c cures colds evidence: trials show no cure",
           std::string("vitamin c does not cure colds"), 1},
          {"walking lowers blood pressure", std::string("walking lowers blood pressure"), 3}};
}

// Forwards to a real backend and counts calls.
class CountingBackend final : public ModelBackend {
 public:
  explicit CountingBackend(ModelBackend& inner) : inner_(inner) {}
  std::shared_ptr<const EncoderOutput> encode(const EncodedBatch& b,
                                              const ForwardContext& ctx) override {
    ++encode_calls;
    return inner_.encode(b, ctx);
  }
  ag::Var decode_logits(const EncoderOutput& e, std::span<const int> ids, std::size_t len,
                        const ForwardContext& ctx) override {
    ++decode_calls;
    return inner_.decode_logits(e, ids, len, ctx);
  }
  std::vector<ag::Var> parameters() const override { return inner_.parameters(); }
  std::size_t d_model() const override { return inner_.d_model(); }
  std::size_t vocab_size() const override { return inner_.vocab_size(); }
  std::size_t max_target_len() const override { return inner_.max_target_len(); }

  int encode_calls = 0;
  int decode_calls = 0;

 private:
  ModelBackend& inner_;
};

TEST(BackboneConfig, ValidationAndJson) {
  const auto tok = tiny_tokenizer();
  auto c = tiny_config(tok);
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(backbone_config_from_json(to_json(c)), c);
  c.backbone_dropout = 0.2;
  EXPECT_EQ(backbone_config_from_json(to_json(c)), c);
  EXPECT_EQ(c.effective_ffn_dim(), 32u);
  auto bad = c;
  bad.attention_heads = 3;
  EXPECT_THROW(bad.validate(), SchemaError);
  bad = c;
  bad.num_classes = 1;
  EXPECT_THROW(bad.validate(), SchemaError);
  bad = c;
  bad.dropout = 1.0;
  EXPECT_THROW(bad.validate(), SchemaError);
}

TEST(MakeBatch, PaddingTruncationAndShift) {
  const auto tok = tiny_tokenizer();
  auto c = tiny_config(tok);
  c.max_source_len = 5;
  const auto ex = examples();
  const auto b = make_batch(tok, ex, c);
  EXPECT_EQ(b.batch, 2u);
  EXPECT_EQ(b.source_len, 5u);
  EXPECT_EQ(b.source_ids[4], Tokenizer::kEos);
  ASSERT_EQ(b.target_len, 7u);  // 6 tokens + </s>
  EXPECT_EQ(b.decoder_input_ids[0], Tokenizer::kBos);
  for (std::size_t t = 0; t + 1 < b.target_len; ++t)
    EXPECT_EQ(b.decoder_input_ids[t + 1], b.target_ids[t]);
  EXPECT_EQ(b.target_ids[6], Tokenizer::kEos);
  // Second row: 4 tokens + </s>, then padding.
  EXPECT_EQ(b.target_ids[7 + 4], Tokenizer::kEos);
  EXPECT_EQ(b.target_mask[7 + 5], 0);
  EXPECT_EQ(b.labels, (std::vector<int>{1, 3}));

  std::vector<TextExample> no_target{{"walking", std::nullopt, 0}};
  EXPECT_FALSE(make_batch(tok, no_target, c).has_targets());
  EXPECT_THROW(make_batch(tok, std::span<const TextExample>(), c), ContractError);
}

TEST(MultiTask, OneEncoderPassFeedsBothHeads) {
  const auto tok = tiny_tokenizer();
  const auto c = tiny_config(tok);
  std::mt19937_64 rng(1);
  TinyTransformer model(c, rng);
  ClassifierHead head(c.d_model, c.classifier_hidden_dim, c.num_classes, rng);
  CountingBackend counting(model);
  const auto ex = examples();
  const auto b = make_batch(tok, ex, c);
  const auto out = forward_multitask(b, counting, head, {}, {});
  EXPECT_EQ(counting.encode_calls, 1);
  EXPECT_EQ(counting.decode_calls, 1);
  EXPECT_EQ(out.summary_logits->rows, b.batch * b.target_len);
  EXPECT_EQ(out.summary_logits->cols, tok.size());
  EXPECT_EQ(out.class_scores->rows, 2u);
  EXPECT_EQ(out.class_scores->cols, 4u);
  for (double s : out.class_scores->value) {
    EXPECT_GT(s, 0.0);
    EXPECT_LT(s, 1.0);
  }
}

double grad_norm(const std::vector<ag::Var>& params) {
  double s = 0;
  for (const auto& p : params)
    for (double g : p->grad) s += g * g;
  return std::sqrt(s);
}

struct Grads {
  double head, decoder, encoder;
};

Grads grads_for(objective::StaticWeights w) {
  const auto tok = tiny_tokenizer();
  const auto c = tiny_config(tok);
  std::mt19937_64 rng(2);
  TinyTransformer model(c, rng);
  ClassifierHead head(c.d_model, c.classifier_hidden_dim, c.num_classes, rng);
  const auto ex = examples();
  const auto b = make_batch(tok, ex, c);
  const auto out = forward_multitask(b, model, head, {}, {});
  std::vector<int> targets(b.target_ids);
  auto ls = objective::token_ce(out.summary_logits, targets, Tokenizer::kPad);
  auto lc = objective::class_weighted_ce(out.class_scores, b.labels,
                                         objective::ClassWeights::uniform(4),
                                         objective::FinalActivation::kSigmoid);
  ag::backward(objective::combine_static(ls, lc, w));
  std::vector<ag::Var> encoder_only;
  for (const auto& p : model.encoder_parameters())
    if (p->name.rfind("encoder.", 0) == 0) encoder_only.push_back(p);
  return {grad_norm(head.parameters()), grad_norm(model.decoder_parameters()),
          grad_norm(encoder_only)};
}

TEST(MultiTask, SummaryOnlyWeightsLeaveHeadWithoutGradient) {
  const auto g = grads_for({1.0, 0.0});
  EXPECT_EQ(g.head, 0.0);
  EXPECT_GT(g.decoder, 0.0);
  EXPECT_GT(g.encoder, 0.0);
}

TEST(MultiTask, ClassificationOnlyWeightsLeaveDecoderWithoutGradient) {
  const auto g = grads_for({0.0, 1.0});
  EXPECT_EQ(g.decoder, 0.0);
  EXPECT_GT(g.head, 0.0);
  EXPECT_GT(g.encoder, 0.0);
}

TEST(MultiTask, JointLossGradientMatchesFiniteDifferences) {
  const auto tok = tiny_tokenizer();
  const auto c = tiny_config(tok);
  std::mt19937_64 rng(3);
  TinyTransformer model(c, rng);
  ClassifierHead head(c.d_model, c.classifier_hidden_dim, c.num_classes, rng);
  const auto ex = examples();
  const auto b = make_batch(tok, ex, c);
  const std::vector<int> targets(b.target_ids);
  auto loss = [&] {
    const auto out = forward_multitask(b, model, head, {}, {});
    auto ls = objective::token_ce(out.summary_logits, targets, Tokenizer::kPad);
    auto lc = objective::class_weighted_ce(out.class_scores, b.labels,
                                           objective::ClassWeights({1, 1, 2.5, 7}),
                                           objective::FinalActivation::kSigmoid);
    return objective::combine_static(ls, lc, {0.5, 0.5});
  };
  auto params = model.parameters();
  for (const auto& p : head.parameters()) params.push_back(p);
  ag::backward(loss());
  std::mt19937_64 pick(4);
  for (const auto& p : params) {
    for (int trial = 0; trial < 3; ++trial) {
      const std::size_t i = pick() % p->value.size();
      const double orig = p->value[i];
      double up, down;
      {
        ag::NoGradGuard g;
        p->value[i] = orig + 1e-6;
        up = loss()->scalar();
        p->value[i] = orig - 1e-6;
        down = loss()->scalar();
      }
      p->value[i] = orig;
      const double num = (up - down) / 2e-6;
      EXPECT_NEAR(p->grad[i], num, 1e-6 * (1.0 + std::abs(num))) << p->name << "[" << i << "]";
    }
  }
}

TEST(MultiTask, DropoutOnlyInTrainingMode) {
  const auto tok = tiny_tokenizer();
  auto c = tiny_config(tok);
  c.dropout = 0.5;
  std::mt19937_64 rng(5);
  TinyTransformer model(c, rng);
  ClassifierHead head(c.d_model, c.classifier_hidden_dim, c.num_classes, rng);
  const auto ex = examples();
  const auto b = make_batch(tok, ex, c);
  HeadOptions opts;
  opts.dropout = 0.5;
  ag::NoGradGuard g;
  const auto e1 = forward_multitask(b, model, head, opts, {});
  const auto e2 = forward_multitask(b, model, head, opts, {});
  EXPECT_EQ(e1.class_scores->value, e2.class_scores->value);
  std::mt19937_64 drop(6);
  const auto t = forward_multitask(b, model, head, opts, {true, &drop});
  EXPECT_NE(t.class_scores->value, e1.class_scores->value);
  EXPECT_THROW(forward_multitask(b, model, head, opts, {true, nullptr}), ContractError);
}

TEST(Generation, GreedyIsDeterministicAndBounded) {
  const auto tok = tiny_tokenizer();
  const auto c = tiny_config(tok);
  std::mt19937_64 rng(7);
  TinyTransformer model(c, rng);
  GenerationConfig g;
  g.max_len = 5;
  const auto a = generate_summary(examples()[0].source, model, tok, c, g);
  const auto b = generate_summary(examples()[0].source, model, tok, c, g);
  EXPECT_EQ(a.ids, b.ids);
  EXPECT_LE(a.ids.size(), 5u);
  for (int id : a.ids) {
    EXPECT_NE(id, Tokenizer::kEos);
    EXPECT_NE(id, Tokenizer::kBos);
  }
  g.strategy = GenerationConfig::Strategy::kBeam;
  g.beam_width = 1;
  EXPECT_EQ(generate_summary(examples()[0].source, model, tok, c, g).ids, a.ids);
  g.beam_width = 3;
  EXPECT_LE(generate_summary(examples()[0].source, model, tok, c, g).ids.size(), 5u);
  EXPECT_EQ(generation_config_from_json(to_json(g)).beam_width, 3u);
}

}  // namespace
