#pragma once

// Multi-task model: one shared encoder whose output feeds both a summary
// decoder (teacher-forced logits or generation) and a two-layer
// classification head.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtfc/autograd.hpp"
#include "mtfc/objective.hpp"
#include "mtfc/tokenizer.hpp"

namespace mtfc::backbone {

using objective::FinalActivation;

enum class Pooling { kMaskedMean, kFirstToken };

struct BackboneConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t attention_heads = 4;
  std::size_t ffn_dim = 0;  // 0 -> 4 * d_model
  std::size_t max_source_len = 128;
  std::size_t max_target_len = 48;
  std::size_t classifier_hidden_dim = 128;
  std::size_t num_classes = 4;
  double dropout = 0.1;
  std::optional<double> backbone_dropout;  // defaults to `dropout`
  FinalActivation classifier_final_activation = FinalActivation::kSigmoid;
  Pooling pooling = Pooling::kMaskedMean;

  std::size_t effective_ffn_dim() const { return ffn_dim == 0 ? 4 * d_model : ffn_dim; }
  double effective_backbone_dropout() const { return backbone_dropout.value_or(dropout); }
  /// Throws SchemaError when an invariant fails.
  void validate() const;
  bool operator==(const BackboneConfig&) const = default;
};

nlohmann::json to_json(const BackboneConfig& c);
BackboneConfig backbone_config_from_json(const nlohmann::json& j);

struct ForwardContext {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // required when training with dropout > 0
};

/// Token ids packed as [batch × len] with 1/0 masks.
struct EncodedBatch {
  std::size_t batch = 0;
  std::size_t source_len = 0;
  std::size_t target_len = 0;
  std::vector<int> source_ids;
  std::vector<std::uint8_t> source_mask;
  std::vector<int> decoder_input_ids;  // <s> + target[:-1]
  std::vector<int> target_ids;         // target tokens + </s>, padded
  std::vector<std::uint8_t> target_mask;
  std::vector<int> labels;

  bool has_targets() const { return target_len > 0; }
};

struct TextExample {
  std::string source;
  std::optional<std::string> target;
  int label = -1;
};

/// Tokenizes and pads. Sources are truncated to max_source_len (ending in
/// </s>); targets to max_target_len including </s>.
EncodedBatch make_batch(const Tokenizer& tokenizer, std::span<const TextExample> examples,
                        const BackboneConfig& config);

struct EncoderOutput {
  ag::Var hidden;  // [batch*len × d_model]
  std::vector<std::uint8_t> mask;
  std::size_t batch = 0;
  std::size_t len = 0;
};

struct GenerationConfig {
  enum class Strategy { kGreedy, kBeam };
  std::size_t max_len = 48;
  Strategy strategy = Strategy::kGreedy;
  std::size_t beam_width = 4;
};

nlohmann::json to_json(const GenerationConfig& c);
GenerationConfig generation_config_from_json(const nlohmann::json& j);

/// Encoder-decoder backend contract.
class ModelBackend {
 public:
  virtual ~ModelBackend() = default;

  virtual std::shared_ptr<const EncoderOutput> encode(const EncodedBatch& batch,
                                                      const ForwardContext& ctx) = 0;
  /// Teacher-forced logits [batch*target_len × vocab].
  virtual ag::Var decode_logits(const EncoderOutput& encoded,
                                std::span<const int> decoder_input_ids, std::size_t target_len,
                                const ForwardContext& ctx) = 0;
  /// Token ids per row, excluding <s> and </s>. Halts at </s> or max_len.
  virtual std::vector<std::vector<int>> generate(const EncoderOutput& encoded,
                                                 const GenerationConfig& config);
  virtual std::vector<ag::Var> parameters() const = 0;
  virtual std::size_t d_model() const = 0;
  virtual std::size_t vocab_size() const = 0;
  /// Longest decoder input the backend accepts.
  virtual std::size_t max_target_len() const = 0;
};

/// Greedy and beam decoding on top of ModelBackend::decode_logits.
std::vector<std::vector<int>> greedy_decode(ModelBackend& backend, const EncoderOutput& encoded,
                                            std::size_t max_len);
std::vector<int> beam_decode_row(ModelBackend& backend, const EncoderOutput& encoded,
                                 std::size_t row, std::size_t max_len, std::size_t beam_width);

/// The small from-scratch transformer used for tests and desk-scale runs:
/// pre-norm (RMS) encoder/decoder blocks, learned positional embeddings,
/// ReLU feed-forward layers, untied output projection.
class TinyTransformer final : public ModelBackend {
 public:
  TinyTransformer(const BackboneConfig& config, std::mt19937_64& rng);

  std::shared_ptr<const EncoderOutput> encode(const EncodedBatch& batch,
                                              const ForwardContext& ctx) override;
  ag::Var decode_logits(const EncoderOutput& encoded, std::span<const int> decoder_input_ids,
                        std::size_t target_len, const ForwardContext& ctx) override;
  std::vector<ag::Var> parameters() const override { return params_; }
  std::size_t d_model() const override { return config_.d_model; }
  std::size_t vocab_size() const override { return config_.vocab_size; }
  std::size_t max_target_len() const override { return config_.max_target_len; }

  const BackboneConfig& config() const { return config_; }
  /// Parameters whose name starts with "encoder." or "embed.".
  std::vector<ag::Var> encoder_parameters() const;
  std::vector<ag::Var> decoder_parameters() const;

 private:
  struct Attention {
    ag::Var q, k, v, o;
  };
  struct FeedForward {
    ag::Var w1, b1, w2, b2;
  };
  struct EncoderLayer {
    ag::Var norm1, norm2;
    Attention self_attn;
    FeedForward ffn;
  };
  struct DecoderLayer {
    ag::Var norm1, norm2, norm3;
    Attention self_attn, cross_attn;
    FeedForward ffn;
  };

  ag::Var add_param(std::size_t rows, std::size_t cols, std::vector<double> values,
                    std::string name);
  ag::Var attend(const Attention& a, const ag::Var& x, const ag::Var& memory,
                 std::span<const std::uint8_t> key_mask, const kernels::AttentionShape& shape);
  ag::Var feed_forward(const FeedForward& f, const ag::Var& x, const ForwardContext& ctx);
  ag::Var maybe_dropout(const ag::Var& x, const ForwardContext& ctx);

  BackboneConfig config_;
  std::vector<ag::Var> params_;
  ag::Var token_embedding_, encoder_pos_, decoder_pos_;
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
  ag::Var encoder_norm_, decoder_norm_, lm_head_, lm_bias_;
};

/// linear(d_model→m) → ReLU → dropout → linear(m→num_classes) → [sigmoid].
class ClassifierHead {
 public:
  ClassifierHead(std::size_t d_model, std::size_t hidden_dim, std::size_t num_classes,
                 std::mt19937_64& rng);
  ClassifierHead(ag::Var w1, ag::Var b1, ag::Var w2, ag::Var b2);

  std::vector<ag::Var> parameters() const { return {w1_, b1_, w2_, b2_}; }
  std::size_t input_dim() const { return w1_->rows; }
  std::size_t hidden_dim() const { return w1_->cols; }
  std::size_t num_classes() const { return w2_->cols; }

  const ag::Var& w1() const { return w1_; }
  const ag::Var& b1() const { return b1_; }
  const ag::Var& w2() const { return w2_; }
  const ag::Var& b2() const { return b2_; }

 private:
  ag::Var w1_, b1_, w2_, b2_;
};

/// Sequence → vector; masked mean by default.
ag::Var pool(const ag::Var& hidden, std::span<const std::uint8_t> mask, std::size_t batch,
             std::size_t len, Pooling pooling = Pooling::kMaskedMean);

ag::Var classify(const ag::Var& pooled, const ClassifierHead& head, double dropout,
                 const ForwardContext& ctx, FinalActivation final_activation);

struct MultiTaskOutput {
  ag::Var summary_logits;  // [batch*target_len × vocab], null without targets
  ag::Var class_scores;    // [batch × num_classes]
  ag::Var pooled;          // [batch × d_model]
  std::shared_ptr<const EncoderOutput> encoded;
};

struct HeadOptions {
  double dropout = 0.1;
  FinalActivation final_activation = FinalActivation::kSigmoid;
  Pooling pooling = Pooling::kMaskedMean;
};

/// One encoder pass shared by the decoder and the classification head.
MultiTaskOutput forward_multitask(const EncodedBatch& batch, ModelBackend& backend,
                                  const ClassifierHead& head, const HeadOptions& options,
                                  const ForwardContext& ctx);

struct GeneratedSummary {
  std::vector<int> ids;
  std::string text;
};

GeneratedSummary generate_summary(const std::string& model_input, ModelBackend& backend,
                                  const Tokenizer& tokenizer, const BackboneConfig& config,
                                  const GenerationConfig& generation);

}  // namespace mtfc::backbone
