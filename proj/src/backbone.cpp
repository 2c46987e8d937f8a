#include "mtfc/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mtfc/errors.hpp"

namespace mtfc::backbone {

using nlohmann::json;

void BackboneConfig::validate() const {
  auto fail = [](const std::string& msg) { throw SchemaError("backbone config: " + msg); };
  if (vocab_size == 0 || d_model == 0 || encoder_layers == 0 || decoder_layers == 0 ||
      attention_heads == 0 || max_source_len == 0 || max_target_len == 0)
    fail("all dimensions must be positive");
  if (d_model % attention_heads != 0) fail("d_model must be divisible by attention_heads");
  if (classifier_hidden_dim == 0) fail("classifier_hidden_dim must be positive");
  if (num_classes < 2) fail("num_classes must be >= 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (backbone_dropout && !(*backbone_dropout >= 0.0 && *backbone_dropout < 1.0))
    fail("backbone_dropout must lie in [0, 1)");
}

json to_json(const BackboneConfig& c) {
  json j{{"vocab_size", c.vocab_size},
         {"d_model", c.d_model},
         {"encoder_layers", c.encoder_layers},
         {"decoder_layers", c.decoder_layers},
         {"attention_heads", c.attention_heads},
         {"ffn_dim", c.ffn_dim},
         {"max_source_len", c.max_source_len},
         {"max_target_len", c.max_target_len},
         {"classifier_hidden_dim", c.classifier_hidden_dim},
         {"num_classes", c.num_classes},
         {"dropout", c.dropout},
         {"classifier_final_activation", objective::to_string(c.classifier_final_activation)},
         {"pooling", c.pooling == Pooling::kMaskedMean ? "mean" : "first"}};
  j["backbone_dropout"] = c.backbone_dropout ? json(*c.backbone_dropout) : json(nullptr);
  return j;
}

BackboneConfig backbone_config_from_json(const json& j) {
  try {
    BackboneConfig c;
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.d_model = j.value("d_model", c.d_model);
    c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
    c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
    c.attention_heads = j.value("attention_heads", c.attention_heads);
    c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
    c.max_source_len = j.value("max_source_len", c.max_source_len);
    c.max_target_len = j.value("max_target_len", c.max_target_len);
    c.classifier_hidden_dim = j.value("classifier_hidden_dim", c.classifier_hidden_dim);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.dropout = j.value("dropout", c.dropout);
    if (auto it = j.find("backbone_dropout"); it != j.end() && !it->is_null())
      c.backbone_dropout = it->get<double>();
    c.classifier_final_activation = objective::final_activation_from_string(
        j.value("classifier_final_activation", std::string("sigmoid")));
    const auto pooling = j.value("pooling", std::string("mean"));
    if (pooling == "mean") c.pooling = Pooling::kMaskedMean;
    else if (pooling == "first") c.pooling = Pooling::kFirstToken;
    else throw SchemaError("unknown pooling '" + pooling + "'");
    return c;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("bad backbone config: ") + e.what());
  }
}

json to_json(const GenerationConfig& c) {
  return json{{"max_len", c.max_len},
              {"strategy", c.strategy == GenerationConfig::Strategy::kGreedy ? "greedy" : "beam"},
              {"beam_width", c.beam_width}};
}

GenerationConfig generation_config_from_json(const json& j) {
  GenerationConfig c;
  c.max_len = j.value("max_len", c.max_len);
  const auto s = j.value("strategy", std::string("greedy"));
  if (s == "greedy") c.strategy = GenerationConfig::Strategy::kGreedy;
  else if (s == "beam") c.strategy = GenerationConfig::Strategy::kBeam;
  else throw SchemaError("unknown generation strategy '" + s + "'");
  c.beam_width = j.value("beam_width", c.beam_width);
  if (c.max_len == 0 || c.beam_width == 0)
    throw SchemaError("generation max_len and beam_width must be positive");
  return c;
}

// ---------------------------------------------------------------------------
// Batching

EncodedBatch make_batch(const Tokenizer& tokenizer, std::span<const TextExample> examples,
                        const BackboneConfig& config) {
  EncodedBatch b;
  b.batch = examples.size();
  if (b.batch == 0) throw ContractError("make_batch: empty batch");
  std::vector<std::vector<int>> sources, targets;
  bool any_target = false;
  for (const auto& ex : examples) {
    auto src = tokenizer.encode(ex.source);
    if (src.size() > config.max_source_len - 1) src.resize(config.max_source_len - 1);
    src.push_back(Tokenizer::kEos);
    b.source_len = std::max(b.source_len, src.size());
    sources.push_back(std::move(src));

    std::vector<int> tgt;
    if (ex.target) {
      tgt = tokenizer.encode(*ex.target);
      if (tgt.size() > config.max_target_len - 1) tgt.resize(config.max_target_len - 1);
      tgt.push_back(Tokenizer::kEos);
      any_target = true;
    }
    b.target_len = std::max(b.target_len, tgt.size());
    targets.push_back(std::move(tgt));
    b.labels.push_back(ex.label);
  }
  b.source_ids.assign(b.batch * b.source_len, Tokenizer::kPad);
  b.source_mask.assign(b.batch * b.source_len, 0);
  for (std::size_t r = 0; r < b.batch; ++r)
    for (std::size_t t = 0; t < sources[r].size(); ++t) {
      b.source_ids[r * b.source_len + t] = sources[r][t];
      b.source_mask[r * b.source_len + t] = 1;
    }
  if (!any_target) {
    b.target_len = 0;
    return b;
  }
  b.decoder_input_ids.assign(b.batch * b.target_len, Tokenizer::kPad);
  b.target_ids.assign(b.batch * b.target_len, Tokenizer::kPad);
  b.target_mask.assign(b.batch * b.target_len, 0);
  for (std::size_t r = 0; r < b.batch; ++r) {
    // Rows without a summary keep a lone <s> so the decoder input is valid.
    b.decoder_input_ids[r * b.target_len] = Tokenizer::kBos;
    for (std::size_t t = 0; t < targets[r].size(); ++t) {
      b.target_ids[r * b.target_len + t] = targets[r][t];
      b.target_mask[r * b.target_len + t] = 1;
      if (t + 1 < b.target_len) b.decoder_input_ids[r * b.target_len + t + 1] = targets[r][t];
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// Decoding

std::vector<std::vector<int>> ModelBackend::generate(const EncoderOutput& encoded,
                                                     const GenerationConfig& config) {
  if (config.strategy == GenerationConfig::Strategy::kBeam && config.beam_width > 1) {
    std::vector<std::vector<int>> out;
    for (std::size_t r = 0; r < encoded.batch; ++r)
      out.push_back(beam_decode_row(*this, encoded, r, config.max_len, config.beam_width));
    return out;
  }
  return greedy_decode(*this, encoded, config.max_len);
}

namespace {

EncoderOutput slice_row(const EncoderOutput& enc, std::size_t row) {
  EncoderOutput one;
  one.hidden = ag::slice_rows(enc.hidden, row * enc.len, (row + 1) * enc.len);
  one.mask.assign(enc.mask.begin() + static_cast<std::ptrdiff_t>(row * enc.len),
                  enc.mask.begin() + static_cast<std::ptrdiff_t>((row + 1) * enc.len));
  one.batch = 1;
  one.len = enc.len;
  return one;
}

// Log-probabilities of the last position of each row in `logits` [rows*len × V].
std::vector<double> last_log_probs(const ag::Var& logits, std::size_t row, std::size_t len) {
  const std::size_t v = logits->cols;
  const double* p = logits->value.data() + (row * len + len - 1) * v;
  double mx = *std::max_element(p, p + v);
  double s = 0.0;
  for (std::size_t j = 0; j < v; ++j) s += std::exp(p[j] - mx);
  const double lse = mx + std::log(s);
  std::vector<double> out(v);
  for (std::size_t j = 0; j < v; ++j) out[j] = p[j] - lse;
  return out;
}

}  // namespace

std::vector<std::vector<int>> greedy_decode(ModelBackend& backend, const EncoderOutput& encoded,
                                            std::size_t max_len) {
  ag::NoGradGuard no_grad;
  const std::size_t steps = std::min(max_len, backend.max_target_len());
  const std::size_t rows = encoded.batch;
  std::vector<std::vector<int>> out(rows);
  std::vector<bool> done(rows, false);
  std::vector<std::vector<int>> prefix(rows, std::vector<int>{Tokenizer::kBos});
  for (std::size_t step = 0; step < steps; ++step) {
    const std::size_t len = step + 1;
    std::vector<int> input(rows * len);
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(prefix[r].begin(), prefix[r].end(),
                input.begin() + static_cast<std::ptrdiff_t>(r * len));
    const auto logits = backend.decode_logits(encoded, input, len, ForwardContext{});
    bool all_done = true;
    for (std::size_t r = 0; r < rows; ++r) {
      if (done[r]) {
        prefix[r].push_back(Tokenizer::kPad);
        continue;
      }
      const double* p = logits->value.data() + (r * len + len - 1) * logits->cols;
      const int next = static_cast<int>(std::max_element(p, p + logits->cols) - p);
      prefix[r].push_back(next);
      if (next == Tokenizer::kEos) {
        done[r] = true;
      } else {
        out[r].push_back(next);
        all_done = false;
      }
    }
    if (all_done) break;
  }
  return out;
}

std::vector<int> beam_decode_row(ModelBackend& backend, const EncoderOutput& encoded,
                                 std::size_t row, std::size_t max_len, std::size_t beam_width) {
  ag::NoGradGuard no_grad;
  const auto one = slice_row(encoded, row);
  struct Beam {
    std::vector<int> ids;  // starts with <s>
    double score = 0.0;
    bool finished = false;
  };
  std::vector<Beam> beams{{{Tokenizer::kBos}, 0.0, false}};
  const std::size_t steps = std::min(max_len, backend.max_target_len());
  for (std::size_t step = 0; step < steps; ++step) {
    std::vector<Beam> candidates;
    for (const auto& beam : beams) {
      if (beam.finished) {
        candidates.push_back(beam);
        continue;
      }
      const auto logits = backend.decode_logits(one, beam.ids, beam.ids.size(), ForwardContext{});
      const auto lp = last_log_probs(logits, 0, beam.ids.size());
      std::vector<int> order(lp.size());
      for (std::size_t j = 0; j < order.size(); ++j) order[j] = static_cast<int>(j);
      std::partial_sort(order.begin(),
                        order.begin() + static_cast<std::ptrdiff_t>(
                                            std::min(beam_width, order.size())),
                        order.end(), [&](int a, int b) {
                          return lp[static_cast<std::size_t>(a)] > lp[static_cast<std::size_t>(b)] ||
                                 (lp[static_cast<std::size_t>(a)] == lp[static_cast<std::size_t>(b)] && a < b);
                        });
      for (std::size_t c = 0; c < std::min(beam_width, order.size()); ++c) {
        Beam next = beam;
        next.ids.push_back(order[c]);
        next.score += lp[static_cast<std::size_t>(order[c])];
        next.finished = order[c] == Tokenizer::kEos;
        candidates.push_back(std::move(next));
      }
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Beam& a, const Beam& b) { return a.score > b.score; });
    if (candidates.size() > beam_width) candidates.resize(beam_width);
    beams = std::move(candidates);
    if (std::all_of(beams.begin(), beams.end(), [](const Beam& b) { return b.finished; })) break;
  }
  std::vector<int> out;
  for (std::size_t i = 1; i < beams.front().ids.size(); ++i) {
    if (beams.front().ids[i] == Tokenizer::kEos) break;
    out.push_back(beams.front().ids[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// TinyTransformer

namespace {

std::vector<double> uniform_values(std::size_t n, double bound, std::mt19937_64& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = (2.0 * ag::uniform01(rng) - 1.0) * bound;
  return v;
}

std::vector<double> xavier(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return uniform_values(in * out, std::sqrt(6.0 / static_cast<double>(in + out)), rng);
}

}  // namespace

ag::Var TinyTransformer::add_param(std::size_t rows, std::size_t cols, std::vector<double> values,
                                   std::string name) {
  auto p = ag::parameter(rows, cols, std::move(values), std::move(name));
  params_.push_back(p);
  return p;
}

TinyTransformer::TinyTransformer(const BackboneConfig& config, std::mt19937_64& rng)
    : config_(config) {
  config_.validate();
  const std::size_t d = config_.d_model, ff = config_.effective_ffn_dim(), v = config_.vocab_size;
  auto ones = [d] { return std::vector<double>(d, 1.0); };
  auto attention_block = [&](const std::string& prefix) {
    Attention a;
    a.q = add_param(d, d, xavier(d, d, rng), prefix + ".q");
    a.k = add_param(d, d, xavier(d, d, rng), prefix + ".k");
    a.v = add_param(d, d, xavier(d, d, rng), prefix + ".v");
    a.o = add_param(d, d, xavier(d, d, rng), prefix + ".o");
    return a;
  };
  auto ffn_block = [&](const std::string& prefix) {
    FeedForward f;
    f.w1 = add_param(d, ff, xavier(d, ff, rng), prefix + ".w1");
    f.b1 = add_param(1, ff, std::vector<double>(ff, 0.0), prefix + ".b1");
    f.w2 = add_param(ff, d, xavier(ff, d, rng), prefix + ".w2");
    f.b2 = add_param(1, d, std::vector<double>(d, 0.0), prefix + ".b2");
    return f;
  };

  token_embedding_ = add_param(v, d, uniform_values(v * d, 1.0, rng), "embed.tokens");
  encoder_pos_ = add_param(config_.max_source_len, d,
                           uniform_values(config_.max_source_len * d, 0.5, rng), "encoder.pos");
  for (std::size_t l = 0; l < config_.encoder_layers; ++l) {
    const std::string p = "encoder." + std::to_string(l);
    EncoderLayer layer;
    layer.norm1 = add_param(1, d, ones(), p + ".norm1");
    layer.self_attn = attention_block(p + ".self_attn");
    layer.norm2 = add_param(1, d, ones(), p + ".norm2");
    layer.ffn = ffn_block(p + ".ffn");
    encoder_.push_back(std::move(layer));
  }
  encoder_norm_ = add_param(1, d, ones(), "encoder.final_norm");

  decoder_pos_ = add_param(config_.max_target_len, d,
                           uniform_values(config_.max_target_len * d, 0.5, rng), "decoder.pos");
  for (std::size_t l = 0; l < config_.decoder_layers; ++l) {
    const std::string p = "decoder." + std::to_string(l);
    DecoderLayer layer;
    layer.norm1 = add_param(1, d, ones(), p + ".norm1");
    layer.self_attn = attention_block(p + ".self_attn");
    layer.norm2 = add_param(1, d, ones(), p + ".norm2");
    layer.cross_attn = attention_block(p + ".cross_attn");
    layer.norm3 = add_param(1, d, ones(), p + ".norm3");
    layer.ffn = ffn_block(p + ".ffn");
    decoder_.push_back(std::move(layer));
  }
  decoder_norm_ = add_param(1, d, ones(), "decoder.final_norm");
  lm_head_ = add_param(d, v, xavier(d, v, rng), "decoder.lm_head");
  lm_bias_ = add_param(1, v, std::vector<double>(v, 0.0), "decoder.lm_bias");
}

std::vector<ag::Var> TinyTransformer::encoder_parameters() const {
  std::vector<ag::Var> out;
  for (const auto& p : params_)
    if (p->name.rfind("encoder.", 0) == 0 || p->name.rfind("embed.", 0) == 0) out.push_back(p);
  return out;
}

std::vector<ag::Var> TinyTransformer::decoder_parameters() const {
  std::vector<ag::Var> out;
  for (const auto& p : params_)
    if (p->name.rfind("decoder.", 0) == 0) out.push_back(p);
  return out;
}

ag::Var TinyTransformer::maybe_dropout(const ag::Var& x, const ForwardContext& ctx) {
  const double p = config_.effective_backbone_dropout();
  if (!ctx.training || p <= 0.0) return x;
  if (ctx.rng == nullptr) throw ContractError("training forward pass needs an rng for dropout");
  return ag::dropout(x, p, *ctx.rng);
}

ag::Var TinyTransformer::attend(const Attention& a, const ag::Var& x, const ag::Var& memory,
                                std::span<const std::uint8_t> key_mask,
                                const kernels::AttentionShape& shape) {
  const auto q = ag::matmul(x, a.q);
  const auto k = ag::matmul(memory, a.k);
  const auto v = ag::matmul(memory, a.v);
  return ag::matmul(ag::attention(q, k, v, key_mask, shape), a.o);
}

ag::Var TinyTransformer::feed_forward(const FeedForward& f, const ag::Var& x,
                                      const ForwardContext& ctx) {
  auto h = ag::relu(ag::add_row(ag::matmul(x, f.w1), f.b1));
  h = maybe_dropout(h, ctx);
  return ag::add_row(ag::matmul(h, f.w2), f.b2);
}

std::shared_ptr<const EncoderOutput> TinyTransformer::encode(const EncodedBatch& batch,
                                                             const ForwardContext& ctx) {
  const std::size_t len = batch.source_len;
  if (len == 0 || len > config_.max_source_len)
    throw ContractError("encode: source length outside [1, max_source_len]");
  std::vector<int> positions(batch.batch * len);
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i % len);

  auto x = ag::add(ag::embedding(token_embedding_, batch.source_ids),
                   ag::embedding(encoder_pos_, positions));
  x = maybe_dropout(x, ctx);
  const kernels::AttentionShape shape{batch.batch, len, len, config_.attention_heads,
                                      config_.d_model, false};
  for (const auto& layer : encoder_) {
    const auto h = ag::rms_norm(x, layer.norm1);
    x = ag::add(x, maybe_dropout(attend(layer.self_attn, h, h, batch.source_mask, shape), ctx));
    x = ag::add(x, maybe_dropout(feed_forward(layer.ffn, ag::rms_norm(x, layer.norm2), ctx), ctx));
  }
  auto out = std::make_shared<EncoderOutput>();
  out->hidden = ag::rms_norm(x, encoder_norm_);
  out->mask = batch.source_mask;
  out->batch = batch.batch;
  out->len = len;
  return out;
}

ag::Var TinyTransformer::decode_logits(const EncoderOutput& encoded,
                                       std::span<const int> decoder_input_ids,
                                       std::size_t target_len, const ForwardContext& ctx) {
  if (target_len == 0 || target_len > config_.max_target_len)
    throw ContractError("decode_logits: target length outside [1, max_target_len]");
  if (decoder_input_ids.size() != encoded.batch * target_len)
    throw ContractError("decode_logits: decoder input size does not match batch");
  std::vector<int> positions(decoder_input_ids.size());
  for (std::size_t i = 0; i < positions.size(); ++i)
    positions[i] = static_cast<int>(i % target_len);
  // Causal masking alone hides trailing padding from every real position.
  const std::vector<std::uint8_t> self_mask(decoder_input_ids.size(), 1);

  auto x = ag::add(ag::embedding(token_embedding_, decoder_input_ids),
                   ag::embedding(decoder_pos_, positions));
  x = maybe_dropout(x, ctx);
  const kernels::AttentionShape self_shape{encoded.batch, target_len, target_len,
                                           config_.attention_heads, config_.d_model, true};
  const kernels::AttentionShape cross_shape{encoded.batch, target_len, encoded.len,
                                            config_.attention_heads, config_.d_model, false};
  for (const auto& layer : decoder_) {
    const auto h = ag::rms_norm(x, layer.norm1);
    x = ag::add(x, maybe_dropout(attend(layer.self_attn, h, h, self_mask, self_shape), ctx));
    const auto h2 = ag::rms_norm(x, layer.norm2);
    x = ag::add(x, maybe_dropout(attend(layer.cross_attn, h2, encoded.hidden, encoded.mask,
                                        cross_shape),
                                 ctx));
    x = ag::add(x, maybe_dropout(feed_forward(layer.ffn, ag::rms_norm(x, layer.norm3), ctx), ctx));
  }
  return ag::add_row(ag::matmul(ag::rms_norm(x, decoder_norm_), lm_head_), lm_bias_);
}

// ---------------------------------------------------------------------------
// Head

ClassifierHead::ClassifierHead(std::size_t d_model, std::size_t hidden_dim,
                               std::size_t num_classes, std::mt19937_64& rng)
    : ClassifierHead(
          ag::parameter(d_model, hidden_dim, xavier(d_model, hidden_dim, rng), "head.w1"),
          ag::parameter(1, hidden_dim, std::vector<double>(hidden_dim, 0.0), "head.b1"),
          ag::parameter(hidden_dim, num_classes, xavier(hidden_dim, num_classes, rng), "head.w2"),
          ag::parameter(1, num_classes, std::vector<double>(num_classes, 0.0), "head.b2")) {}

ClassifierHead::ClassifierHead(ag::Var w1, ag::Var b1, ag::Var w2, ag::Var b2)
    : w1_(std::move(w1)), b1_(std::move(b1)), w2_(std::move(w2)), b2_(std::move(b2)) {
  if (b1_->rows != 1 || b1_->cols != w1_->cols || w2_->rows != w1_->cols || b2_->rows != 1 ||
      b2_->cols != w2_->cols)
    throw ContractError("classifier head parameter shapes are inconsistent");
}

ag::Var pool(const ag::Var& hidden, std::span<const std::uint8_t> mask, std::size_t batch,
             std::size_t len, Pooling pooling) {
  if (pooling == Pooling::kFirstToken) return ag::first_token_pool(hidden, batch, len);
  return ag::masked_mean_pool(hidden, mask, batch, len);
}

ag::Var classify(const ag::Var& pooled, const ClassifierHead& head, double dropout,
                 const ForwardContext& ctx, FinalActivation final_activation) {
  if (pooled->cols != head.input_dim())
    throw ContractError("classify: pooled dimension " + std::to_string(pooled->cols) +
                        " != head input " + std::to_string(head.input_dim()));
  auto h = ag::relu(ag::add_row(ag::matmul(pooled, head.w1()), head.b1()));
  if (ctx.training && dropout > 0.0) {
    if (ctx.rng == nullptr) throw ContractError("training forward pass needs an rng for dropout");
    h = ag::dropout(h, dropout, *ctx.rng);
  }
  auto scores = ag::add_row(ag::matmul(h, head.w2()), head.b2());
  if (final_activation == FinalActivation::kSigmoid) scores = ag::sigmoid(scores);
  return scores;
}

MultiTaskOutput forward_multitask(const EncodedBatch& batch, ModelBackend& backend,
                                  const ClassifierHead& head, const HeadOptions& options,
                                  const ForwardContext& ctx) {
  MultiTaskOutput out;
  out.encoded = backend.encode(batch, ctx);
  const EncoderOutput& enc = *out.encoded;
  if (batch.has_targets())
    out.summary_logits = backend.decode_logits(enc, batch.decoder_input_ids, batch.target_len, ctx);
  out.pooled = pool(enc.hidden, enc.mask, enc.batch, enc.len, options.pooling);
  out.class_scores = classify(out.pooled, head, options.dropout, ctx, options.final_activation);
  return out;
}

GeneratedSummary generate_summary(const std::string& model_input, ModelBackend& backend,
                                  const Tokenizer& tokenizer, const BackboneConfig& config,
                                  const GenerationConfig& generation) {
  ag::NoGradGuard no_grad;
  const TextExample ex{model_input, std::nullopt, 0};
  const auto batch = make_batch(tokenizer, std::span(&ex, 1), config);
  const auto enc = backend.encode(batch, ForwardContext{});
  GeneratedSummary out;
  out.ids = backend.generate(*enc, generation).front();
  out.text = tokenizer.decode(out.ids);
  return out;
}

}  // namespace mtfc::backbone
